#include "tinv/embedding.hpp"

#include <cmath>

#include "tinv/bytes.hpp"
#include "tinv/rng.hpp"

namespace tinv {

namespace {

constexpr char kMagic[4] = {'T', 'I', 'E', 'M'};

void validate(const ConceptEmbedding& e) {
  if (e.n_vectors() < 1 || e.n_vectors() > kMaxVectorsPerToken) {
    throw std::invalid_argument("embedding must have between 1 and " +
                                std::to_string(kMaxVectorsPerToken) + " vectors, got " +
                                std::to_string(e.n_vectors()));
  }
  if (e.dim() < 1) throw std::invalid_argument("embedding dim must be positive");
  if (!e.vectors.allFinite()) throw std::invalid_argument("embedding has non-finite entries");
  if (e.name.size() > 0xFFFF) throw std::invalid_argument("embedding name too long");
}

}  // namespace

ConceptEmbedding init_embedding(const std::string& name, int n_vectors, int dim,
                                std::uint64_t seed) {
  if (n_vectors < 1 || n_vectors > kMaxVectorsPerToken) {
    throw std::invalid_argument("n_vectors must be in [1, " + std::to_string(kMaxVectorsPerToken) +
                                "], got " + std::to_string(n_vectors));
  }
  if (dim < 1) throw std::invalid_argument("dim must be positive");
  ConceptEmbedding e{name, RowMatrix<float>(n_vectors, dim), {}};
  Rng rng(seed);
  for (Index i = 0; i < e.vectors.size(); ++i) {
    e.vectors.data()[i] = static_cast<float>(0.02 * rng.normal());
  }
  e.metadata["init"] = "random-normal(0,0.02)";
  e.metadata["init_seed"] = std::to_string(seed);
  return e;
}

ConceptEmbedding init_embedding_from_token(const std::string& name, int n_vectors,
                                           const Vector<float>& source_token) {
  if (n_vectors < 1 || n_vectors > kMaxVectorsPerToken) {
    throw std::invalid_argument("n_vectors out of range");
  }
  ConceptEmbedding e{name, RowMatrix<float>(n_vectors, source_token.size()), {}};
  e.vectors.rowwise() = source_token.transpose();
  e.metadata["init"] = "copy-token";
  return e;
}

std::size_t serialized_embedding_size(const ConceptEmbedding& e) {
  return 4 + 2 + 2 + e.name.size() + 4 + 4 + 4 * static_cast<std::size_t>(e.vectors.size()) + 4;
}

std::vector<std::uint8_t> encode_embedding(const ConceptEmbedding& e) {
  validate(e);
  bytes::Writer w;
  w.put_raw(kMagic, 4);
  w.put<std::uint16_t>(kEmbeddingFormatVersion);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
  w.put_raw(e.name.data(), e.name.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(e.n_vectors()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(e.dim()));
  w.put_raw(e.vectors.data(), sizeof(float) * static_cast<std::size_t>(e.vectors.size()));
  const auto& buf = w.buffer();
  w.put<std::uint32_t>(bytes::crc32(buf.data(), buf.size()));
  return std::move(w.buffer());
}

ConceptEmbedding decode_embedding(const std::vector<std::uint8_t>& data) {
  using Kind = EmbeddingFormatError::Kind;
  bytes::Reader r(data.data(), data.size());
  try {
    char magic[4];
    r.get_raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) {
      throw EmbeddingFormatError(Kind::BadMagic, "not an embedding file (bad magic)");
    }
    const auto version = r.get<std::uint16_t>();
    if (version != kEmbeddingFormatVersion) {
      throw EmbeddingFormatError(Kind::VersionMismatch,
                                 "unsupported embedding format version " + std::to_string(version));
    }
    ConceptEmbedding e;
    e.name.resize(r.get<std::uint16_t>());
    r.get_raw(e.name.data(), e.name.size());
    const auto n = r.get<std::uint32_t>();
    const auto dim = r.get<std::uint32_t>();
    if (n < 1 || n > kMaxVectorsPerToken || dim < 1) {
      throw EmbeddingFormatError(Kind::Invalid, "embedding header has invalid shape");
    }
    const std::size_t payload = std::size_t{n} * dim * sizeof(float);
    if (r.remaining() < payload + 4) {
      throw EmbeddingFormatError(Kind::Truncated, "embedding payload is truncated");
    }
    e.vectors.resize(n, dim);
    r.get_raw(e.vectors.data(), payload);
    const std::size_t crc_offset = r.position();
    const auto stored = r.get<std::uint32_t>();
    if (stored != bytes::crc32(data.data(), crc_offset)) {
      throw EmbeddingFormatError(Kind::ChecksumMismatch, "embedding checksum mismatch");
    }
    if (r.remaining() != 0) throw EmbeddingFormatError(Kind::Invalid, "trailing bytes after embedding");
    return e;
  } catch (const bytes::Truncated&) {
    throw EmbeddingFormatError(Kind::Truncated, "embedding file is truncated");
  }
}

void save_embedding(const ConceptEmbedding& embedding, const std::filesystem::path& path) {
  bytes::write_file(path, encode_embedding(embedding));
}

ConceptEmbedding load_embedding(const std::filesystem::path& path) {
  std::vector<std::uint8_t> data;
  try {
    data = bytes::read_file(path);
  } catch (const std::runtime_error& e) {
    throw EmbeddingFormatError(EmbeddingFormatError::Kind::Io, e.what());
  }
  return decode_embedding(data);
}

}  // namespace tinv
