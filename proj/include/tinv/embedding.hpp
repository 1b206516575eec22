#ifndef TINV_EMBEDDING_HPP
#define TINV_EMBEDDING_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinv/tensor.hpp"

namespace tinv {

inline constexpr int kMaxVectorsPerToken = 75;
inline constexpr std::uint16_t kEmbeddingFormatVersion = 1;

/// A learned pseudo-token: `n_vectors` rows of text-embedding space.
struct ConceptEmbedding {
  std::string name;
  RowMatrix<float> vectors;
  std::map<std::string, std::string> metadata;

  Index n_vectors() const { return vectors.rows(); }
  Index dim() const { return vectors.cols(); }
};

enum class EmbeddingInit { RandomNormal, CopyToken };

/// Random-normal(0, 0.02) rows, or every row copied from `source_token`.
ConceptEmbedding init_embedding(const std::string& name, int n_vectors, int dim,
                                std::uint64_t seed);
ConceptEmbedding init_embedding_from_token(const std::string& name, int n_vectors,
                                           const Vector<float>& source_token);

class EmbeddingFormatError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, VersionMismatch, Truncated, ChecksumMismatch, Invalid, Io };
  EmbeddingFormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// "TIEM" | u16 version | u16 name_len | name | u32 n_vectors | u32 dim |
// f32[n*dim] row-major | u32 crc32 of all preceding bytes. Little-endian.
std::vector<std::uint8_t> encode_embedding(const ConceptEmbedding& embedding);
ConceptEmbedding decode_embedding(const std::vector<std::uint8_t>& bytes);

void save_embedding(const ConceptEmbedding& embedding, const std::filesystem::path& path);
ConceptEmbedding load_embedding(const std::filesystem::path& path);

std::size_t serialized_embedding_size(const ConceptEmbedding& embedding);

}  // namespace tinv

#endif  // TINV_EMBEDDING_HPP
