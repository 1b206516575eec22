#include "tinv/evaluation.hpp"

#include <algorithm>
#include <json.hpp>

#include "tinv/bytes.hpp"
#include "tinv/manifest.hpp"
#include "tinv/rng.hpp"

namespace tinv {

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed, Index width)
    : seed_(seed), width_(width), conv1_(1, width / 2), conv2_(width / 2, width), conv3_(width, width) {
  Rng rng(seed);
  conv1_.init(rng);
  conv2_.init(rng);
  conv3_.init(rng);
}

Vector<double> RandomConvExtractor::extract(const Image& image) const {
  Image gray(Shape{1, image.height(), image.width()});
  gray.data() = image.data().colwise().mean();
  gray = resize_bilinear(gray, 64, 64);
  Tensor<float> h = image_to_latent(gray);
  h = nn::avg_pool2(nn::silu(conv1_.forward(h)));
  h = nn::avg_pool2(nn::silu(conv2_.forward(h)));
  h = nn::silu(conv3_.forward(h));
  Vector<double> f(feature_dim());
  f.head(width_) = h.data().rowwise().mean().cast<double>();
  f.tail(width_) = h.data().rowwise().maxCoeff().cast<double>();
  return f;
}

std::string RandomConvExtractor::id() const {
  return "random-conv-w" + std::to_string(width_) + "-seed" + std::to_string(seed_);
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name) {
  if (name == "toy" || name == "random-conv") return std::make_unique<RandomConvExtractor>();
  throw EvaluationError("unknown feature extractor '" + name + "' (available: toy)");
}

DenseMatrix<double> extract_features(const std::vector<Image>& images, const FeatureExtractor& extractor) {
  DenseMatrix<double> features(static_cast<Index>(images.size()), extractor.feature_dim());
  for (std::size_t i = 0; i < images.size(); ++i) {
    features.row(static_cast<Index>(i)) = extractor.extract(images[i]).transpose();
  }
  return features;
}

GaussianStats<double> compute_stats(const std::vector<Image>& images, const FeatureExtractor& extractor) {
  if (images.size() < 2) throw EvaluationError("compute_stats: need at least 2 images");
  return compute_stats<double>(extract_features(images, extractor));
}

std::string FidReport::to_json() const {
  nlohmann::json j{{"fid", fid},
                   {"n_real", n_real},
                   {"n_generated", n_generated},
                   {"extractor", extractor_id},
                   {"feature_dim", feature_dim}};
  return j.dump(2);
}

FidReport fid(const std::vector<Image>& real, const std::vector<Image>& generated,
              const FeatureExtractor& extractor) {
  if (real.empty() || generated.empty()) throw EvaluationError("fid: both image sets must be non-empty");
  FidReport report;
  report.fid = frechet_distance(compute_stats(real, extractor), compute_stats(generated, extractor));
  report.n_real = static_cast<Index>(real.size());
  report.n_generated = static_cast<Index>(generated.size());
  report.extractor_id = extractor.id();
  report.feature_dim = extractor.feature_dim();
  return report;
}

std::vector<Image> load_png_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw EvaluationError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Image> images;
  images.reserve(files.size());
  for (const auto& f : files) images.push_back(read_png(f));
  return images;
}

FidReport fid(const std::filesystem::path& real_manifest, const std::filesystem::path& generated_dir,
              const FeatureExtractor& extractor) {
  const DatasetManifest manifest = read_manifest(real_manifest);
  std::vector<Image> real;
  real.reserve(manifest.records.size());
  for (const auto& r : manifest.records) real.push_back(read_png(r.path));
  return fid(real, load_png_dir(generated_dir), extractor);
}

namespace {

constexpr char kStatsMagic[4] = {'F', 'I', 'D', 'S'};
constexpr std::uint16_t kStatsVersion = 1;

void put_string(bytes::Writer& w, const std::string& s) {
  if (s.size() > 0xFFFF) throw EvaluationError("string too long for stats cache");
  w.put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
  w.put_raw(s.data(), s.size());
}

std::string get_string(bytes::Reader& r) {
  std::string s(r.get<std::uint16_t>(), '\0');
  r.get_raw(s.data(), s.size());
  return s;
}

}  // namespace

void save_stats(const std::filesystem::path& path, const GaussianStats<double>& stats,
                const std::string& extractor_id, const std::string& source_hash) {
  bytes::Writer w;
  w.put_raw(kStatsMagic, 4);
  w.put<std::uint16_t>(kStatsVersion);
  put_string(w, extractor_id);
  put_string(w, source_hash);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(stats.dim()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(stats.n));
  w.put_raw(stats.mu.data(), sizeof(double) * static_cast<std::size_t>(stats.dim()));
  const RowMatrix<double> sigma = stats.sigma;
  w.put_raw(sigma.data(), sizeof(double) * static_cast<std::size_t>(sigma.size()));
  const std::string digest = bytes::sha256_hex(w.buffer().data(), w.buffer().size());
  w.put_raw(digest.data(), digest.size());
  bytes::write_file(path, w.buffer());
}

CachedStats load_stats(const std::filesystem::path& path) {
  const auto data = bytes::read_file(path);
  constexpr std::size_t kDigest = 64;
  try {
    if (data.size() < 4 + kDigest || !std::equal(kStatsMagic, kStatsMagic + 4, data.begin())) {
      throw EvaluationError("not a stats cache file: " + path.string());
    }
    const std::size_t body = data.size() - kDigest;
    const std::string digest(data.begin() + static_cast<std::ptrdiff_t>(body), data.end());
    if (digest != bytes::sha256_hex(data.data(), body)) {
      throw EvaluationError("stats cache checksum mismatch: " + path.string());
    }
    bytes::Reader r(data.data() + 4, body - 4);
    if (r.get<std::uint16_t>() != kStatsVersion) throw EvaluationError("unsupported stats cache version");
    CachedStats out;
    out.extractor_id = get_string(r);
    out.source_hash = get_string(r);
    const auto dim = static_cast<Index>(r.get<std::uint64_t>());
    out.stats.n = static_cast<Index>(r.get<std::uint64_t>());
    if (dim < 1 || static_cast<std::size_t>(dim) * (dim + 1) * sizeof(double) != r.remaining()) {
      throw EvaluationError("stats cache payload size mismatch");
    }
    out.stats.mu.resize(dim);
    r.get_raw(out.stats.mu.data(), sizeof(double) * static_cast<std::size_t>(dim));
    RowMatrix<double> sigma(dim, dim);
    r.get_raw(sigma.data(), sizeof(double) * static_cast<std::size_t>(sigma.size()));
    out.stats.sigma = sigma;
    return out;
  } catch (const bytes::Truncated&) {
    throw EvaluationError("stats cache truncated: " + path.string());
  }
}

}  // namespace tinv
