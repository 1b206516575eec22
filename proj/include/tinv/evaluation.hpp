#ifndef TINV_EVALUATION_HPP
#define TINV_EVALUATION_HPP

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinv/image.hpp"
#include "tinv/nn.hpp"
#include "tinv/tensor.hpp"

namespace tinv {

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct GaussianStats {
  Vector<Scalar> mu;
  DenseMatrix<Scalar> sigma;
  Index n = 0;

  Index dim() const { return mu.size(); }
};

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean and unbiased covariance of the rows of `features` (one sample per row).
template <typename Scalar>
GaussianStats<Scalar> compute_stats(const DenseMatrix<Scalar>& features) {
  if (features.rows() < 2) throw EvaluationError("compute_stats: need at least 2 samples");
  GaussianStats<Scalar> s;
  s.n = features.rows();
  s.mu = features.colwise().mean().transpose();
  const DenseMatrix<Scalar> centered = features.rowwise() - s.mu.transpose();
  s.sigma = (centered.transpose() * centered) / static_cast<Scalar>(s.n - 1);
  s.sigma = (Scalar(0.5) * (s.sigma + s.sigma.transpose())).eval();
  return s;
}

/// Trace of the principal square root of a * b for symmetric PSD a, b,
/// via the symmetric product sqrt(a) * b * sqrt(a), whose eigenvalues equal
/// those of a * b. Negative eigenvalues from round-off are clamped to 0.
template <typename Scalar>
Scalar trace_sqrt_product(const DenseMatrix<Scalar>& a, const DenseMatrix<Scalar>& b) {
  Eigen::SelfAdjointEigenSolver<DenseMatrix<Scalar>> ea(a);
  const Vector<Scalar> root = ea.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt();
  const DenseMatrix<Scalar> sqrt_a = ea.eigenvectors() * root.asDiagonal() * ea.eigenvectors().transpose();
  DenseMatrix<Scalar> m = sqrt_a * b * sqrt_a;
  m = (Scalar(0.5) * (m + m.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<DenseMatrix<Scalar>> em(m, Eigen::EigenvaluesOnly);
  return em.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt().sum();
}

/// ||mu_a - mu_b||^2 + Tr(sigma_a + sigma_b - 2 (sigma_a sigma_b)^{1/2}).
/// The trace term is averaged over both factor orders so the result is
/// exactly symmetric. Round-off can leave the sum slightly below zero
/// (at most ~1e-6 for unit-scale features); it is clamped to 0.
template <typename Scalar>
Scalar frechet_distance(const GaussianStats<Scalar>& a, const GaussianStats<Scalar>& b) {
  if (a.dim() != b.dim() || a.sigma.rows() != a.dim() || b.sigma.rows() != b.dim() ||
      a.sigma.cols() != a.dim() || b.sigma.cols() != b.dim()) {
    throw EvaluationError("frechet_distance: feature dimensions differ");
  }
  if (!a.mu.allFinite() || !b.mu.allFinite() || !a.sigma.allFinite() || !b.sigma.allFinite()) {
    throw EvaluationError("frechet_distance: non-finite statistics");
  }
  const Scalar mean_term = (a.mu - b.mu).squaredNorm();
  const Scalar cross = Scalar(0.5) * (trace_sqrt_product(a.sigma, b.sigma) + trace_sqrt_product(b.sigma, a.sigma));
  const Scalar d = mean_term + a.sigma.trace() + b.sigma.trace() - Scalar(2) * cross;
  return std::max(d, Scalar(0));
}

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual Vector<double> extract(const Image& image) const = 0;
  virtual Index feature_dim() const = 0;
  virtual std::string id() const = 0;
};

/// Frozen random convolutional features: the image is converted to gray,
/// resized to 64 x 64 and mapped to [-1, 1], passed through three
/// conv + SiLU + 2x pooling stages with seeded He-initialised weights, and
/// summarised by per-channel spatial mean and max.
class RandomConvExtractor : public FeatureExtractor {
 public:
  static constexpr std::uint64_t kDefaultSeed = 20240331;

  explicit RandomConvExtractor(std::uint64_t seed = kDefaultSeed, Index width = 32);

  Vector<double> extract(const Image& image) const override;
  Index feature_dim() const override { return 2 * width_; }
  std::string id() const override;

 private:
  std::uint64_t seed_;
  Index width_;
  nn::Conv2d<float> conv1_, conv2_, conv3_;
};

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name);

DenseMatrix<double> extract_features(const std::vector<Image>& images, const FeatureExtractor& extractor);

GaussianStats<double> compute_stats(const std::vector<Image>& images, const FeatureExtractor& extractor);

struct FidReport {
  double fid = 0.0;
  Index n_real = 0;
  Index n_generated = 0;
  std::string extractor_id;
  Index feature_dim = 0;

  std::string to_json() const;
};

FidReport fid(const std::vector<Image>& real, const std::vector<Image>& generated,
              const FeatureExtractor& extractor);

/// Real images from a manifest, generated images from every *.png in a
/// directory (sorted by name).
FidReport fid(const std::filesystem::path& real_manifest, const std::filesystem::path& generated_dir,
              const FeatureExtractor& extractor);

std::vector<Image> load_png_dir(const std::filesystem::path& dir);

/// Stats cache: "FIDS", u16 version, u16 id length, id, u16 source-hash
/// length, source hash, u64 dim, u64 n, f64 mu, f64 sigma (row-major), then
/// the 64-character hex SHA-256 of everything before it.
void save_stats(const std::filesystem::path& path, const GaussianStats<double>& stats,
                const std::string& extractor_id, const std::string& source_hash);

struct CachedStats {
  GaussianStats<double> stats;
  std::string extractor_id;
  std::string source_hash;
};

CachedStats load_stats(const std::filesystem::path& path);

}  // namespace tinv

#endif  // TINV_EVALUATION_HPP
