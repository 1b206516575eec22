#ifndef TINV_CLASSIFIER_HPP
#define TINV_CLASSIFIER_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tinv/image.hpp"
#include "tinv/manifest.hpp"
#include "tinv/nn.hpp"

namespace tinv {

class ClassifierError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rank-based (Mann-Whitney) AUC; tied scores count one half.
double auc(std::span<const double> scores, std::span<const int> labels);

struct AugmentationSpec {
  double flip_p = 0.5;
  double noise_p = 0.5;
  double noise_std_max = 0.05;  // fraction of the 0..255 range
  double intensity_p = 0.5;
  double gamma_lo = 0.8;
  double gamma_hi = 1.25;
  double affine_p = 0.5;
  double translate_max = 0.1;  // fraction of the image side
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double rotation_max_deg = 10.0;
  double channel_dropout_p = 0.1;  // only for multi-channel images

  static AugmentationSpec none();
  std::string canonical() const;
};

/// Applies, in order: horizontal flip, affine (rotation, scale,
/// translation; bilinear with edge clamping), gamma, additive Gaussian noise
/// and single-channel dropout, each with its own probability. Deterministic
/// per (image, seed); the output stays within [0, 255].
Image augment(const Image& image, const AugmentationSpec& spec, std::uint64_t seed);

Image flip_horizontal(const Image& image);

struct ClassifierConfig {
  double learning_rate = 1e-4;
  int total_batches = 6250;
  int batch_size = 32;
  int val_every = 250;
  AugmentationSpec augmentation{};
  std::uint64_t seed = 0;
  std::string backbone = "small-cnn";
  Index input_size = 64;
  Index width = 16;

  void validate() const;
  std::string canonical() const;
  std::string hash() const;
};

/// Binary image classifier that can be trained batch by batch.
class ClassifierBackbone {
 public:
  virtual ~ClassifierBackbone() = default;
  virtual double logit(const Tensor<float>& input) const = 0;
  /// Mean binary cross-entropy over the batch; takes one optimizer step.
  virtual double train_step(const std::vector<Tensor<float>>& inputs, const std::vector<int>& labels) = 0;
  virtual std::vector<float> state() const = 0;
  virtual void load_state(const std::vector<float>& state) = 0;
  virtual std::string id() const = 0;
};

/// Three conv + SiLU + 2x pooling stages, global mean and max pooling, and
/// a linear head; trained with Adam on binary cross-entropy.
class SmallCnn final : public ClassifierBackbone {
 public:
  SmallCnn(Index channels, Index width, double learning_rate, std::uint64_t seed);

  double logit(const Tensor<float>& input) const override;
  double train_step(const std::vector<Tensor<float>>& inputs, const std::vector<int>& labels) override;
  std::vector<float> state() const override;
  void load_state(const std::vector<float>& state) override;
  std::string id() const override { return "small-cnn-w" + std::to_string(width_); }

 private:
  struct Params {
    nn::Conv2d<float> c1, c2, c3;
    Vector<float> head;  // 2 * width weights + bias
    nn::ParamBlocks<float> blocks();
  };
  struct Cache;
  float forward(const Tensor<float>& x, Cache* cache) const;

  Index width_;
  Params params_;
  nn::Adam<float> adam_;
};

std::unique_ptr<ClassifierBackbone> make_backbone(const ClassifierConfig& config, Index channels);

/// In-memory labelled image set; ids are case ids used by the leak guard.
struct LabeledSet {
  std::vector<Image> images;
  std::vector<int> labels;  // 1 = positive
  std::vector<std::string> ids;
  std::vector<bool> synthetic;

  std::size_t size() const { return images.size(); }
  void add(Image image, int label, std::string id, bool is_synthetic = false);
};

LabeledSet load_labeled_set(const std::vector<SliceRecord>& records);

struct MixSpec {
  std::size_t n_real = 0;       // per class
  std::size_t n_synthetic = 0;  // per class
};

/// Balanced training manifest with n_real real and n_synthetic synthetic
/// records per class, drawn by a seeded shuffle of each source; synthetic
/// records are flagged.
DatasetManifest build_mix(const MixSpec& spec, const DatasetManifest& real, const DatasetManifest& synthetic,
                          std::uint64_t seed);

struct TrainReport {
  std::vector<std::pair<int, double>> val_curve;  // (batch, validation AUC)
  int best_batch = 0;
  double best_val_auc = 0.0;
  double test_auc = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string backbone;
  std::size_t n_train = 0;
  std::size_t n_train_synthetic = 0;

  std::string to_json() const;
};

using ClassifierProgressFn = std::function<void(int batch, double loss)>;

/// Trains for total_batches, scoring the validation set every val_every
/// batches (and after the last batch); the best-validation weights are
/// restored and scored once on the test set. Shared case ids between
/// training and validation/test are a hard error. The restored model is
/// handed back through `best_model` when given.
TrainReport train_classifier(const LabeledSet& train, const LabeledSet& val, const LabeledSet& test,
                             const ClassifierConfig& config, const ClassifierProgressFn& progress = {},
                             std::unique_ptr<ClassifierBackbone>* best_model = nullptr);

std::vector<double> score_set(const ClassifierBackbone& model, const LabeledSet& set, Index input_size);

struct AucSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  std::size_t n = 0;
};

AucSummary summarize(const std::vector<double>& values);

struct StudyRow {
  std::string real;
  std::string synthetic;
  AucSummary summary;
};

/// Markdown table "| Real cases | Synthetic cases | Test AUC |" with
/// "mean ± std" cells.
std::string study_table(const std::vector<StudyRow>& rows);

}  // namespace tinv

#endif  // TINV_CLASSIFIER_HPP
