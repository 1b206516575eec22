#include "tinv/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tinv/bytes.hpp"
#include "tinv/diffusion.hpp"
#include "tinv/rng.hpp"

namespace tinv {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ClassifierError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += avg_rank;
        ++n_pos;
      } else if (labels[order[k]] != 0) {
        throw ClassifierError("auc: labels must be 0 or 1");
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ClassifierError("auc: both classes must be present");
  const double p = static_cast<double>(n_pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(n_neg));
}

AugmentationSpec AugmentationSpec::none() {
  AugmentationSpec s;
  s.flip_p = s.noise_p = s.intensity_p = s.affine_p = s.channel_dropout_p = 0.0;
  return s;
}

std::string AugmentationSpec::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "flip_p=" << flip_p << ";noise_p=" << noise_p << ";noise_std_max=" << noise_std_max
     << ";intensity_p=" << intensity_p << ";gamma=" << gamma_lo << ".." << gamma_hi << ";affine_p=" << affine_p
     << ";translate_max=" << translate_max << ";scale=" << scale_lo << ".." << scale_hi
     << ";rotation_max_deg=" << rotation_max_deg << ";channel_dropout_p=" << channel_dropout_p;
  return os.str();
}

Image flip_horizontal(const Image& image) {
  Image out(image.shape());
  for (Index c = 0; c < image.channels(); ++c)
    for (Index y = 0; y < image.height(); ++y)
      for (Index x = 0; x < image.width(); ++x) out(c, y, x) = image(c, y, image.width() - 1 - x);
  return out;
}

namespace {

float sample_clamped(const Image& im, Index c, double y, double x) {
  const Index H = im.height(), W = im.width();
  y = std::clamp(y, 0.0, double(H - 1));
  x = std::clamp(x, 0.0, double(W - 1));
  const Index y0 = static_cast<Index>(std::floor(y)), x0 = static_cast<Index>(std::floor(x));
  const Index y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
  const double fy = y - y0, fx = x - x0;
  const double top = (1 - fx) * im(c, y0, x0) + fx * im(c, y0, x1);
  const double bottom = (1 - fx) * im(c, y1, x0) + fx * im(c, y1, x1);
  return static_cast<float>((1 - fy) * top + fy * bottom);
}

Image affine(const Image& image, double angle, double scale, double tx, double ty) {
  Image out(image.shape());
  const double cy = (image.height() - 1) / 2.0, cx = (image.width() - 1) / 2.0;
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (Index y = 0; y < image.height(); ++y)
    for (Index x = 0; x < image.width(); ++x) {
      // Inverse map: output pixel -> source location.
      const double u = x - cx - tx, v = y - cy - ty;
      const double sx = (ca * u + sa * v) / scale + cx;
      const double sy = (-sa * u + ca * v) / scale + cy;
      for (Index c = 0; c < image.channels(); ++c) out(c, y, x) = sample_clamped(image, c, sy, sx);
    }
  return out;
}

}  // namespace

Image augment(const Image& image, const AugmentationSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Image out = image;
  if (rng.bernoulli(spec.flip_p)) out = flip_horizontal(out);
  if (rng.bernoulli(spec.affine_p)) {
    const double angle = rng.uniform(-spec.rotation_max_deg, spec.rotation_max_deg) * std::numbers::pi / 180.0;
    const double scale = rng.uniform(spec.scale_lo, spec.scale_hi);
    const double tx = rng.uniform(-spec.translate_max, spec.translate_max) * image.width();
    const double ty = rng.uniform(-spec.translate_max, spec.translate_max) * image.height();
    out = affine(out, angle, scale, tx, ty);
  }
  if (rng.bernoulli(spec.intensity_p)) {
    const float gamma =
        static_cast<float>(std::exp(rng.uniform(std::log(spec.gamma_lo), std::log(spec.gamma_hi))));
    out.data() = (255.0f * (out.data().array() / 255.0f).max(0.0f).pow(gamma)).matrix();
  }
  if (rng.bernoulli(spec.noise_p)) {
    const double std = rng.uniform(0.0, spec.noise_std_max) * 255.0;
    out.data() += static_cast<float>(std) * rng.normal_field<float>(out.shape()).data();
    out.data() = out.data().cwiseMax(0.0f).cwiseMin(255.0f);
  }
  if (image.channels() > 1 && rng.bernoulli(spec.channel_dropout_p)) {
    out.data().row(rng.uniform_int(0, image.channels() - 1)).setZero();
  }
  return out;
}

void ClassifierConfig::validate() const {
  if (!(learning_rate > 0.0) || total_batches < 1 || batch_size < 1 || val_every < 1 || input_size < 8 ||
      input_size % 8 != 0 || width < 1) {
    throw ClassifierError("classifier config: counts and learning rate must be positive, input size a multiple of 8");
  }
}

std::string ClassifierConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "learning_rate=" << learning_rate << ";total_batches=" << total_batches << ";batch_size=" << batch_size
     << ";val_every=" << val_every << ";seed=" << seed << ";backbone=" << backbone << ";input_size=" << input_size
     << ";width=" << width << ";augmentation{" << augmentation.canonical() << "}";
  return os.str();
}

std::string ClassifierConfig::hash() const { return bytes::sha256_hex(canonical()); }

struct SmallCnn::Cache {
  RowMatrix<float> cols1, cols2, cols3;
  Shape in1, in2, in3;
  Tensor<float> p1, p2, p3, a1, a2, a3;
  Vector<float> feat;
  std::vector<Index> argmax;
};

nn::ParamBlocks<float> SmallCnn::Params::blocks() {
  nn::ParamBlocks<float> out;
  c1.collect(out);
  c2.collect(out);
  c3.collect(out);
  out.emplace_back(head.data(), static_cast<std::size_t>(head.size()));
  return out;
}

SmallCnn::SmallCnn(Index channels, Index width, double learning_rate, std::uint64_t seed)
    : width_(width), adam_({learning_rate}) {
  Rng rng(seed);
  params_.c1 = nn::Conv2d<float>(channels, width);
  params_.c2 = nn::Conv2d<float>(width, 2 * width);
  params_.c3 = nn::Conv2d<float>(2 * width, 2 * width);
  params_.c1.init(rng);
  params_.c2.init(rng);
  params_.c3.init(rng);
  params_.head = Vector<float>(4 * width + 1);
  for (Index i = 0; i < params_.head.size(); ++i) params_.head[i] = static_cast<float>(0.01 * rng.normal());
  params_.head[4 * width] = 0.0f;
}

float SmallCnn::forward(const Tensor<float>& x, Cache* cache) const {
  Cache local;
  Cache& k = cache ? *cache : local;
  k.in1 = x.shape();
  k.p1 = params_.c1.forward(x, &k.cols1);
  k.a1 = nn::silu(k.p1);
  const Tensor<float> q1 = nn::avg_pool2(k.a1);
  k.in2 = q1.shape();
  k.p2 = params_.c2.forward(q1, &k.cols2);
  k.a2 = nn::silu(k.p2);
  const Tensor<float> q2 = nn::avg_pool2(k.a2);
  k.in3 = q2.shape();
  k.p3 = params_.c3.forward(q2, &k.cols3);
  k.a3 = nn::silu(k.p3);
  const Index C = k.a3.channels();
  k.feat.resize(2 * C);
  k.argmax.resize(static_cast<std::size_t>(C));
  for (Index c = 0; c < C; ++c) {
    k.feat[c] = k.a3.data().row(c).mean();
    Index arg = 0;
    k.feat[C + c] = k.a3.data().row(c).maxCoeff(&arg);
    k.argmax[static_cast<std::size_t>(c)] = arg;
  }
  return params_.head.head(2 * C).dot(k.feat) + params_.head[2 * C];
}

double SmallCnn::logit(const Tensor<float>& input) const { return forward(input, nullptr); }

double SmallCnn::train_step(const std::vector<Tensor<float>>& inputs, const std::vector<int>& labels) {
  Params grads;
  grads.c1 = params_.c1.zeros_like();
  grads.c2 = params_.c2.zeros_like();
  grads.c3 = params_.c3.zeros_like();
  grads.head = Vector<float>::Zero(params_.head.size());
  const double inv_n = 1.0 / static_cast<double>(inputs.size());
  double loss = 0.0;
  Cache k;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double z = forward(inputs[i], &k);
    const double y = labels[i];
    loss += (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)))) * inv_n;
    const float dz = static_cast<float>((1.0 / (1.0 + std::exp(-z)) - y) * inv_n);

    const Index C = k.a3.channels();
    grads.head.head(2 * C) += dz * k.feat;
    grads.head[2 * C] += dz;
    Tensor<float> d_a3(k.a3.shape());
    const float inv_hw = 1.0f / static_cast<float>(k.a3.shape().pixels());
    for (Index c = 0; c < C; ++c) {
      d_a3.data().row(c).setConstant(dz * params_.head[c] * inv_hw);
      d_a3.data()(c, k.argmax[static_cast<std::size_t>(c)]) += dz * params_.head[C + c];
    }
    const Tensor<float> d_q2 = params_.c3.backward(nn::silu_backward(k.p3, d_a3), k.cols3, k.in3, &grads.c3);
    const Tensor<float> d_a2 = nn::avg_pool2_backward(d_q2, k.a2.shape());
    const Tensor<float> d_q1 = params_.c2.backward(nn::silu_backward(k.p2, d_a2), k.cols2, k.in2, &grads.c2);
    const Tensor<float> d_a1 = nn::avg_pool2_backward(d_q1, k.a1.shape());
    params_.c1.backward(nn::silu_backward(k.p1, d_a1), k.cols1, k.in1, &grads.c1, false);
  }
  if (!std::isfinite(loss)) throw NumericError("classifier loss became non-finite");
  auto g = grads.blocks();
  adam_.step(params_.blocks(), g);
  return loss;
}

std::vector<float> SmallCnn::state() const {
  std::vector<float> out;
  for (const auto& b : const_cast<Params&>(params_).blocks()) out.insert(out.end(), b.begin(), b.end());
  return out;
}

void SmallCnn::load_state(const std::vector<float>& state) {
  std::size_t pos = 0;
  for (auto& b : params_.blocks()) {
    if (pos + b.size() > state.size()) throw ClassifierError("classifier state has the wrong size");
    std::copy(state.begin() + static_cast<std::ptrdiff_t>(pos),
              state.begin() + static_cast<std::ptrdiff_t>(pos + b.size()), b.begin());
    pos += b.size();
  }
  if (pos != state.size()) throw ClassifierError("classifier state has the wrong size");
}

std::unique_ptr<ClassifierBackbone> make_backbone(const ClassifierConfig& config, Index channels) {
  if (config.backbone == "small-cnn") {
    return std::make_unique<SmallCnn>(channels, config.width, config.learning_rate, derive_seed(config.seed, 0));
  }
  throw ClassifierError("unknown classifier backbone '" + config.backbone + "' (available: small-cnn)");
}

void LabeledSet::add(Image image, int label, std::string id, bool is_synthetic) {
  images.push_back(std::move(image));
  labels.push_back(label);
  ids.push_back(std::move(id));
  synthetic.push_back(is_synthetic);
}

LabeledSet load_labeled_set(const std::vector<SliceRecord>& records) {
  LabeledSet set;
  for (const auto& r : records) set.add(read_png(r.path), r.label == Label::Positive ? 1 : 0, r.id, r.synthetic);
  return set;
}

DatasetManifest build_mix(const MixSpec& spec, const DatasetManifest& real, const DatasetManifest& synthetic,
                          std::uint64_t seed) {
  if (spec.n_real == 0 && spec.n_synthetic == 0) throw ClassifierError("mix needs real or synthetic cases");
  DatasetManifest out;
  out.name = "mix-real" + std::to_string(spec.n_real) + "-synth" + std::to_string(spec.n_synthetic);
  const auto draw = [&](const DatasetManifest& source, std::size_t n, bool is_synthetic, std::uint64_t stream) {
    for (const Label label : {Label::Negative, Label::Positive}) {
      auto pool = source.with_label(label);
      if (pool.size() < n) {
        throw ClassifierError("mix needs " + std::to_string(n) + " " + to_string(label) + " " +
                              (is_synthetic ? "synthetic" : "real") + " cases, source '" + source.name +
                              "' has " + std::to_string(pool.size()));
      }
      std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
      Rng rng(derive_seed(seed, stream + static_cast<std::uint64_t>(label)));
      std::shuffle(pool.begin(), pool.end(), rng.engine());
      for (std::size_t i = 0; i < n; ++i) {
        SliceRecord r = pool[i];
        r.split = Split::Train;
        r.synthetic = r.synthetic || is_synthetic;
        out.records.push_back(std::move(r));
      }
    }
  };
  if (spec.n_real > 0) draw(real, spec.n_real, false, 0);
  if (spec.n_synthetic > 0) draw(synthetic, spec.n_synthetic, true, 2);
  validate_splits(out);
  out.config_hash = bytes::sha256_hex(out.name + ";seed=" + std::to_string(seed) + ";real=" +
                                      manifest_hash(real) + ";synthetic=" +
                                      (spec.n_synthetic > 0 ? manifest_hash(synthetic) : std::string("none")));
  return out;
}

namespace {

Tensor<float> to_input(const Image& image, Index size) {
  return image_to_latent(resize_bilinear(image, size, size));
}

void require_disjoint(const LabeledSet& a, const LabeledSet& b, const std::string& what) {
  const std::set<std::string> ids(a.ids.begin(), a.ids.end());
  for (const auto& id : b.ids) {
    if (ids.count(id)) throw ClassifierError("split leak: case '" + id + "' appears in both " + what);
  }
}

}  // namespace

std::vector<double> score_set(const ClassifierBackbone& model, const LabeledSet& set, Index input_size) {
  std::vector<double> scores;
  scores.reserve(set.size());
  for (const auto& image : set.images) scores.push_back(model.logit(to_input(image, input_size)));
  return scores;
}

std::string TrainReport::to_json() const {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& [batch, value] : val_curve) curve.push_back({{"batch", batch}, {"val_auc", value}});
  nlohmann::json j{{"val_curve", curve},       {"best_batch", best_batch},
                   {"best_val_auc", best_val_auc}, {"test_auc", test_auc},
                   {"seed", seed},             {"config_hash", config_hash},
                   {"backbone", backbone},     {"n_train", n_train},
                   {"n_train_synthetic", n_train_synthetic}};
  return j.dump(2);
}

TrainReport train_classifier(const LabeledSet& train, const LabeledSet& val, const LabeledSet& test,
                             const ClassifierConfig& config, const ClassifierProgressFn& progress,
                             std::unique_ptr<ClassifierBackbone>* best_model) {
  config.validate();
  if (train.size() == 0 || val.size() == 0 || test.size() == 0) {
    throw ClassifierError("train, validation and test sets must be non-empty");
  }
  require_disjoint(train, val, "training and validation sets");
  require_disjoint(train, test, "training and test sets");
  require_disjoint(val, test, "validation and test sets");
  const auto n_pos = static_cast<std::size_t>(std::count(train.labels.begin(), train.labels.end(), 1));
  if (n_pos == 0 || n_pos == train.size()) throw ClassifierError("training set must contain both classes");

  const Index channels = train.images.front().channels();
  auto model = make_backbone(config, channels);
  std::vector<Image> resized;
  resized.reserve(train.size());
  for (const auto& im : train.images) {
    if (im.channels() != channels) throw ClassifierError("training images differ in channel count");
    resized.push_back(resize_bilinear(im, config.input_size, config.input_size));
  }

  TrainReport report;
  report.seed = config.seed;
  report.config_hash = config.hash();
  report.backbone = model->id();
  report.n_train = train.size();
  report.n_train_synthetic = static_cast<std::size_t>(std::count(train.synthetic.begin(), train.synthetic.end(), true));

  Rng order_rng(derive_seed(config.seed, 1));
  const std::uint64_t aug_stream = derive_seed(config.seed, 2);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::uint64_t drawn = 0;
  std::vector<float> best_state;
  report.best_val_auc = -1.0;

  for (int batch = 1; batch <= config.total_batches; ++batch) {
    std::vector<Tensor<float>> inputs;
    std::vector<int> labels;
    for (int i = 0; i < config.batch_size; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng.engine());
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      inputs.push_back(image_to_latent(augment(resized[idx], config.augmentation, derive_seed(aug_stream, drawn++))));
      labels.push_back(train.labels[idx]);
    }
    double loss = 0.0;
    try {
      loss = model->train_step(inputs, labels);
    } catch (const NumericError&) {
      throw NumericError("classifier loss became non-finite at batch " + std::to_string(batch), batch);
    }
    if (progress) progress(batch, loss);
    if (batch % config.val_every == 0 || batch == config.total_batches) {
      const double v = auc(score_set(*model, val, config.input_size), val.labels);
      report.val_curve.emplace_back(batch, v);
      if (v > report.best_val_auc) {
        report.best_val_auc = v;
        report.best_batch = batch;
        best_state = model->state();
      }
    }
  }
  model->load_state(best_state);
  report.test_auc = auc(score_set(*model, test, config.input_size), test.labels);
  if (best_model) *best_model = std::move(model);
  return report;
}

AucSummary summarize(const std::vector<double>& values) {
  AucSummary s;
  s.n = values.size();
  if (s.n == 0) throw ClassifierError("summarize: no values");
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (const double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

std::string study_table(const std::vector<StudyRow>& rows) {
  std::ostringstream os;
  os << "| Real cases | Synthetic cases | Test AUC |\n|---|---|---|\n";
  os.setf(std::ios::fixed);
  os.precision(3);
  for (const auto& r : rows) {
    os << "| " << r.real << " | " << r.synthetic << " | " << r.summary.mean << " ± " << r.summary.stddev << " |\n";
  }
  return os.str();
}

}  // namespace tinv
