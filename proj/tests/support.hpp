#ifndef TINV_TESTS_SUPPORT_HPP
#define TINV_TESTS_SUPPORT_HPP

#include <atomic>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tinv/conditioner.hpp"
#include "tinv/diffusion.hpp"
#include "tinv/embedding.hpp"
#include "tinv/toy_denoiser.hpp"

namespace tinv::test {

/// Returns a fixed tensor per conditioning "slot": slot 0 is the
/// unconditional branch, slot k is the context whose first entry equals k.
class FixedStubDenoiser final : public DenoiserBackbone<float> {
 public:
  FixedStubDenoiser(Index context_dim, std::vector<Tensor<float>> outputs)
      : context_dim_(context_dim), outputs_(std::move(outputs)) {}

  Tensor<float> predict(const Tensor<float>&, double, const ConditioningVector<float>& c) const override {
    ++calls;
    const auto slot = c.unconditional ? 0 : static_cast<std::size_t>(c.data[0]);
    return outputs_.at(slot);
  }
  Index context_dim() const override { return context_dim_; }
  std::vector<std::span<const float>> parameter_blocks() const override { return {}; }

  static ConditioningVector<float> slot(Index dim, int k) {
    ConditioningVector<float> c{Vector<float>::Zero(dim), false};
    c.data[0] = static_cast<float>(k);
    return c;
  }

  mutable std::atomic<int> calls{0};

 private:
  Index context_dim_;
  std::vector<Tensor<float>> outputs_;
};

/// eps_hat = a * x + b * mean(context); smooth enough to sample with.
class LinearStubDenoiser final : public DenoiserBackbone<float> {
 public:
  LinearStubDenoiser(Index context_dim, float a, float b) : context_dim_(context_dim), a_(a), b_(b) {}

  Tensor<float> predict(const Tensor<float>& x, double sigma, const ConditioningVector<float>& c) const override {
    const float s = static_cast<float>(sigma);
    const float shift = c.unconditional ? 0.0f : b_ * c.data.mean();
    Tensor<float> out(x.shape(), (a_ * s / (s * s + 1.0f)) * x.data());
    out.data().array() += shift;
    return out;
  }
  Index context_dim() const override { return context_dim_; }
  std::vector<std::span<const float>> parameter_blocks() const override { return {}; }

 private:
  Index context_dim_;
  float a_, b_;
};

/// Returns eps + offset for the eps the test hands it via `set_eps`.
class EchoStubDenoiser final : public DenoiserBackbone<float> {
 public:
  explicit EchoStubDenoiser(Index context_dim, float offset) : context_dim_(context_dim), offset_(offset) {}
  void set_eps(Tensor<float> eps) { eps_ = std::move(eps); }

  Tensor<float> predict(const Tensor<float>&, double, const ConditioningVector<float>&) const override {
    Tensor<float> out = eps_;
    out.data().array() += offset_;
    return out;
  }
  Index context_dim() const override { return context_dim_; }
  std::vector<std::span<const float>> parameter_blocks() const override { return {}; }

 private:
  Index context_dim_;
  float offset_;
  Tensor<float> eps_;
};

class NanStubDenoiser final : public DenoiserBackbone<float> {
 public:
  explicit NanStubDenoiser(int fail_after) : fail_after_(fail_after) {}
  Tensor<float> predict(const Tensor<float>& x, double, const ConditioningVector<float>&) const override {
    Tensor<float> out(x.shape());
    if (calls_++ >= fail_after_) out.data()(0, 0) = std::numeric_limits<float>::quiet_NaN();
    return out;
  }
  Index context_dim() const override { return 4; }
  std::vector<std::span<const float>> parameter_blocks() const override { return {}; }

 private:
  int fail_after_;
  mutable int calls_ = 0;
};

inline Tensor<float> filled(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor<float> t = rng.normal_field<float>(shape);
  t.data() *= static_cast<float>(scale);
  return t;
}

inline ToyDenoiserConfig small_denoiser_config() {
  ToyDenoiserConfig c;
  c.image_channels = 1;
  c.hidden = 6;
  c.context_dim = 8;
  c.seed = 11;
  return c;
}

inline ToyConditioner small_conditioner(Index embedding_dim = 12, Index context_dim = 8) {
  return ToyConditioner({"a", "b", "c"}, embedding_dim, context_dim, 5);
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("tinv-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace tinv::test

#endif  // TINV_TESTS_SUPPORT_HPP
