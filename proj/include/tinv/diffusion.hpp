#ifndef TINV_DIFFUSION_HPP
#define TINV_DIFFUSION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinv/rng.hpp"
#include "tinv/schedule.hpp"
#include "tinv/tensor.hpp"

namespace tinv {

/// Raised when a prediction or sampler state stops being finite.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what, int step = -1)
      : std::runtime_error(step >= 0 ? what + " (at sampling step " + std::to_string(step) + ")"
                                     : what),
        step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// Pooled text-conditioning vector. The unconditional value is a zero vector
/// carrying the flag, so backends can special-case it if they want to.
template <typename Scalar>
struct ConditioningVector {
  Vector<Scalar> data;
  bool unconditional = false;

  static ConditioningVector null(Index dim) { return {Vector<Scalar>::Zero(dim), true}; }
  Index dim() const { return data.size(); }
};

template <typename Scalar>
class DenoiserBackbone {
 public:
  virtual ~DenoiserBackbone() = default;

  /// Noise (epsilon) estimate for `noisy` at noise level `sigma`.
  virtual Tensor<Scalar> predict(const Tensor<Scalar>& noisy, double sigma,
                                 const ConditioningVector<Scalar>& context) const = 0;
  virtual Index context_dim() const = 0;
  virtual std::vector<std::span<const Scalar>> parameter_blocks() const = 0;

  using OutputGradFn = std::function<Tensor<Scalar>(const Tensor<Scalar>& prediction)>;

  /// Prediction plus the vector-Jacobian product w.r.t. the context:
  /// d_context = J_context^T output_grad(prediction). Parameters are not
  /// touched. Backends that cannot differentiate throw std::logic_error.
  virtual Tensor<Scalar> predict_with_context_grad(const Tensor<Scalar>& noisy, double sigma,
                                                   const ConditioningVector<Scalar>& context,
                                                   const OutputGradFn& output_grad,
                                                   Vector<Scalar>& d_context) const {
    (void)noisy, (void)sigma, (void)context, (void)output_grad, (void)d_context;
    throw std::logic_error("denoiser backend does not provide context gradients");
  }

  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen) { frozen_ = frozen; }

 private:
  bool frozen_ = false;
};

template <typename Scalar>
struct GuidanceTerm {
  ConditioningVector<Scalar> context;
  double weight = 1.0;
};

template <typename Scalar>
struct GuidanceSpec {
  std::vector<GuidanceTerm<Scalar>> terms;
  double cfg_scale = 2.0;
};

template <typename Scalar>
Tensor<Scalar> forward_diffuse(const Tensor<Scalar>& x0, double sigma, const Tensor<Scalar>& eps) {
  require_same_shape(x0.shape(), eps.shape(), "forward_diffuse");
  if (!(sigma >= 0.0)) throw std::invalid_argument("forward_diffuse: sigma must be >= 0");
  return Tensor<Scalar>(x0.shape(), x0.data() + static_cast<Scalar>(sigma) * eps.data());
}

struct AncestralSigmas {
  double up = 0.0;
  double down = 0.0;
};

inline AncestralSigmas ancestral_sigmas(double sigma_cur, double sigma_next) {
  if (!(sigma_cur > sigma_next) || !(sigma_next >= 0.0)) {
    throw std::invalid_argument("euler_ancestral_step: need sigma_cur > sigma_next >= 0");
  }
  const double next2 = sigma_next * sigma_next;
  const double up = std::sqrt(next2 * (sigma_cur * sigma_cur - next2) / (sigma_cur * sigma_cur));
  return {up, std::sqrt(std::max(0.0, next2 - up * up))};
}

template <typename Scalar>
Tensor<Scalar> euler_ancestral_step(const Tensor<Scalar>& x, double sigma_cur, double sigma_next,
                                    const Tensor<Scalar>& noise_pred,
                                    const Tensor<Scalar>& rng_noise) {
  require_same_shape(x.shape(), noise_pred.shape(), "euler_ancestral_step");
  require_same_shape(x.shape(), rng_noise.shape(), "euler_ancestral_step");
  const AncestralSigmas s = ancestral_sigmas(sigma_cur, sigma_next);
  Tensor<Scalar> out(x.shape(), x.data() + static_cast<Scalar>(s.down - sigma_cur) * noise_pred.data());
  if (s.up > 0.0) out.data() += static_cast<Scalar>(s.up) * rng_noise.data();
  return out;
}

/// Classifier-free guidance generalised to weighted concept terms:
/// e_u + cfg * sum_i w_i (e_i - e_u), evaluated in the algebraically equal
/// coefficient form (1 - cfg*sum w) e_u + sum (cfg*w_i) e_i so that the
/// single-term, unit-weight, unit-scale case reproduces e_1 exactly.
/// Zero-weight terms are dropped before any denoiser call.
template <typename Scalar>
Tensor<Scalar> guided_noise_prediction(const DenoiserBackbone<Scalar>& denoiser,
                                       const Tensor<Scalar>& x, double sigma,
                                       const GuidanceSpec<Scalar>& guidance) {
  if (guidance.terms.empty()) throw std::invalid_argument("guidance has no terms");
  if (!(guidance.cfg_scale >= 0.0) || !std::isfinite(guidance.cfg_scale)) {
    throw std::invalid_argument("cfg_scale must be finite and >= 0");
  }
  double weight_sum = 0.0;
  for (const auto& term : guidance.terms) {
    if (!std::isfinite(term.weight)) throw std::invalid_argument("guidance weight is not finite");
    weight_sum += term.weight;
  }

  const auto checked = [](Tensor<Scalar> t) {
    if (!t.all_finite()) throw NumericError("denoiser produced a non-finite prediction");
    return t;
  };

  const double uncond_coeff = 1.0 - guidance.cfg_scale * weight_sum;
  Tensor<Scalar> out(x.shape());
  if (uncond_coeff != 0.0) {
    const auto e_u = checked(
        denoiser.predict(x, sigma, ConditioningVector<Scalar>::null(denoiser.context_dim())));
    out.data() = static_cast<Scalar>(uncond_coeff) * e_u.data();
  }
  for (const auto& term : guidance.terms) {
    if (term.weight == 0.0 || guidance.cfg_scale == 0.0) continue;
    const auto e_i = checked(denoiser.predict(x, sigma, term.context));
    out.data() += static_cast<Scalar>(guidance.cfg_scale * term.weight) * e_i.data();
  }
  return out;
}

/// Called after each ancestral step with the step index and the sigma the
/// state now sits at; may rewrite the state in place.
template <typename Scalar>
using StepHook = std::function<void(int step, double sigma_next, Tensor<Scalar>& x)>;

/// Euler-ancestral loop from an explicit initial state. Draw order on `rng`:
/// one standard-normal field per step, drawn before the update.
template <typename Scalar>
Tensor<Scalar> sample_from(const DenoiserBackbone<Scalar>& denoiser, const NoiseSchedule& schedule,
                           const GuidanceSpec<Scalar>& guidance, Rng& rng, Tensor<Scalar> x,
                           const StepHook<Scalar>& hook = {}) {
  const auto& sig = schedule.sigmas();
  for (int i = 0; i < schedule.steps(); ++i) {
    try {
      const auto eps = guided_noise_prediction(denoiser, x, sig[i], guidance);
      const auto noise = rng.normal_field<Scalar>(x.shape());
      x = euler_ancestral_step(x, sig[i], sig[i + 1], eps, noise);
      if (hook) hook(i, sig[i + 1], x);
    } catch (const NumericError& e) {
      throw NumericError(e.what(), i);
    }
    if (!x.all_finite()) throw NumericError("sampler state became non-finite", i);
  }
  return x;
}

/// Draws x_T = sigma_max * N(0, I) from `seed` and runs the sampler.
template <typename Scalar>
Tensor<Scalar> sample(const DenoiserBackbone<Scalar>& denoiser, const NoiseSchedule& schedule,
                      const GuidanceSpec<Scalar>& guidance, std::uint64_t seed, Shape shape) {
  Rng rng(seed);
  Tensor<Scalar> x = rng.normal_field<Scalar>(shape);
  x.data() *= static_cast<Scalar>(schedule.sigma_max());
  return sample_from(denoiser, schedule, guidance, rng, std::move(x));
}

}  // namespace tinv

#endif  // TINV_DIFFUSION_HPP
