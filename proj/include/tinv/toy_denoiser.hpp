#ifndef TINV_TOY_DENOISER_HPP
#define TINV_TOY_DENOISER_HPP

#include <array>
#include <cmath>
#include <cstdint>

#include "tinv/diffusion.hpp"
#include "tinv/nn.hpp"

namespace tinv {

struct ToyDenoiserConfig {
  Index image_channels = 1;
  Index hidden = 32;
  Index context_dim = 32;
  double sigma_data = 0.5;
  std::uint64_t seed = 0;
};

template <typename Scalar>
struct ToyDenoiserParams {
  static constexpr std::size_t kContextLayers = 5;

  nn::Conv2d<Scalar> conv_in, conv_a, conv_b, conv_c, conv_d, conv_e, conv_out;
  // Per-channel bias injection of the pooled context, one map per activated layer.
  std::array<RowMatrix<Scalar>, kContextLayers> context_proj;

  template <typename F>
  void for_each_conv(F&& f) {
    for (auto* c : {&conv_in, &conv_a, &conv_b, &conv_c, &conv_d, &conv_e, &conv_out}) f(*c);
  }

  ToyDenoiserParams zeros_like() const {
    ToyDenoiserParams z{conv_in.zeros_like(), conv_a.zeros_like(), conv_b.zeros_like(), conv_c.zeros_like(),
                        conv_d.zeros_like(),  conv_e.zeros_like(), conv_out.zeros_like(), {}};
    for (std::size_t i = 0; i < kContextLayers; ++i)
      z.context_proj[i] = RowMatrix<Scalar>::Zero(context_proj[i].rows(), context_proj[i].cols());
    return z;
  }

  nn::ParamBlocks<Scalar> blocks() {
    nn::ParamBlocks<Scalar> out;
    for_each_conv([&](nn::Conv2d<Scalar>& c) { c.collect(out); });
    for (auto& p : context_proj) out.emplace_back(p.data(), static_cast<std::size_t>(p.size()));
    return out;
  }

  template <typename Other>
  ToyDenoiserParams<Other> cast() const {
    const auto conv = [](const nn::Conv2d<Scalar>& c) {
      nn::Conv2d<Other> o(c.in_channels, c.out_channels, c.kernel, c.dilation);
      o.weight = c.weight.template cast<Other>();
      o.bias = c.bias.template cast<Other>();
      return o;
    };
    ToyDenoiserParams<Other> out{conv(conv_in), conv(conv_a), conv(conv_b), conv(conv_c),
                                 conv(conv_d),  conv(conv_e), conv(conv_out), {}};
    for (std::size_t i = 0; i < kContextLayers; ++i) out.context_proj[i] = context_proj[i].template cast<Other>();
    return out;
  }
};

/// Desk-scale conditional epsilon-predictor, a three-level U-net.
///
///   in  = [c_in * x, log(sigma)/4, y-coord, x-coord]
///   e1  = silu(conv(in) + P0 c)                      full resolution, h channels
///   e2  = silu(conv(pool(e1)) + P1 c)                1/2, h
///   e3  = silu(conv(pool(e2)) + P2 c)                1/4, 2h
///   m   = e3 + silu(conv_dilated(e3) + P3 c)         1/4, 2h
///   g   = silu(conv(upsample(conv(m)) + e2) + P4 c)  1/2, h
///   F   = conv([upsample(g), e1])
///   eps = sigma / (sigma^2 + sd^2) * x - sd / sqrt(sigma^2 + sd^2) * F
///
/// `c` is the pooled conditioning vector (zero for the unconditional branch).
/// The output scaling makes F a unit-variance target at every noise level
/// (the network predicts noise at low sigma and the clean image at high sigma).
template <typename Scalar>
class ToyDenoiser final : public DenoiserBackbone<Scalar> {
 public:
  struct Cache {
    Shape input_shape{};
    RowMatrix<Scalar> cols_in, cols_a, cols_b, cols_c, cols_d, cols_e, cols_out;
    Tensor<Scalar> pre1, e1, pool1, pre2, e2, pool2, pre3, e3, pre_m, m, u2, pre_g, g;
    Shape cat_shape{};
    Vector<Scalar> context;
    double out_scale = 1.0;
  };

  ToyDenoiser() = default;
  explicit ToyDenoiser(ToyDenoiserConfig config) : config_(config) {
    const Index h = config.hidden, c = config.image_channels;
    params_.conv_in = nn::Conv2d<Scalar>(c + 3, h);
    params_.conv_a = nn::Conv2d<Scalar>(h, h);
    params_.conv_b = nn::Conv2d<Scalar>(h, 2 * h);
    params_.conv_c = nn::Conv2d<Scalar>(2 * h, 2 * h, 3, 2);
    params_.conv_d = nn::Conv2d<Scalar>(2 * h, h);
    params_.conv_e = nn::Conv2d<Scalar>(h, h);
    params_.conv_out = nn::Conv2d<Scalar>(2 * h, c);
    Rng rng(config.seed);
    params_.conv_in.init(rng);
    params_.conv_a.init(rng);
    params_.conv_b.init(rng);
    params_.conv_c.init(rng, 0.5);
    params_.conv_d.init(rng, 0.5);
    params_.conv_e.init(rng);
    params_.conv_out.init(rng, 0.5);
    const std::array<Index, ToyDenoiserParams<Scalar>::kContextLayers> widths{h, h, 2 * h, 2 * h, h};
    const double std = 1.0 / std::sqrt(static_cast<double>(config.context_dim));
    for (std::size_t l = 0; l < widths.size(); ++l) {
      auto& p = params_.context_proj[l];
      p = RowMatrix<Scalar>::Zero(widths[l], config.context_dim);
      for (Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<Scalar>(std * rng.normal());
    }
  }
  ToyDenoiser(ToyDenoiserConfig config, ToyDenoiserParams<Scalar> params)
      : config_(config), params_(std::move(params)) {}

  const ToyDenoiserConfig& config() const { return config_; }
  ToyDenoiserParams<Scalar>& params() { return params_; }
  const ToyDenoiserParams<Scalar>& params() const { return params_; }

  Index context_dim() const override { return config_.context_dim; }

  std::vector<std::span<const Scalar>> parameter_blocks() const override {
    auto blocks = const_cast<ToyDenoiserParams<Scalar>&>(params_).blocks();
    return {blocks.begin(), blocks.end()};
  }

  Tensor<Scalar> predict(const Tensor<Scalar>& noisy, double sigma,
                         const ConditioningVector<Scalar>& context) const override {
    return forward(noisy, sigma, context, nullptr);
  }

  Tensor<Scalar> predict_with_context_grad(
      const Tensor<Scalar>& noisy, double sigma, const ConditioningVector<Scalar>& context,
      const typename DenoiserBackbone<Scalar>::OutputGradFn& output_grad,
      Vector<Scalar>& d_context) const override {
    Cache cache;
    Tensor<Scalar> pred = forward(noisy, sigma, context, &cache);
    d_context = backward(cache, output_grad(pred), nullptr);
    return pred;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& noisy, double sigma,
                         const ConditioningVector<Scalar>& context, Cache* cache) const {
    if (noisy.channels() != config_.image_channels) {
      throw ShapeError("toy denoiser: expected " + std::to_string(config_.image_channels) +
                       " channels, got " + std::to_string(noisy.channels()));
    }
    if (noisy.height() % 4 != 0 || noisy.width() % 4 != 0) {
      throw ShapeError("toy denoiser: spatial dims must be multiples of 4");
    }
    if (context.dim() != config_.context_dim) throw ShapeError("toy denoiser: context dim mismatch");

    const double s = std::max(sigma, 1e-4);
    const double sd = config_.sigma_data;
    const double norm2 = s * s + sd * sd;
    const double c_in = 1.0 / std::sqrt(norm2);
    const Index C = config_.image_channels, H = noisy.height(), W = noisy.width();

    Tensor<Scalar> in(Shape{C + 3, H, W});
    in.data().topRows(C) = static_cast<Scalar>(c_in) * noisy.data();
    in.data().row(C).setConstant(static_cast<Scalar>(std::log(s) / 4.0));
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        in(C + 1, y, x) = static_cast<Scalar>(2.0 * (y + 0.5) / H - 1.0);
        in(C + 2, y, x) = static_cast<Scalar>(2.0 * (x + 0.5) / W - 1.0);
      }

    Cache local;
    Cache& k = cache ? *cache : local;
    k.input_shape = in.shape();
    k.context = context.data;
    k.out_scale = -sd / std::sqrt(norm2);
    const Vector<Scalar>& ctx = context.data;
    const auto inject = [&](Tensor<Scalar>& pre, std::size_t layer) {
      pre.data().colwise() += params_.context_proj[layer] * ctx;
    };

    k.pre1 = params_.conv_in.forward(in, &k.cols_in);
    inject(k.pre1, 0);
    k.e1 = nn::silu(k.pre1);

    k.pool1 = nn::avg_pool2(k.e1);
    k.pre2 = params_.conv_a.forward(k.pool1, &k.cols_a);
    inject(k.pre2, 1);
    k.e2 = nn::silu(k.pre2);

    k.pool2 = nn::avg_pool2(k.e2);
    k.pre3 = params_.conv_b.forward(k.pool2, &k.cols_b);
    inject(k.pre3, 2);
    k.e3 = nn::silu(k.pre3);

    k.pre_m = params_.conv_c.forward(k.e3, &k.cols_c);
    inject(k.pre_m, 3);
    k.m = nn::silu(k.pre_m);
    k.m.data() += k.e3.data();

    k.u2 = nn::upsample2(params_.conv_d.forward(k.m, &k.cols_d));
    k.u2.data() += k.e2.data();
    k.pre_g = params_.conv_e.forward(k.u2, &k.cols_e);
    inject(k.pre_g, 4);
    k.g = nn::silu(k.pre_g);

    const Tensor<Scalar> cat = nn::concat_channels(nn::upsample2(k.g), k.e1);
    k.cat_shape = cat.shape();
    Tensor<Scalar> out = params_.conv_out.forward(cat, &k.cols_out);
    out.data() *= static_cast<Scalar>(k.out_scale);
    out.data() += static_cast<Scalar>(s / norm2) * noisy.data();
    return out;
  }

  /// Backpropagates d(loss)/d(eps_hat). Accumulates parameter gradients into
  /// `grads` when non-null and returns d(loss)/d(context).
  Vector<Scalar> backward(const Cache& k, const Tensor<Scalar>& d_out,
                          ToyDenoiserParams<Scalar>* grads) const {
    const Index h = config_.hidden;
    Vector<Scalar> d_ctx = Vector<Scalar>::Zero(config_.context_dim);
    const auto g = [&](nn::Conv2d<Scalar> ToyDenoiserParams<Scalar>::*member) {
      return grads ? &(grads->*member) : nullptr;
    };

    const Tensor<Scalar> d_f(d_out.shape(), d_out.data() * static_cast<Scalar>(k.out_scale));
    const Tensor<Scalar> d_cat = params_.conv_out.backward(d_f, k.cols_out, k.cat_shape,
                                                           g(&ToyDenoiserParams<Scalar>::conv_out));
    const Shape full{h, k.cat_shape.height, k.cat_shape.width};
    const Tensor<Scalar> d_up(full, d_cat.data().topRows(h));
    Tensor<Scalar> d_e1(full, d_cat.data().bottomRows(h));

    const Tensor<Scalar> d_pre_g = nn::silu_backward(k.pre_g, nn::upsample2_backward(d_up));
    accumulate_context(k, 4, d_pre_g, d_ctx, grads);
    const Tensor<Scalar> d_u2 = params_.conv_e.backward(d_pre_g, k.cols_e, k.u2.shape(),
                                                        g(&ToyDenoiserParams<Scalar>::conv_e));
    Tensor<Scalar> d_e2 = d_u2;

    Tensor<Scalar> d_m = params_.conv_d.backward(nn::upsample2_backward(d_u2), k.cols_d, k.m.shape(),
                                                 g(&ToyDenoiserParams<Scalar>::conv_d));
    const Tensor<Scalar> d_pre_m = nn::silu_backward(k.pre_m, d_m);
    accumulate_context(k, 3, d_pre_m, d_ctx, grads);
    Tensor<Scalar> d_e3 = params_.conv_c.backward(d_pre_m, k.cols_c, k.e3.shape(),
                                                  g(&ToyDenoiserParams<Scalar>::conv_c));
    d_e3.data() += d_m.data();

    const Tensor<Scalar> d_pre3 = nn::silu_backward(k.pre3, d_e3);
    accumulate_context(k, 2, d_pre3, d_ctx, grads);
    const Tensor<Scalar> d_pool2 = params_.conv_b.backward(d_pre3, k.cols_b, k.pool2.shape(),
                                                           g(&ToyDenoiserParams<Scalar>::conv_b));
    d_e2.data() += nn::avg_pool2_backward(d_pool2, k.e2.shape()).data();

    const Tensor<Scalar> d_pre2 = nn::silu_backward(k.pre2, d_e2);
    accumulate_context(k, 1, d_pre2, d_ctx, grads);
    const Tensor<Scalar> d_pool1 = params_.conv_a.backward(d_pre2, k.cols_a, k.pool1.shape(),
                                                           g(&ToyDenoiserParams<Scalar>::conv_a));
    d_e1.data() += nn::avg_pool2_backward(d_pool1, k.e1.shape()).data();

    const Tensor<Scalar> d_pre1 = nn::silu_backward(k.pre1, d_e1);
    accumulate_context(k, 0, d_pre1, d_ctx, grads);
    params_.conv_in.backward(d_pre1, k.cols_in, k.input_shape, g(&ToyDenoiserParams<Scalar>::conv_in),
                             /*need_input_grad=*/false);
    return d_ctx;
  }

 private:
  void accumulate_context(const Cache& k, std::size_t layer, const Tensor<Scalar>& d_pre,
                          Vector<Scalar>& d_ctx, ToyDenoiserParams<Scalar>* grads) const {
    const Vector<Scalar> per_channel = d_pre.data().rowwise().sum();
    d_ctx.noalias() += params_.context_proj[layer].transpose() * per_channel;
    if (grads) grads->context_proj[layer].noalias() += per_channel * k.context.transpose();
  }

  ToyDenoiserConfig config_{};
  ToyDenoiserParams<Scalar> params_{};
};

}  // namespace tinv

#endif  // TINV_TOY_DENOISER_HPP
