#ifndef TINV_NN_HPP
#define TINV_NN_HPP

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "tinv/rng.hpp"
#include "tinv/tensor.hpp"

// Minimal layer kit for the desk-scale networks: same-padded 3x3 convolution
// (im2col + GEMM), SiLU, 2x average pooling, 2x nearest upsampling and Adam.
// Everything is templated on the scalar so the float networks can be checked
// against double-precision finite differences.

namespace tinv::nn {

template <typename Scalar>
using ParamBlocks = std::vector<std::span<Scalar>>;

/// Columns for a same-padded k x k convolution with the given dilation.
/// Row index is (c * k + ky) * k + kx.
template <typename Scalar>
RowMatrix<Scalar> im2col(const Tensor<Scalar>& x, Index kernel, Index dilation) {
  const Index H = x.height(), W = x.width(), C = x.channels();
  const Index pad = dilation * (kernel - 1) / 2;
  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(C * kernel * kernel, H * W);
  for (Index c = 0; c < C; ++c) {
    const Scalar* src = x.data().row(c).data();
    for (Index ky = 0; ky < kernel; ++ky) {
      const Index dy = ky * dilation - pad;
      for (Index kx = 0; kx < kernel; ++kx) {
        const Index dx = kx * dilation - pad;
        Scalar* dst = cols.row((c * kernel + ky) * kernel + kx).data();
        const Index x_lo = std::max<Index>(0, -dx), x_hi = std::min<Index>(W, W - dx);
        for (Index y = 0; y < H; ++y) {
          const Index sy = y + dy;
          if (sy < 0 || sy >= H || x_lo >= x_hi) continue;
          std::copy(src + sy * W + x_lo + dx, src + sy * W + x_hi + dx, dst + y * W + x_lo);
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatter-adds column gradients back onto the input grid.
template <typename Scalar>
Tensor<Scalar> col2im(const RowMatrix<Scalar>& cols, Shape shape, Index kernel, Index dilation) {
  const Index H = shape.height, W = shape.width;
  const Index pad = dilation * (kernel - 1) / 2;
  Tensor<Scalar> out(shape);
  for (Index c = 0; c < shape.channels; ++c) {
    Scalar* dst = out.data().row(c).data();
    for (Index ky = 0; ky < kernel; ++ky) {
      const Index dy = ky * dilation - pad;
      for (Index kx = 0; kx < kernel; ++kx) {
        const Index dx = kx * dilation - pad;
        const Scalar* src = cols.row((c * kernel + ky) * kernel + kx).data();
        const Index x_lo = std::max<Index>(0, -dx), x_hi = std::min<Index>(W, W - dx);
        for (Index y = 0; y < H; ++y) {
          const Index sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          for (Index xx = x_lo; xx < x_hi; ++xx) dst[sy * W + xx + dx] += src[y * W + xx];
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
struct Conv2d {
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 3;
  Index dilation = 1;
  RowMatrix<Scalar> weight;
  Vector<Scalar> bias;

  Conv2d() = default;
  Conv2d(Index in, Index out, Index k = 3, Index dil = 1)
      : in_channels(in), out_channels(out), kernel(k), dilation(dil),
        weight(RowMatrix<Scalar>::Zero(out, in * k * k)), bias(Vector<Scalar>::Zero(out)) {}

  /// He-style normal init scaled by `gain`.
  void init(Rng& rng, double gain = 1.0) {
    const double std = gain * std::sqrt(2.0 / static_cast<double>(weight.cols()));
    for (Index i = 0; i < weight.size(); ++i) weight.data()[i] = static_cast<Scalar>(std * rng.normal());
    bias.setZero();
  }

  Conv2d zeros_like() const { return Conv2d(in_channels, out_channels, kernel, dilation); }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, RowMatrix<Scalar>* cols_out = nullptr) const {
    if (x.channels() != in_channels) throw ShapeError("conv2d: unexpected input channels");
    RowMatrix<Scalar> cols = im2col(x, kernel, dilation);
    Tensor<Scalar> y(Shape{out_channels, x.height(), x.width()});
    y.data().noalias() = weight * cols;
    y.data().colwise() += bias;
    if (cols_out) *cols_out = std::move(cols);
    return y;
  }

  /// Accumulates parameter gradients into `grad` (if given) and returns the
  /// input gradient (empty tensor when `need_input_grad` is false).
  Tensor<Scalar> backward(const Tensor<Scalar>& dy, const RowMatrix<Scalar>& cols, Shape in_shape,
                          Conv2d* grad, bool need_input_grad = true) const {
    if (grad) {
      grad->weight.noalias() += dy.data() * cols.transpose();
      grad->bias += dy.data().rowwise().sum();
    }
    if (!need_input_grad) return {};
    RowMatrix<Scalar> dcols = weight.transpose() * dy.data();
    return col2im(dcols, in_shape, kernel, dilation);
  }

  void collect(ParamBlocks<Scalar>& out) {
    out.emplace_back(weight.data(), static_cast<std::size_t>(weight.size()));
    out.emplace_back(bias.data(), static_cast<std::size_t>(bias.size()));
  }
};

template <typename Scalar>
Tensor<Scalar> silu(const Tensor<Scalar>& x) {
  const auto a = x.data().array();
  return Tensor<Scalar>(x.shape(), (a / (Scalar(1) + (-a).exp())).matrix());
}

/// silu'(pre) * dy.
template <typename Scalar>
Tensor<Scalar> silu_backward(const Tensor<Scalar>& pre, const Tensor<Scalar>& dy) {
  const auto v = pre.data().array();
  const auto s = (Scalar(1) / (Scalar(1) + (-v).exp())).eval();
  return Tensor<Scalar>(pre.shape(),
                        (dy.data().array() * s * (Scalar(1) + v * (Scalar(1) - s))).matrix());
}

template <typename Scalar>
Tensor<Scalar> avg_pool2(const Tensor<Scalar>& x) {
  const Index H = x.height() / 2, W = x.width() / 2;
  Tensor<Scalar> y(Shape{x.channels(), H, W});
  for (Index c = 0; c < x.channels(); ++c)
    for (Index i = 0; i < H; ++i)
      for (Index j = 0; j < W; ++j)
        y(c, i, j) = Scalar(0.25) * (x(c, 2 * i, 2 * j) + x(c, 2 * i, 2 * j + 1) +
                                     x(c, 2 * i + 1, 2 * j) + x(c, 2 * i + 1, 2 * j + 1));
  return y;
}

template <typename Scalar>
Tensor<Scalar> avg_pool2_backward(const Tensor<Scalar>& dy, Shape in_shape) {
  Tensor<Scalar> dx(in_shape);
  for (Index c = 0; c < dy.channels(); ++c)
    for (Index i = 0; i < dy.height(); ++i)
      for (Index j = 0; j < dy.width(); ++j) {
        const Scalar g = Scalar(0.25) * dy(c, i, j);
        dx(c, 2 * i, 2 * j) = g;
        dx(c, 2 * i, 2 * j + 1) = g;
        dx(c, 2 * i + 1, 2 * j) = g;
        dx(c, 2 * i + 1, 2 * j + 1) = g;
      }
  return dx;
}

template <typename Scalar>
Tensor<Scalar> upsample2(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(Shape{x.channels(), x.height() * 2, x.width() * 2});
  for (Index c = 0; c < x.channels(); ++c)
    for (Index i = 0; i < y.height(); ++i)
      for (Index j = 0; j < y.width(); ++j) y(c, i, j) = x(c, i / 2, j / 2);
  return y;
}

template <typename Scalar>
Tensor<Scalar> upsample2_backward(const Tensor<Scalar>& dy) {
  Tensor<Scalar> dx(Shape{dy.channels(), dy.height() / 2, dy.width() / 2});
  for (Index c = 0; c < dy.channels(); ++c)
    for (Index i = 0; i < dy.height(); ++i)
      for (Index j = 0; j < dy.width(); ++j) dx(c, i / 2, j / 2) += dy(c, i, j);
  return dx;
}

/// Stacks channels of `a` on top of channels of `b`.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(Shape{1, a.height(), a.width()}, Shape{1, b.height(), b.width()},
                     "concat_channels");
  Tensor<Scalar> out(Shape{a.channels() + b.channels(), a.height(), a.width()});
  out.data().topRows(a.channels()) = a.data();
  out.data().bottomRows(b.channels()) = b.data();
  return out;
}

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam over an ordered list of parameter blocks; gradients are supplied in
/// the same block order.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  void step(const ParamBlocks<Scalar>& params, const ParamBlocks<Scalar>& grads) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
    }
    ++t_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t b = 0; b < params.size(); ++b) {
      auto& m = m_[b];
      auto& v = v_[b];
      for (std::size_t i = 0; i < params[b].size(); ++i) {
        const double g = static_cast<double>(grads[b][i]);
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        const double update =
            options_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.epsilon);
        params[b][i] = static_cast<Scalar>(static_cast<double>(params[b][i]) - update);
      }
    }
  }

  long steps() const { return t_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }

 private:
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace tinv::nn

#endif  // TINV_NN_HPP
