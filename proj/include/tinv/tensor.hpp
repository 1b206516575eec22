#ifndef TINV_TENSOR_HPP
#define TINV_TENSOR_HPP

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>

namespace tinv {

using Index = Eigen::Index;

struct Shape {
  Index channels = 0;
  Index height = 0;
  Index width = 0;

  Index pixels() const { return height * width; }
  Index size() const { return channels * height * width; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" +
           std::to_string(width);
  }
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense (channels, height, width) field. Storage is a row-major
/// channels x (height*width) matrix so a channel is a contiguous row and
/// convolutions reduce to a single GEMM over im2col columns.
template <typename Scalar>
class Tensor {
 public:
  using Matrix = RowMatrix<Scalar>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(shape), data_(Matrix::Zero(shape.channels, shape.pixels())) {}
  Tensor(Shape shape, Matrix data) : shape_(shape), data_(std::move(data)) {
    if (data_.rows() != shape.channels || data_.cols() != shape.pixels()) {
      throw ShapeError("tensor data does not match shape " + shape.str());
    }
  }

  static Tensor constant(Shape shape, Scalar value) {
    return Tensor(shape, Matrix::Constant(shape.channels, shape.pixels(), value));
  }
  static Tensor zeros(Shape shape) { return Tensor(shape); }

  const Shape& shape() const { return shape_; }
  Index channels() const { return shape_.channels; }
  Index height() const { return shape_.height; }
  Index width() const { return shape_.width; }
  Index size() const { return shape_.size(); }

  Matrix& data() { return data_; }
  const Matrix& data() const { return data_; }

  Scalar& operator()(Index c, Index y, Index x) { return data_(c, y * shape_.width + x); }
  Scalar operator()(Index c, Index y, Index x) const { return data_(c, y * shape_.width + x); }

  auto channel(Index c) { return data_.row(c); }
  auto channel(Index c) const { return data_.row(c); }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_{};
  Matrix data_;
};

using LatentTensor = Tensor<float>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

template <typename Scalar>
Scalar mean_squared_error(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mean_squared_error");
  return (a.data() - b.data()).squaredNorm() / static_cast<Scalar>(a.size());
}

}  // namespace tinv

#endif  // TINV_TENSOR_HPP
