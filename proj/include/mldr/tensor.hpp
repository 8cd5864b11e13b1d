#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mldr {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Resolves a possibly negative axis against `rank`; throws DimensionError when out of range.
std::size_t normalize_axis(int axis, std::size_t rank);

/// Storage aligned to Eigen's packet size. Vectorized reductions peel a
/// different number of leading scalars depending on the start address, so an
/// unaligned heap buffer would make summation order (and results) vary run to run.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

using ArrayMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrayMap = Eigen::Map<const Eigen::ArrayXd>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

/// Dense row-major n-d array of doubles. The gradient buffer exists only while
/// requires_grad is set and always has the same length as the data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }
  static Tensor from(Shape shape, std::initializer_list<double> values) {
    return Tensor(std::move(shape), std::vector<double>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t dim(int axis) const { return shape_[normalize_axis(axis, rank())]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double> values() const { return {data_.begin(), data_.end()}; }

  ArrayMap array() { return ArrayMap(data_.data(), static_cast<Eigen::Index>(data_.size())); }
  ConstArrayMap array() const {
    return ConstArrayMap(data_.data(), static_cast<Eigen::Index>(data_.size()));
  }
  /// Views a rank-2 tensor as a row-major matrix.
  MatrixMap matrix();
  ConstMatrixMap matrix() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;
  double item() const;

  /// Same data, new shape. Element count must match.
  Tensor reshaped(Shape shape) const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on);
  bool has_grad() const noexcept { return requires_grad_; }
  std::span<double> grad() noexcept { return grad_; }
  std::span<const double> grad() const noexcept { return grad_; }
  /// Gradient as a tensor of this shape (zeros if no gradient is tracked).
  Tensor grad_tensor() const;
  void zero_grad();

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  Buffer data_;
  bool requires_grad_ = false;
  Buffer grad_;
};

/// Strides (in elements) of a row-major layout.
std::vector<std::size_t> row_major_strides(const Shape& shape);

/// Shape produced by broadcasting `a` and `b` with trailing-dimension alignment.
Shape broadcast_shapes(const Shape& a, const Shape& b);

/// For each flat index of `out`, the flat index into a tensor of shape `in`
/// broadcast to `out`. `in` must be broadcast-compatible with `out`.
std::vector<std::size_t> broadcast_index_map(const Shape& in, const Shape& out);

}  // namespace mldr
