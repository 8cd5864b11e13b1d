#include "mldr/tensor.hpp"

#include "mldr/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace mldr {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const auto r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(mldr::numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (mldr::numel(shape_) != data_.size()) {
    throw DimensionError("shape " + to_string(shape_) + " holds " + std::to_string(mldr::numel(shape_)) +
                         " elements but " + std::to_string(data_.size()) + " values were given");
  }
}

MatrixMap Tensor::matrix() {
  if (rank() != 2) throw DimensionError("matrix view needs rank 2, got " + to_string(shape_));
  return MatrixMap(data_.data(), static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1]));
}

ConstMatrixMap Tensor::matrix() const {
  if (rank() != 2) throw DimensionError("matrix view needs rank 2, got " + to_string(shape_));
  return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(shape_[0]),
                        static_cast<Eigen::Index>(shape_[1]));
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) {
    throw DimensionError("index of rank " + std::to_string(index.size()) + " into tensor " + to_string(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw DimensionError("index out of range for shape " + to_string(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[flat_index(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[flat_index(index)]; }

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (mldr::numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on) {
    grad_.assign(data_.size(), 0.0);
  } else {
    grad_.clear();
  }
}

Tensor Tensor::grad_tensor() const {
  if (!requires_grad_) return Tensor(shape_);
  Tensor out;
  out.shape_ = shape_;
  out.data_ = grad_;
  return out;
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

std::vector<std::size_t> broadcast_index_map(const Shape& in, const Shape& out) {
  if (in.size() > out.size()) {
    throw DimensionError("cannot broadcast " + to_string(in) + " to " + to_string(out));
  }
  const std::size_t offset = out.size() - in.size();
  const auto in_strides = row_major_strides(in);
  // stride 0 along broadcast axes
  std::vector<std::size_t> strides(out.size(), 0);
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] != out[i + offset] && in[i] != 1) {
      throw DimensionError("cannot broadcast " + to_string(in) + " to " + to_string(out));
    }
    strides[i + offset] = in[i] == 1 ? 0 : in_strides[i];
  }
  const std::size_t total = numel(out);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> counter(out.size(), 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    map[flat] = src;
    for (std::size_t ax = out.size(); ax-- > 0;) {
      if (++counter[ax] < out[ax]) {
        src += strides[ax];
        break;
      }
      src -= strides[ax] * (out[ax] - 1);
      counter[ax] = 0;
    }
  }
  return map;
}

}  // namespace mldr
