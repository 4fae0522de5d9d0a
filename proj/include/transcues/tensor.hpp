#pragma once

#include <Eigen/Core>

#include <cassert>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "transcues/errors.hpp"

namespace transcues {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ')';
  return out.str();
}

// Dense row-major tensor. Images and feature maps use NCHW, token sequences
// use (batch, tokens, channels).
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Array::Zero(numel(shape_))) {}
  Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)), data_(Array::Constant(numel(shape_), fill)) {}
  Tensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) {
      throw ShapeError("tensor data of size " + std::to_string(data_.size()) +
                       " does not fit shape " + to_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const {
    if (axis < 0) axis += rank();
    assert(axis >= 0 && axis < rank());
    return shape_[static_cast<std::size_t>(axis)];
  }
  Index size() const { return data_.size(); }
  bool empty() const { return shape_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Array& array() { return data_; }
  const Array& array() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& at(Index n, Index c, Index h, Index w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar at(Index n, Index c, Index h, Index w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  MatrixMap matrix(Index rows, Index cols) {
    assert(rows * cols == size());
    return MatrixMap(data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    assert(rows * cols == size());
    return ConstMatrixMap(data(), rows, cols);
  }
  // Collapses every leading axis into rows.
  MatrixMap matrix() { return matrix(size() / dim(-1), dim(-1)); }
  ConstMatrixMap matrix() const { return matrix(size() / dim(-1), dim(-1)); }

  void reshape(Shape shape) {
    if (numel(shape) != size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    shape_ = std::move(shape);
  }
  Tensor reshaped(Shape shape) const& {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }
  Tensor reshaped(Shape shape) && {
    reshape(std::move(shape));
    return std::move(*this);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>().eval());
  }

  bool all_finite() const { return data_.isFinite().all(); }

 private:
  Shape shape_;
  Array data_;
};

}  // namespace transcues
