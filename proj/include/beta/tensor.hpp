#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace beta {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised whenever operand extents are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& lhs, const Shape& rhs);
  explicit ShapeError(const std::string& message) : std::invalid_argument(message) {}
};

/// Dense row-major array. Value type: copies are deep.
template <class Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeError("tensor of shape " + shape_to_string(shape_) + " cannot hold " +
                       std::to_string(data_.size()) + " values");
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<Real> values) {
    return Tensor({rows, cols}, std::vector<Real>(values));
  }
  static Tensor vector(std::initializer_list<Real> values) {
    return Tensor({values.size()}, std::vector<Real>(values));
  }
  static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const { return rank() >= 1 ? shape_[0] : 1; }
  /// Width of the trailing axis; 1 for scalars.
  std::size_t cols() const { return rank() >= 2 ? shape_.back() : (rank() == 1 ? shape_[0] : 1); }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  std::vector<Real>& storage() noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  const Real& operator[](std::size_t i) const { return data_[i]; }
  Real& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const Real& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * shape_[1], shape_[1]}; }
  std::span<const Real> row(std::size_t r) const { return {data_.data() + r * shape_[1], shape_[1]}; }

  Real item() const {
    if (data_.size() != 1) {
      throw ShapeError("item() requires a single-element tensor, got " + shape_to_string(shape_));
    }
    return data_[0];
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <class Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

/// Rows `indices` of a matrix, in the given order.
template <class Real>
Tensor<Real> gather_rows(const Tensor<Real>& m, std::span<const std::size_t> indices) {
  if (m.rank() != 2) throw ShapeError("gather_rows expects a matrix, got " + shape_to_string(m.shape()));
  const std::size_t cols = m.shape()[1];
  Tensor<Real> out({indices.size(), cols});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= m.shape()[0]) throw std::out_of_range("gather_rows: row index out of range");
    std::copy_n(m.data() + indices[i] * cols, cols, out.data() + i * cols);
  }
  return out;
}

template <class T>
std::vector<T> gather(std::span<const T> values, std::span<const std::size_t> indices) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(values[i]);
  return out;
}

}  // namespace beta
