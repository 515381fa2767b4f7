#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stnlab/error.hpp"

namespace stnlab {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major n-dimensional array with an optional gradient buffer.
///
/// `T` is the value precision: float for training, double for verification.
/// The gradient buffer is empty until `ensure_grad()` is called; when present
/// it always has exactly `size()` elements.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    check_shape();
    values_.assign(numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    check_shape();
    if (values_.size() != numel(shape_))
      throw DimensionError("tensor of shape " + shape_str(shape_) + " needs " +
                           std::to_string(numel(shape_)) + " values, got " +
                           std::to_string(values_.size()));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  bool has_grad() const { return !grad_.empty(); }
  void ensure_grad() {
    if (grad_.size() != values_.size()) grad_.assign(values_.size(), T{0});
  }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), T{0}); }
  void drop_grad() {
    grad_.clear();
    grad_.shrink_to_fit();
  }
  std::span<T> grad() { return grad_; }
  std::span<const T> grad() const { return grad_; }

  /// Same values viewed under a new shape with equal element count.
  Tensor reshaped(Shape shape) const {
    if (numel(shape) != values_.size())
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), values_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void check_shape() const {
    for (std::size_t d : shape_)
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<T> values_;
  std::vector<T> grad_;
};

}  // namespace stnlab
