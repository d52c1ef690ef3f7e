#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "csasn/error.hpp"

namespace csasn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major N-dimensional array. Rank 0 is a scalar holding one value.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : values_(1, T{0}) {}

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
    check_dims();
  }

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    check_dims();
    if (values_.size() != shape_size(shape_)) {
      throw DimensionError("tensor: " + std::to_string(values_.size()) +
                           " values for shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw DimensionError("tensor: axis " + std::to_string(axis) +
                           " out of range for shape " + shape_str(shape_));
    }
    return shape_[axis];
  }
  std::size_t size() const { return values_.size(); }

  std::span<T> data() { return values_; }
  std::span<const T> data() const { return values_; }
  const std::vector<T>& values() const { return values_; }
  std::vector<T>& values() { return values_; }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  // Multi-index access; checks rank and bounds.
  T& at(std::initializer_list<std::size_t> idx) { return values_[offset(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const {
    return values_[offset(idx)];
  }

  T item() const {
    if (values_.size() != 1) {
      throw DimensionError("tensor: item() on shape " + shape_str(shape_));
    }
    return values_[0];
  }

  Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), values_);
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  void check_dims() const {
    for (auto d : shape_) {
      if (d == 0) {
        throw DimensionError("tensor: zero-sized dimension in " +
                             shape_str(shape_));
      }
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) {
      throw DimensionError("tensor: index rank mismatch for shape " +
                           shape_str(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : idx) {
      if (i >= shape_[axis]) {
        throw DimensionError("tensor: index out of range for shape " +
                             shape_str(shape_));
      }
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> values_;
};

template <class T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(),
                     [](T v) { return std::isfinite(v); });
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("max_abs_diff: shape " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace csasn
