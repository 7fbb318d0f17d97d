#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace resflow {

using Shape = std::vector<std::size_t>;

/// Raised when an operation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on incompatible tensor extents.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty unless requires_grad
  bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major tensor handle. Copies share storage; use clone() for a
/// detached deep copy.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : node_(std::make_shared<detail::TensorNode<T>>()) {}

  Tensor(Shape shape, std::vector<T> data) : Tensor() {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static Tensor full(Shape shape, T value) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const noexcept { return node_->shape.size(); }
  std::size_t numel() const noexcept { return node_->data.size(); }

  std::span<T> data() noexcept { return node_->data; }
  std::span<const T> data() const noexcept { return node_->data; }
  std::vector<T>& storage() noexcept { return node_->data; }
  const std::vector<T>& storage() const noexcept { return node_->data; }

  T operator[](std::size_t i) const { return node_->data[i]; }
  T& operator[](std::size_t i) { return node_->data[i]; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor with shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const noexcept { return node_->requires_grad; }

  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) {
      node_->grad.assign(numel(), T(0));
    } else {
      node_->grad.clear();
    }
    return *this;
  }

  bool has_grad() const noexcept { return !node_->grad.empty(); }
  std::span<const T> grad() const noexcept { return node_->grad; }
  std::span<T> grad_mut() const noexcept { return node_->grad; }

  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  Tensor clone() const { return Tensor(shape(), node_->data); }

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }
  bool all_finite() const {
    return std::all_of(node_->data.begin(), node_->data.end(),
                       [](T v) { return std::isfinite(v); });
  }

  /// Non-differentiable deep copy with a different shape of equal numel.
  Tensor reshaped(Shape new_shape) const {
    if (shape_numel(new_shape) != numel()) {
      throw ShapeError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
    }
    return Tensor(std::move(new_shape), node_->data);
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(numel());
    std::transform(node_->data.begin(), node_->data.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape(), std::move(out));
  }

 private:
  std::shared_ptr<detail::TensorNode<T>> node_;
};

template <class T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.storage().data(), b.storage().data(), a.numel() * sizeof(T)) == 0;
}

}  // namespace resflow
