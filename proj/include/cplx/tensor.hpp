#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cplx/errors.hpp"

namespace cplx {

using Shape = std::vector<std::size_t>;

[[nodiscard]] inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

[[nodiscard]] inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Wider type used for running sums inside reductions and kernels.
template <typename T>
using accum_t = std::conditional_t<(sizeof(T) < sizeof(double)), double, T>;

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major tensor with a shared handle.
///
/// Copies of a BasicTensor alias the same storage; a tensor produced by an op
/// is never rewritten by another op, so sharing is safe. Parameters are the
/// one exception: the optimizer updates them in place between steps.
/// The gradient buffer exists exactly when requires_grad() is true.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : BasicTensor(Shape{}, std::vector<T>{T{0}}) {}

  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode<T>>()) {
    for (const auto extent : shape) {
      if (extent == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_string(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    set_requires_grad(requires_grad);
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return BasicTensor(Shape{}, std::vector<T>{value}, requires_grad);
  }

  [[nodiscard]] const Shape& shape() const noexcept { return node_->shape; }
  [[nodiscard]] std::size_t rank() const noexcept { return node_->shape.size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  [[nodiscard]] std::size_t numel() const noexcept { return node_->data.size(); }

  [[nodiscard]] std::span<const T> data() const noexcept { return node_->data; }
  [[nodiscard]] std::span<T> mutable_data() noexcept { return node_->data; }

  [[nodiscard]] bool requires_grad() const noexcept { return node_->requires_grad; }

  /// Gradient buffer; empty span when the tensor does not track gradients.
  [[nodiscard]] std::span<const T> grad() const noexcept { return node_->grad; }
  // The gradient is writable through any handle: pullbacks hold const copies.
  [[nodiscard]] std::span<T> mutable_grad() const noexcept { return node_->grad; }

  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) {
      node_->grad.assign(node_->data.size(), T{0});
    } else {
      node_->grad.clear();
      node_->grad.shrink_to_fit();
    }
  }

  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T{0}); }

  [[nodiscard]] T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->data.front();
  }

  [[nodiscard]] T operator[](std::size_t flat) const { return node_->data[flat]; }

  [[nodiscard]] T at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw DimensionError("index rank mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (const auto i : index) {
      if (i >= node_->shape[axis]) throw DimensionError("index out of range");
      flat = flat * node_->shape[axis] + i;
      ++axis;
    }
    return node_->data[flat];
  }

  /// Independent copy of the values with no gradient tracking.
  [[nodiscard]] BasicTensor detach() const { return BasicTensor(shape(), node_->data); }

  /// Deep copy including the requires_grad flag (gradient starts at zero).
  [[nodiscard]] BasicTensor clone() const { return BasicTensor(shape(), node_->data, requires_grad()); }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(node_->data.begin(), node_->data.end(), [](T v) { return std::isfinite(v); });
  }

  [[nodiscard]] bool same_storage(const BasicTensor& other) const noexcept { return node_ == other.node_; }
  [[nodiscard]] const void* identity() const noexcept { return node_.get(); }

 private:
  std::shared_ptr<detail::TensorNode<T>> node_;
};

using Tensor = BasicTensor<float>;

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

}  // namespace cplx
