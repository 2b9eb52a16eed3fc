#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "advt/errors.hpp"

namespace advt {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
class Graph;

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  // Shared so that detach() can alias the values without copying them.
  std::shared_ptr<std::vector<T>> data;
  std::optional<std::vector<T>> grad;
  bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major tensor handle.
///
/// Copies of a Tensor alias the same storage (like a reference-counted
/// handle); use clone() for an independent copy. Gradients are only ever
/// stored on tensors with requires_grad set.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  /// Zero-filled tensor.
  explicit Tensor(Shape shape) : Tensor(std::move(shape), false) {}

  // Only a genuine bool selects this overload, so Tensor({1}, {1}) means values.
  template <std::same_as<bool> B>
  Tensor(Shape shape, B requires_grad) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    impl_->data = std::make_shared<std::vector<T>>(numel_of(shape), T{0});
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    if (values.size() != numel_of(shape)) {
      throw ShapeError("tensor: " + std::to_string(values.size()) +
                       " values do not fill shape " + to_string(shape));
    }
    impl_->data = std::make_shared<std::vector<T>>(std::move(values));
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return static_cast<bool>(impl_); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data->size(); }

  std::span<T> data() { return {impl_->data->data(), impl_->data->size()}; }
  std::span<const T> data() const { return {impl_->data->data(), impl_->data->size()}; }
  const std::vector<T>& values() const { return *impl_->data; }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
    }
    return (*impl_->data)[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    if (!flag) impl_->grad.reset();
  }

  bool has_grad() const { return impl_->grad.has_value(); }

  std::span<const T> grad() const {
    if (!impl_->grad) throw Error("grad: tensor has no gradient");
    return {impl_->grad->data(), impl_->grad->size()};
  }

  /// Gradient buffer for accumulation, allocated as zeros on first access.
  std::span<T> grad_buffer() const {
    if (!impl_->grad) impl_->grad.emplace(numel(), T{0});
    return {impl_->grad->data(), impl_->grad->size()};
  }

  void zero_grad() {
    if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), T{0});
  }
  void clear_grad() { impl_->grad.reset(); }

  /// Deep copy of the values; the copy carries no gradient.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(shape(), *impl_->data, requires_grad);
  }

  /// Same values, same storage, outside any gradient flow.
  Tensor detach() const {
    Tensor out;
    out.impl_ = std::make_shared<detail::TensorImpl<T>>();
    out.impl_->shape = impl_->shape;
    out.impl_->data = impl_->data;
    return out;
  }

  /// Same storage viewed with a different shape of equal size (no gradient link).
  Tensor view_as(Shape shape) const {
    if (numel_of(shape) != numel()) {
      throw ShapeError("view: cannot view " + to_string(this->shape()) + " as " + to_string(shape));
    }
    Tensor out = detach();
    out.impl_->shape = std::move(shape);
    return out;
  }

  bool same_storage(const Tensor& other) const { return impl_->data == other.impl_->data; }
  bool is(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend class Graph<T>;
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

/// Ordered tape of executed operations.
///
/// Operations are appended in execution order, so the tape is always in
/// topological order and one reverse sweep visits each op exactly once.
/// Only ops whose output requires a gradient are recorded.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(std::span<const T> grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  /// Creates an output tensor for `op`. If any input requires a gradient the
  /// output does too and `backward` is recorded; otherwise nothing is kept.
  template <typename MakeBackward>
  Tensor<T> record(const char* op, Tensor<T> output, std::initializer_list<Tensor<T>> inputs,
                   MakeBackward&& make_backward) {
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor<T>& t) { return t.defined() && t.requires_grad(); });
    if (!needs) return output;
    if (consumed_) throw Error(std::string(op) + ": graph already ran backward");
    output.impl_->requires_grad = true;
    nodes_.push_back(Node{op, output.impl_, make_backward()});
    return output;
  }

  /// Reverse sweep from a scalar loss. Gradients accumulate into every
  /// requires_grad tensor reachable from `loss`.
  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
      throw ShapeError("backward: loss of shape " + to_string(loss.shape()) + " is not a scalar");
    }
    if (consumed_) throw Error("backward: graph already ran backward");
    consumed_ = true;
    if (!loss.requires_grad()) return;
    Tensor<T> seed = loss;
    seed.grad_buffer()[0] += T{1};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->output->grad) continue;
      const auto& g = *it->output->grad;
      it->backward(std::span<const T>(g.data(), g.size()));
    }
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  std::vector<std::string> op_names() const {
    std::vector<std::string> names;
    names.reserve(nodes_.size());
    for (const auto& n : nodes_) names.emplace_back(n.op);
    return names;
  }

 private:
  struct Node {
    const char* op;
    std::shared_ptr<detail::TensorImpl<T>> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace advt
