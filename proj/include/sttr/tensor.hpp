#pragma once

// Dense row-major tensor with a reverse-mode autodiff tape.
//
// Every op that receives at least one input with requires_grad() records a
// Node on its output. The node keeps its inputs alive and a closure that reads
// the output gradient and accumulates into the inputs. backward() sorts the
// reachable nodes topologically and runs each closure exactly once.

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sttr/errors.hpp"

namespace sttr {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct Node;

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <class T>
struct Node {
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(const TensorImpl<T>& out)> backward;
};

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T = double>
class Tensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    if (numel_of(shape) != data.size()) {
      throw ShapeError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({}, {value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t size(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  /// Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_data() { return impl_->data; }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient, zero-filled on first access if backward never reached this tensor.
  std::span<const T> grad() const { return impl_->grad_buffer(); }
  std::span<T> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value) {
    impl_->requires_grad = value;
    return *this;
  }
  bool is_leaf() const { return impl_->node == nullptr; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  T at(std::initializer_list<std::size_t> index) const { return impl_->data[offset(index)]; }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != dim()) throw ShapeError("index rank mismatch for " + shape_str(shape()));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : index) {
      if (i >= impl_->shape[axis]) throw ShapeError("index out of range for " + shape_str(shape()));
      off = off * impl_->shape[axis] + i;
      ++axis;
    }
    return off;
  }

  /// Copy of the values with no history.
  Tensor detach() const { return Tensor(shape(), impl_->data, false); }

  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

namespace detail {

template <class T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_mode()) return false;
  for (const auto* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

/// Attaches a backward rule to `out` if any input needs a gradient.
template <class T, class F>
Tensor<T> record(Tensor<T> out, std::initializer_list<const Tensor<T>*> inputs, F&& backward) {
  if (!any_requires_grad<T>(inputs)) return out;
  auto node = std::make_shared<Node<T>>();
  for (const auto* t : inputs) {
    if (t && t->defined() && t->requires_grad()) node->inputs.push_back(t->impl());
  }
  node->backward = std::forward<F>(backward);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

template <class T>
Tensor<T> record_many(Tensor<T> out, const std::vector<Tensor<T>>& inputs,
                      std::function<void(const TensorImpl<T>&)> backward) {
  if (!grad_mode()) return out;
  auto node = std::make_shared<Node<T>>();
  for (const auto& t : inputs) {
    if (t.requires_grad()) node->inputs.push_back(t.impl());
  }
  if (node->inputs.empty()) return out;
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

/// Gradient sink for `t`, or an empty span when `t` does not take gradients.
template <class T>
std::span<T> sink(const Tensor<T>& t) {
  if (!t.defined() || !t.requires_grad()) return {};
  return t.impl()->grad_buffer();
}

}  // namespace detail

/// Nodes reachable from `root`, inputs before consumers.
template <class T>
std::vector<detail::TensorImpl<T>*> topological_order(const Tensor<T>& root) {
  std::vector<detail::TensorImpl<T>*> order;
  std::unordered_set<const detail::TensorImpl<T>*> visited;
  // (impl, next input index) frames; iterative to survive deep graphs.
  std::vector<std::pair<detail::TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(root.impl().get(), 0);
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      auto* child = impl->node->inputs[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }
  return order;
}

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// tensor with requires_grad() on the path; others are untouched.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;
  auto order = topological_order(loss);
  loss.impl()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* impl = *it;
    if (impl->node && !impl->grad.empty()) impl->node->backward(*impl);
  }
  // Interior gradients are scratch space; only leaves keep theirs.
  for (auto* impl : order) {
    if (impl->node) impl->grad.clear();
  }
}

}  // namespace sttr
