#pragma once
// Dense row-major tensors with reverse-mode automatic differentiation.
//
// BasicTensor<T> is a shared handle: copies alias the same storage and graph
// record. Operations that consume a tensor with requires_grad record a
// GraphNode whose backward closure accumulates into the parents' gradients.
// Tensors are instantiated for float (production) and double (gradient checks).

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace metaprompt {

using Shape = std::vector<std::int64_t>;

/// Thrown for incompatible or invalid tensor shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Thread-local switch; when disabled no graph records are created.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set_enabled(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : saved_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(saved_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

template <typename T>
struct TensorImpl;

template <typename T>
struct GraphNode {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> parents;
  // Reads out.grad and accumulates into the parents' gradients.
  std::function<void(TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<GraphNode<T>> node;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl<T>>()) {
    for (auto d : shape) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static BasicTensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static BasicTensor full(Shape shape, T value) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    return BasicTensor(std::move(shape), std::vector<T>(n, value));
  }

  static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, std::vector<T>{value}); }

  static BasicTensor from_impl(std::shared_ptr<TensorImpl<T>> impl) {
    BasicTensor t;
    t.impl_ = std::move(impl);
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i)); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<const T> data() const { return impl_->data; }
  /// Direct write access. Only meaningful for leaves (parameters, inputs);
  /// mutating a recorded intermediate invalidates its consumers' backward.
  std::span<T> data_mut() { return impl_->data; }
  const std::vector<T>& vec() const { return impl_->data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> grad_mut() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  const char* op_name() const { return impl_->node ? impl_->node->op : "leaf"; }
  bool is_leaf() const { return impl_->node == nullptr; }

  TensorImpl<T>* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl<T>>& impl_ptr() const { return impl_; }

  /// Same values, no graph record, no gradient tracking.
  BasicTensor detach() const { return BasicTensor(shape(), impl_->data); }
  BasicTensor clone() const { return BasicTensor(shape(), impl_->data, requires_grad()); }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(impl_->data.begin(), impl_->data.end());
    return BasicTensor<U>(shape(), std::move(out));
  }

  /// Reverse-mode sweep from a single-element tensor. Gradients accumulate
  /// additively into every reachable tensor that requires grad.
  void backward() const;

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Post-order (parents before children) over graph nodes reachable from root.
/// Every impl appears exactly once.
template <typename T>
std::vector<TensorImpl<T>*> topological_order(TensorImpl<T>* root) {
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> visited;
  std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->node.get();
    if (node != nullptr && next < node->parents.size()) {
      TensorImpl<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }
  return order;
}

template <typename T>
void BasicTensor<T>::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  }
  if (!requires_grad()) return;
  auto order = topological_order(impl_.get());
  impl_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* impl = *it;
    if (impl->node && !impl->grad.empty()) impl->node->backward(*impl);
  }
}

/// Number of recorded consumers of each tensor reachable from `root`
/// (edges into it from graph nodes). Used to verify parameter sharing.
template <typename T>
std::vector<std::pair<const TensorImpl<T>*, int>> consumer_counts(const BasicTensor<T>& root) {
  std::vector<std::pair<const TensorImpl<T>*, int>> counts;
  for (TensorImpl<T>* impl : topological_order(root.impl())) {
    if (!impl->node) continue;
    for (const auto& parent : impl->node->parents) {
      auto it = std::find_if(counts.begin(), counts.end(),
                             [&](const auto& e) { return e.first == parent.get(); });
      if (it == counts.end()) {
        counts.emplace_back(parent.get(), 1);
      } else {
        ++it->second;
      }
    }
  }
  return counts;
}

namespace detail {

template <typename T>
bool any_requires_grad(const std::vector<const BasicTensor<T>*>& inputs) {
  if (!GradMode::enabled()) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

/// Wraps a freshly computed buffer as an op result, recording a graph node
/// when any input requires grad.
template <typename T>
BasicTensor<T> record(Shape shape, std::vector<T> data, const char* op,
                      const std::vector<const BasicTensor<T>*>& inputs,
                      std::function<void(TensorImpl<T>&)> backward) {
  BasicTensor<T> out(std::move(shape), std::move(data));
  if (any_requires_grad<T>(inputs)) {
    auto node = std::make_shared<GraphNode<T>>();
    node->op = op;
    for (const auto* t : inputs) {
      if (t != nullptr && t->defined()) node->parents.push_back(t->impl_ptr());
    }
    node->backward = std::move(backward);
    out.impl()->node = std::move(node);
    out.impl()->requires_grad = true;
  }
  return out;
}

/// Gradient sink for a parent, or an empty span when it does not need one.
template <typename T>
std::span<T> sink(const std::shared_ptr<TensorImpl<T>>& parent) {
  if (!parent || !parent->requires_grad) return {};
  return parent->grad_buffer();
}

}  // namespace detail
}  // namespace metaprompt
