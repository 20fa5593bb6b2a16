// SPDX-License-Identifier: Apache-2.0
//
// Tape-free reverse-mode differentiation: every op result keeps its inputs and
// a closure that pushes its gradient back into them. backward() walks the
// graph in reverse topological order.
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dehaze/tensor.hpp"

namespace dehaze {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return grad.shape() == value.shape() && !value.empty(); }
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Handle to a graph node. Copies alias the same node.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  /// Constant (non-differentiable) value.
  explicit Var(Tensor<T> value) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
  }

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an op result. When recording is off or no input requires a gradient,
/// the result is a constant and `backward` is dropped.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& in : inputs) node->inputs.push_back(in.node());
      node->backward_fn = std::move(backward);
    }
  }
  return Var<T>(std::move(node));
}

/// Gradient sink for input i of an op, or nullptr when that input needs none.
template <class T>
Tensor<T>* input_grad(Node<T>& self, std::size_t i) {
  auto& in = self.inputs[i];
  return in->requires_grad ? &in->ensure_grad() : nullptr;
}

/// Propagates `seed` (default: ones, for scalar roots) from `root` to every
/// differentiable leaf. Intermediate gradients are released afterwards.
template <class T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Node<T>& r = *root.node();
  if (seed) {
    require_shape(*seed, r.value.shape(), "backward seed");
    r.ensure_grad() = *seed;
  } else {
    r.ensure_grad().fill(T(1));
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& n = **it;
    if (n.backward_fn && n.has_grad()) n.backward_fn(n);
    if (!n.inputs.empty()) n.grad = Tensor<T>();  // interior node: free
  }
}

/// Trainable leaf with value semantics: copying a Parameter copies its
/// tensor, so modules holding Parameters copy like plain values.
template <class T>
class Parameter {
 public:
  Parameter() : node_(std::make_shared<Node<T>>()) { node_->requires_grad = true; }
  explicit Parameter(Tensor<T> value) : Parameter() { node_->value = std::move(value); }
  Parameter(const Parameter& o) : Parameter(o.value()) {}
  Parameter& operator=(const Parameter& o) {
    if (this != &o) {
      node_ = std::make_shared<Node<T>>();
      node_->requires_grad = true;
      node_->value = o.value();
    }
    return *this;
  }
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  Var<T> var() const { return Var<T>(node_); }
  Tensor<T>& value() { return node_->value; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad = Tensor<T>(); }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// A named view of a module's parameters, in a stable order.
template <class T>
struct NamedParam {
  std::string name;
  Parameter<T>* param;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

/// Collects parameters from anything exposing `for_each_param(fn, prefix)`.
template <class T, class Module>
ParamList<T> parameters_of(Module& m, const std::string& prefix = "") {
  ParamList<T> out;
  m.for_each_param([&](const std::string& name, Parameter<T>& p) { out.push_back({name, &p}); },
                   prefix);
  return out;
}

template <class T>
void zero_grads(ParamList<T>& params) {
  for (auto& p : params) p.param->zero_grad();
}

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace dehaze
