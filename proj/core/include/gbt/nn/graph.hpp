// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation. A Graph records nodes in creation
// order; backward() walks them in reverse, which is a valid topological order
// and keeps gradient accumulation deterministic.
#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gbt/nn/tensor.hpp"

namespace gbt::nn {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  void zero_grad() {
    if (grad.shape() != value.shape()) {
      grad = Tensor<T>(value.shape());
    } else {
      grad.fill(T(0));
    }
  }
};

/// Handle to a node inside one Graph.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const noexcept { return id != std::numeric_limits<std::uint32_t>::max(); }
};

template <class T>
class Graph {
 public:
  /// Called with the node's own value and its accumulated gradient.
  using BackwardFn = std::function<void(Graph&, const Tensor<T>& out_value, const Tensor<T>& out_grad)>;

  /// grad_enabled = false records no backward closures (inference).
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(256); }

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var constant(Tensor<T> v) { return push(std::move(v), nullptr, false, {}); }

  Var input(Tensor<T> v, bool requires_grad = true) {
    return push(std::move(v), nullptr, requires_grad && grad_enabled_, {});
  }

  /// Leaf bound to a parameter; its value is read in place, not copied.
  Var param(Parameter<T>& p) {
    Var v = push(Tensor<T>(), nullptr, p.trainable && grad_enabled_, {});
    nodes_[v.id].external = &p.value;
    nodes_[v.id].param = &p;
    return v;
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.value;
  }

  /// Empty until backward() has reached the node.
  const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Records an op result. fn is kept only if some parent requires grad.
  Var emit(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    for (Var p : parents) needs = needs || nodes_.at(p.id).requires_grad;
    return push(std::move(value), nullptr, needs, needs ? std::move(fn) : BackwardFn{});
  }

  Var emit(Tensor<T> value, const std::vector<Var>& parents, BackwardFn fn) {
    bool needs = false;
    for (Var p : parents) needs = needs || nodes_.at(p.id).requires_grad;
    return push(std::move(value), nullptr, needs, needs ? std::move(fn) : BackwardFn{});
  }

  /// Gradient accumulator for v, zero-initialized on first use. Returns
  /// nullptr when v does not require grad so callers can skip the work.
  Tensor<T>* grad_sink(Var v) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>(value(v).shape());
    return &n.grad;
  }

  /// Seeds d(out)/d(out) = 1 for a scalar node and propagates to every
  /// requires-grad leaf. Parameter gradients are added into Parameter::grad.
  void backward(Var out) {
    if (value(out).size() != 1) {
      throw Error(ErrorCode::kShapeMismatch, "backward() needs a scalar output");
    }
    if (!nodes_[out.id].requires_grad) return;
    grad_sink(out)->fill(T(1));
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) {
        n.backward(*this, n.external ? *n.external : n.value, n.grad);
      } else if (n.param != nullptr) {
        Parameter<T>& p = *n.param;
        if (p.grad.shape() != p.value.shape()) p.zero_grad();
        for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += n.grad[k];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    const Tensor<T>* external = nullptr;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor<T> v, const Tensor<T>* external, bool requires_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(v);
    n.external = external;
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

}  // namespace gbt::nn
