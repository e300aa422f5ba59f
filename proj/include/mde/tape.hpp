#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mde/common.hpp"
#include "mde/tensor.hpp"

namespace mde {

// Handle into a Tape. Valid only for the tape that produced it.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode gradient tape. Operations append nodes holding the forward
// value plus a closure that scatters the node's gradient into its inputs.
// One tape records one forward pass; backward() may run once per tape.
template <typename S>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  // When set, every operation verifies its output is finite and names
  // itself on failure. Enabled by the gradient-check harness.
  bool check_finite = false;

  Var constant(Tensor<S> value) { return push(std::move(value), false); }

  // Named gradient leaf. Binding the same name twice returns the first
  // node, so one tape sees one node per parameter.
  Var param(const std::string& name, const Tensor<S>& value) {
    auto it = by_name_.find(name);
    if (it != by_name_.end()) {
      MDE_CHECK(nodes_[static_cast<size_t>(it->second)].value.same_shape(value), ContractError,
                "parameter '", name, "' rebound with a different shape");
      return Var{it->second};
    }
    Var v = push(value, true);
    nodes_[static_cast<size_t>(v.id)].name = name;
    by_name_.emplace(name, v.id);
    return v;
  }

  // Raw node insertion for operations.
  Var push(Tensor<S> value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), Tensor<S>{}, std::string{}, needs_grad, nullptr});
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
  }

  void set_backward(Var v, BackwardFn fn) { node(v).backward = std::move(fn); }

  const Tensor<S>& value(Var v) const { return node(v).value; }
  bool needs_grad(Var v) const { return node(v).needs_grad; }

  // Gradient buffer, allocated as zeros on first touch.
  Tensor<S>& grad_buf(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad = Tensor<S>::zeros(n.value.shape);
    return n.grad;
  }
  bool grad_touched(Var v) const { return !node(v).grad.empty(); }
  const Tensor<S>& grad(Var v) const {
    const Node& n = node(v);
    MDE_CHECK(!n.grad.empty(), ContractError, "gradient not computed for this node");
    return n.grad;
  }

  void finite_or_throw(Var v, const char* op) const {
    if (!check_finite) return;
    MDE_CHECK(node(v).value.all_finite(), NumericError, "non-finite output of primitive '", op,
              "'");
  }

  // Reverse sweep from a scalar loss. Parameters reachable or not all end
  // up with a gradient buffer (zeros when unused).
  void backward(Var loss) {
    MDE_CHECK(!backward_done_, ContractError, "backward already run on this tape");
    MDE_CHECK(value(loss).size() == 1, ContractError, "backward requires a scalar loss, got ",
              shape_str(value(loss).shape));
    backward_done_ = true;
    for (auto& [name, id] : by_name_) {
      (void)name;
      grad_buf(Var{id});
    }
    grad_buf(loss)[0] = S(1);
    for (int32_t id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.backward && n.needs_grad && !n.grad.empty()) n.backward(*this);
    }
  }

  bool backward_done() const { return backward_done_; }

  std::map<std::string, Tensor<S>> named_grads() const {
    MDE_CHECK(backward_done_, ContractError, "named_grads requested before backward");
    std::map<std::string, Tensor<S>> out;
    for (const auto& [name, id] : by_name_) out.emplace(name, nodes_[static_cast<size_t>(id)].grad);
    return out;
  }

  const Tensor<S>* find_grad(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) return nullptr;
    const Tensor<S>& g = nodes_[static_cast<size_t>(it->second)].grad;
    return g.empty() ? nullptr : &g;
  }

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    std::string name;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Node& node(Var v) {
    MDE_CHECK(v.id >= 0 && v.id < static_cast<int32_t>(nodes_.size()), ContractError,
              "invalid tape handle");
    return nodes_[static_cast<size_t>(v.id)];
  }
  const Node& node(Var v) const { return const_cast<Tape*>(this)->node(v); }

  std::vector<Node> nodes_;
  std::map<std::string, int32_t> by_name_;
  bool backward_done_ = false;
};

// Top-level entry point: gradients of a scalar loss for every named
// parameter bound to the tape.
template <typename S>
std::map<std::string, Tensor<S>> backward(Tape<S>& tape, Var loss) {
  tape.backward(loss);
  return tape.named_grads();
}

}  // namespace mde
