#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ditic/tensor.hpp"

namespace ditic {

// Reverse-mode differentiation tape. Nodes are appended in forward order,
// which is also a topological order; backward walks the ids in reverse and
// visits each node once. Single-writer: one thread builds and differentiates
// a given tape.
template <typename S>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int self)>;

  // Registers a differentiable input. The returned tensor shares storage
  // with `t` but carries a node handle on this tape.
  Tensor<S> leaf(const Tensor<S>& t) {
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{"leaf", {}, t.shape(), nullptr});
    leaves_.push_back(id);
    return t.with_tape(this, id);
  }

  Tensor<S> record(const char* op, std::vector<int> parents, Tensor<S> value, BackFn back) {
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{op, std::move(parents), value.shape(), std::move(back)});
    return value.with_tape(this, id);
  }

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  void backward(const Tensor<S>& loss) {
    if (loss.tape() != this || loss.node() < 0)
      throw TensorError("backward: loss is not a node of this tape");
    if (loss.size() != 1)
      throw TensorError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    grads_.assign(nodes_.size(), Tensor<S>());
    grads_[static_cast<size_t>(loss.node())] = Tensor<S>::full({1}, S(1));
    for (int i = loss.node(); i >= 0; --i) {
      auto& g = grads_[static_cast<size_t>(i)];
      if (!g.defined()) continue;
      auto& n = nodes_[static_cast<size_t>(i)];
      if (n.back) n.back(*this, i);
    }
    ran_backward_ = true;
  }

  // Gradient w.r.t. a tensor that carries a node on this tape. Nodes the
  // loss never reached report zeros.
  Tensor<S> grad(const Tensor<S>& t) const {
    if (t.tape() != this || t.node() < 0)
      throw TensorError("grad: tensor is not a node of this tape");
    if (!ran_backward_) throw TensorError("grad: backward has not run");
    const auto& g = grads_[static_cast<size_t>(t.node())];
    return g.defined() ? g : Tensor<S>(t.shape());
  }

  const Tensor<S>& grad_ref(int node) const { return grads_[static_cast<size_t>(node)]; }

  // Accumulation buffer for a node, zero on first touch.
  Tensor<S>& grad_acc(int node, const Shape& shape) {
    auto& g = grads_[static_cast<size_t>(node)];
    if (!g.defined()) g = Tensor<S>(shape);
    return g;
  }

  void add_grad(int node, const Tensor<S>& delta) {
    if (node < 0) return;  // constant input
    auto& g = grad_acc(node, nodes_[static_cast<size_t>(node)].shape);
    S* dst = g.mutable_data();
    const S* src = delta.data();
    for (int64_t i = 0; i < delta.size(); ++i) dst[i] += src[i];
  }

  const Shape& node_shape(int node) const { return nodes_[static_cast<size_t>(node)].shape; }
  const char* node_op(int node) const { return nodes_[static_cast<size_t>(node)].op; }
  size_t num_nodes() const { return nodes_.size(); }

  void mark_hard_round() { saw_hard_round_ = true; }
  bool saw_hard_round() const { return saw_hard_round_; }

 private:
  struct Node {
    const char* op;
    std::vector<int> parents;
    Shape shape;
    BackFn back;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor<S>> grads_;
  std::vector<int> leaves_;
  bool ran_backward_ = false;
  bool saw_hard_round_ = false;
};

// Evaluates d(loss)/d(input) for a set of named leaves. Leaves the loss
// does not depend on get zero gradients of matching shape.
template <typename S>
std::pair<S, std::map<std::string, Tensor<S>>> autodiff_eval(
    Tape<S>& tape, const std::vector<std::pair<std::string, Tensor<S>>>& inputs,
    const Tensor<S>& loss) {
  for (const auto& [name, t] : inputs)
    if (t.tape() != &tape) throw TensorError("autodiff_eval: input '" + name + "' is not a leaf of this tape");
  tape.backward(loss);
  std::map<std::string, Tensor<S>> grads;
  for (const auto& [name, t] : inputs) grads[name] = tape.grad(t);
  return {loss.item(), std::move(grads)};
}

namespace detail {

template <typename S>
Tape<S>* tape_of(const Tensor<S>& a) {
  return a.tape();
}

template <typename S, typename... Rest>
Tape<S>* tape_of(const Tensor<S>& a, const Rest&... rest) {
  Tape<S>* t = tape_of(rest...);
  if (a.tape() && t && a.tape() != t) throw TensorError("op: inputs live on different tapes");
  return a.tape() ? a.tape() : t;
}

}  // namespace detail

}  // namespace ditic
