#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "nlaic/tensor.hpp"

namespace nlaic {

template <typename Scalar>
class Tape;

// One recorded value. Nodes that need a gradient are owned by a Tape in
// recording order; constants float free and die with their last Var.
template <typename Scalar>
struct Node {
  using Backward = std::function<void(Node&)>;

  Tensor<Scalar> value;
  Tensor<Scalar> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool has_grad = false;
  Tape<Scalar>* tape = nullptr;
  std::vector<std::shared_ptr<Node>> inputs;
  Backward backward;

  // Zero-initialized on first access, shape of value.
  Tensor<Scalar>& grad_buffer() {
    if (!has_grad) {
      grad = Tensor<Scalar>::zeros(value.shape());
      has_grad = true;
    }
    return grad;
  }
  Node& input(std::size_t i) { return *inputs[i]; }
  bool input_wants(std::size_t i) const { return inputs[i]->requires_grad; }
};

template <typename Scalar>
class Var {
 public:
  using NodeT = Node<Scalar>;

  Var() = default;
  explicit Var(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}

  // A value that never receives gradient.
  static Var constant(Tensor<Scalar> value) {
    auto n = std::make_shared<NodeT>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  const Tensor<Scalar>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(Index axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_->requires_grad; }
  Tape<Scalar>* tape() const { return node_->tape; }

  // Gradient after Tape::backward; zeros if nothing reached this node.
  Tensor<Scalar> grad() const {
    if (!node_->has_grad) return Tensor<Scalar>::zeros(node_->value.shape());
    return node_->grad;
  }

  const std::shared_ptr<NodeT>& node() const { return node_; }
  bool valid() const { return node_ != nullptr; }

 private:
  std::shared_ptr<NodeT> node_;
};

// Reverse-mode tape. Recording order is topological order; backward walks it
// once in reverse. Single-threaded per instance.
template <typename Scalar>
class Tape {
 public:
  using NodeT = Node<Scalar>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad = true) {
    auto n = std::make_shared<NodeT>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    if (requires_grad) {
      n->tape = this;
      nodes_.push_back(n);
    }
    return Var<Scalar>(std::move(n));
  }

  // Records an op output. The node only joins the tape if some input needs
  // a gradient; otherwise the backward closure is dropped.
  static Var<Scalar> record(Tensor<Scalar> value, std::vector<Var<Scalar>> inputs,
                            typename NodeT::Backward backward) {
    Tape* tape = nullptr;
    for (const auto& in : inputs) {
      if (!in.requires_grad()) continue;
      if (tape && in.tape() != tape) throw ContractError("op mixes variables from two tapes");
      tape = in.tape();
    }
    auto n = std::make_shared<NodeT>();
    n->value = std::move(value);
    if (tape) {
      n->requires_grad = true;
      n->tape = tape;
      n->inputs.reserve(inputs.size());
      for (auto& in : inputs) n->inputs.push_back(in.node());
      n->backward = std::move(backward);
      tape->nodes_.push_back(n);
    }
    return Var<Scalar>(std::move(n));
  }

  void backward(const Var<Scalar>& loss) {
    if (loss.value().size() != 1 || !loss.shape().empty())
      throw ContractError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
    if (!loss.requires_grad() || loss.tape() != this)
      throw ContractError("loss is not recorded on this tape");
    loss.node()->grad_buffer()[0] += Scalar(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      NodeT& n = **it;
      if (n.has_grad && n.backward) n.backward(n);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::shared_ptr<NodeT>> nodes_;
};

}  // namespace nlaic
