#include "sca/tape.hpp"

#include "sca/errors.hpp"

namespace sca {

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }

Var Tape::leaf(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = grad_enabled_;
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape != this) {
      throw UsageError("op input recorded on a different tape");
    }
    node.inputs.push_back(v.id);
    node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
  }
  node.requires_grad = node.requires_grad && grad_enabled_;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& node = nodes_[id];
  if (!node.grad.empty()) return node.grad;
  zero_cache_ = Tensor::zeros(node.value.shape());
  return zero_cache_;
}

Tensor* Tape::grad_target(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return nullptr;
  if (node.grad.empty()) node.grad = Tensor::zeros(node.value.shape());
  return &node.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw UsageError("loss is not on this tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " +
                     shape_to_string(nodes_[loss.id].value.shape()));
  }
  for (Node& node : nodes_) {
    if (!node.is_leaf) node.grad = Tensor();
  }
  Tensor* seed = grad_target(loss.id);
  if (seed == nullptr) return;
  (*seed)[0] += 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.backward && !node.grad.empty()) node.backward(*this, id);
  }
}

void Tape::zero_grad() {
  for (Node& node : nodes_) node.grad = Tensor();
}

}  // namespace sca
