#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <vector>

#include "sca/tensor.hpp"

namespace sca {

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool valid() const noexcept { return tape != nullptr; }
};

// Records primitive operations in execution order so that one reverse sweep
// produces gradients for every leaf that requires them.
//
// Nodes are appended only, so every node's inputs precede it. A tape is not
// thread-safe; evaluate independent examples on independent tapes.
//
// backward() may be called several times: leaf gradients accumulate across
// calls until zero_grad(), intermediate gradients are rebuilt on each call.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  // A tape with grad disabled records values only (inference mode).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  // Appends an op result. `backward` receives the tape and the new node id and
  // must accumulate into the inputs' grad buffers (see grad_target()).
  Var record(Tensor value, std::initializer_list<Var> inputs,
             BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  // Gradient of a node; a zero tensor when nothing flowed into it.
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const {
    return nodes_[id].requires_grad;
  }
  const std::vector<std::size_t>& inputs(std::size_t id) const {
    return nodes_[id].inputs;
  }

  // Accumulation buffer of an input, or nullptr when it needs no gradient.
  Tensor* grad_target(std::size_t id);

  void backward(Var loss);
  void zero_grad();

  std::size_t size() const noexcept { return nodes_.size(); }
  bool grad_enabled() const noexcept { return grad_enabled_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until something accumulates into it
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  bool grad_enabled_;
  mutable Tensor zero_cache_;
};

}  // namespace sca
