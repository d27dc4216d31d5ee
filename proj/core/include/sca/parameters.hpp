#pragma once

#include <map>
#include <string>

#include "sca/serialize.hpp"
#include "sca/tape.hpp"
#include "sca/tensor.hpp"

namespace sca {

// Named trainable tensors, iterated in name order.
class ParameterSet {
 public:
  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const {
    return entries_.count(name) != 0;
  }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  const std::map<std::string, Tensor>& entries() const { return entries_; }
  std::map<std::string, Tensor>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  // Same names and shapes, all zeros.
  ParameterSet zeros_like() const;
  // this += other (names and shapes must match).
  void accumulate(const ParameterSet& other, double factor = 1.0);

  NamedTensors to_named(const std::string& prefix = "") const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::map<std::string, Tensor> entries_;
};

// A ParameterSet recorded as leaves (or constants) on one tape.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterSet& params);

  Var operator[](const std::string& name) const;
  bool contains(const std::string& name) const {
    return vars_.count(name) != 0;
  }

  // Adds every leaf gradient, scaled, into `out` (same names as bound).
  void collect_grads(ParameterSet& out, double factor = 1.0) const;

 private:
  std::map<std::string, Var> vars_;
};

}  // namespace sca
