#include "sca/parameters.hpp"

#include "sca/errors.hpp"

namespace sca {

void ParameterSet::set(const std::string& name, Tensor value) {
  entries_[name] = std::move(value);
}

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter " + name);
  return it->second;
}

Tensor& ParameterSet::get(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter " + name);
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& [name, t] : entries_) out.set(name, Tensor::zeros(t.shape()));
  return out;
}

void ParameterSet::accumulate(const ParameterSet& other, double factor) {
  for (const auto& [name, t] : other.entries_) {
    Tensor& dst = get(name);
    if (dst.shape() != t.shape()) {
      throw DimensionError("accumulate: " + name + " " +
                           shape_to_string(dst.shape()) + " vs " +
                           shape_to_string(t.shape()));
    }
    for (std::size_t i = 0; i < t.size(); ++i) dst[i] += factor * t[i];
  }
}

NamedTensors ParameterSet::to_named(const std::string& prefix) const {
  NamedTensors out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.emplace_back(prefix + name, t);
  return out;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterSet& params) {
  for (const auto& [name, t] : params.entries()) {
    vars_.emplace(name, tape.leaf(t));
  }
}

Var BoundParameters::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("parameter not bound: " + name);
  return it->second;
}

void BoundParameters::collect_grads(ParameterSet& out, double factor) const {
  for (const auto& [name, var] : vars_) {
    Tensor& dst = out.get(name);
    const Tensor& g = var.grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
  }
}

}  // namespace sca
