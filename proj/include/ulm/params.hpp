#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ulm/autodiff.hpp"
#include "ulm/random.hpp"
#include "ulm/tensor.hpp"

namespace ulm {

struct Parameter {
  std::string name;
  Tensor value;
};

/// Ordered, named trainable tensors.
class ParamSet {
 public:
  Tensor& add(std::string name, Tensor init) {
    if (find(name)) throw std::invalid_argument("duplicate parameter " + name);
    items_.push_back(Parameter{std::move(name), std::move(init)});
    return items_.back().value;
  }

  std::size_t size() const noexcept { return items_.size(); }
  std::vector<Parameter>& items() noexcept { return items_; }
  const std::vector<Parameter>& items() const noexcept { return items_; }

  const Parameter* find(const std::string& name) const {
    for (const Parameter& p : items_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  const Tensor& get(const std::string& name) const {
    if (const Parameter* p = find(name)) return p->value;
    throw std::out_of_range("no parameter named " + name);
  }

  Tensor& get(const std::string& name) { return const_cast<Tensor&>(std::as_const(*this).get(name)); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < items_.size(); ++i) {
      if (items_[i].name == name) return i;
    }
    throw std::out_of_range("no parameter named " + name);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Parameter& p : items_) n += p.value.size();
    return n;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.items_.size() != b.items_.size()) return false;
    for (std::size_t i = 0; i < a.items_.size(); ++i) {
      if (a.items_[i].name != b.items_[i].name || !(a.items_[i].value == b.items_[i].value)) return false;
    }
    return true;
  }

 private:
  std::vector<Parameter> items_;
};

/// Graph variables for every parameter, in ParamSet order.
inline std::vector<ad::Var> bind(ad::Graph& g, const ParamSet& params, bool trainable) {
  std::vector<ad::Var> out;
  out.reserve(params.size());
  for (const Parameter& p : params.items()) out.push_back(trainable ? g.variable(p.value) : g.constant(p.value));
  return out;
}

/// uniform(-s, s) with s = 1 / sqrt(fan_in).
inline Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-s, s);
  return t;
}

}  // namespace ulm
