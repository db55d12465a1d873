#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ulm/autodiff.hpp"

namespace ulm::ad {

/// Builds a scalar from graph variables bound to the checked tensors.
using GraphBuilder = std::function<Var(Graph&, std::span<const Var>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
};

namespace detail {

inline double evaluate(const GraphBuilder& build, const std::vector<Tensor>& xs) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(xs.size());
  for (const Tensor& x : xs) vars.push_back(g.constant(x));
  const Var out = build(g, vars);
  if (out.value().size() != 1) throw ShapeError("grad_check: builder must return a scalar");
  return out.value()[0];
}

}  // namespace detail

/// Compares reverse-mode gradients with central differences over every
/// coordinate of every tensor in `xs`. The error for one coordinate is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
inline GradCheckReport grad_check(const GraphBuilder& build, std::vector<Tensor> xs, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  std::vector<Tensor> analytic;
  double base = 0.0;
  {
    Graph g;
    std::vector<Var> vars;
    for (const Tensor& x : xs) vars.push_back(g.variable(x));
    const Var out = build(g, vars);
    g.backward(out);
    base = out.value()[0];
    for (const Var& v : vars) analytic.push_back(g.grad(v));
  }
  const double again = detail::evaluate(build, xs);
  if (std::bit_cast<std::uint64_t>(again) != std::bit_cast<std::uint64_t>(base)) {
    throw std::logic_error("grad_check: builder is not deterministic (two evaluations differ)");
  }

  GradCheckReport report;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    for (std::size_t i = 0; i < xs[t].size(); ++i) {
      const double orig = xs[t][i];
      xs[t][i] = orig + step;
      const double up = detail::evaluate(build, xs);
      xs[t][i] = orig - step;
      const double down = detail::evaluate(build, xs);
      xs[t][i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[t][i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (err > report.max_rel_error) report = {err, t, i};
    }
  }
  return report;
}

inline double grad_check(const GraphBuilder& build, const Tensor& x, double step) {
  return grad_check(build, std::vector<Tensor>{x}, step).max_rel_error;
}

}  // namespace ulm::ad
