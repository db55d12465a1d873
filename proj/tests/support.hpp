#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <vector>

#include "ulm/batch.hpp"
#include "ulm/catalog.hpp"
#include "ulm/gradcheck.hpp"
#include "ulm/model.hpp"
#include "ulm/record.hpp"
#include "ulm/trainer.hpp"

namespace support {

/// In-domain record with a random subset of inputs (at least one) and of
/// targets (at least one). Values are drawn log-uniformly inside the
/// reference ranges.
inline ulm::LabRecord random_record(ulm::Rng& rng, double keep = 0.5) {
  using namespace ulm;
  const auto& cat = FeatureCatalog::standard();
  LabRecord r;
  auto draw = [&](const Feature& f) {
    if (f.id == fid::gender) return rng.bernoulli(0.5) ? 1.0 : 0.0;
    const double lo = std::log(f.range_min + 1e-3), hi = std::log(f.range_max + 1e-3);
    return std::clamp(std::exp(rng.uniform(lo, hi)) - 1e-3, f.range_min, f.range_max);
  };
  const auto inputs = cat.input_features();
  for (FeatureId f : inputs) {
    if (rng.bernoulli(keep)) r.set(f, draw(cat.at(f)));
  }
  if (r.size() == 0) {
    const FeatureId f = inputs[rng.below(inputs.size())];
    r.set(f, draw(cat.at(f)));
  }
  for (FeatureId t : kTargets) {
    if (rng.bernoulli(0.6)) r.set(t, draw(cat.at(t)));
  }
  if (!has_any_target(r)) r.set(fid::glu, draw(cat.at(fid::glu)));
  if (r.has(fid::uric) && !r.has(fid::gender)) r.set(fid::gender, 1.0);
  return r;
}

inline std::vector<ulm::Example> random_examples(ulm::Rng& rng, std::size_t n, double keep = 0.5) {
  std::vector<ulm::Example> out;
  const ulm::Scaler scaler;
  for (std::size_t i = 0; i < n; ++i) out.push_back(ulm::prepare_example(random_record(rng, keep), scaler));
  return out;
}

/// Copy of `b` with `extra` masked slots appended to every row.
inline ulm::Batch pad_batch(const ulm::Batch& b, std::size_t extra) {
  using namespace ulm;
  Batch p = b;
  p.max_set = b.max_set + extra;
  p.feature_ids.assign(b.rows * p.max_set, 0);
  p.values = Tensor({b.rows, p.max_set});
  p.source_mask = Tensor({b.rows, p.max_set});
  for (std::size_t i = 0; i < b.rows; ++i) {
    for (std::size_t s = 0; s < b.max_set; ++s) {
      p.feature_ids[i * p.max_set + s] = b.feature_ids[i * b.max_set + s];
      p.values[i * p.max_set + s] = b.values[i * b.max_set + s];
      p.source_mask[i * p.max_set + s] = b.source_mask[i * b.max_set + s];
    }
  }
  return p;
}

/// Finite-difference check of the masked BCE loss against every parameter
/// tensor of `model` on `batch`. Dropout runs in train mode with a mask that
/// is fixed across evaluations.
template <class M>
ulm::ad::GradCheckReport model_grad_check(const M& model, const ulm::Batch& batch, double step = 1e-6) {
  using namespace ulm;
  const auto cols = model.target_columns();
  const Tensor cls = select_columns(batch.target_class, cols);
  const Tensor mask = select_columns(batch.target_mask, cols);
  std::vector<Tensor> xs;
  for (const Parameter& p : model.params().items()) xs.push_back(p.value);
  auto build = [&](ad::Graph& g, std::span<const ad::Var> bound) {
    Rng rng(1234);
    return ad::masked_bce(model.forward(g, batch, bound, Mode::train, rng), cls, mask);
  };
  return ad::grad_check(build, std::move(xs), step);
}

}  // namespace support
