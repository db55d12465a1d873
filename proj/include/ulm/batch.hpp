#pragma once

#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "ulm/random.hpp"
#include "ulm/scaling.hpp"
#include "ulm/targets.hpp"
#include "ulm/tensor.hpp"

namespace ulm {

/// A record after scaling: the source set (non-target features) and the
/// four target cells.
struct Example {
  std::vector<FeatureId> source_ids;
  std::vector<double> source_values;
  std::array<double, kTargetCount> target_class{};
  std::array<double, kTargetCount> target_mask{};
};

/// Splits a record into scaled source pairs and target labels. Target values
/// never enter the source set.
inline Example prepare_example(const LabRecord& r, const Scaler& scaler, const Thresholds& thresholds = {}) {
  Example ex;
  for (const auto& [f, v] : r.pairs()) {
    if (FeatureCatalog::is_target(f)) continue;
    ex.source_ids.push_back(f);
    ex.source_values.push_back(scaler.scale(f, v));
  }
  if (ex.source_ids.empty()) throw DataError("empty source set");
  const TargetLabels labels = label_targets(r, thresholds);
  for (std::size_t t = 0; t < kTargetCount; ++t) {
    ex.target_mask[t] = labels[t].present ? 1.0 : 0.0;
    ex.target_class[t] = labels[t].present ? static_cast<double>(labels[t].cls) : 0.0;
  }
  return ex;
}

/// Padded, masked mini-batch of variable-size sets. Padded slots carry
/// feature id 0 and value 0.
struct Batch {
  std::size_t rows = 0;
  std::size_t max_set = 0;
  std::vector<FeatureId> feature_ids;  // [rows * max_set]
  Tensor values;                       // [rows, max_set]
  Tensor source_mask;                  // [rows, max_set]
  std::vector<FeatureId> target_ids;   // [rows * 4]
  Tensor target_class;                 // [rows, 4]
  Tensor target_mask;                  // [rows, 4]

  FeatureId id_at(std::size_t row, std::size_t slot) const { return feature_ids[row * max_set + slot]; }
};

inline Batch make_batch(std::span<const Example> examples, bool require_targets = true) {
  if (examples.empty()) throw std::invalid_argument("make_batch: empty batch");
  Batch b;
  b.rows = examples.size();
  for (const Example& ex : examples) {
    if (ex.source_ids.empty()) throw DataError("empty source set");
    b.max_set = std::max(b.max_set, ex.source_ids.size());
  }
  b.feature_ids.assign(b.rows * b.max_set, 0);
  b.values = Tensor({b.rows, b.max_set});
  b.source_mask = Tensor({b.rows, b.max_set});
  b.target_ids.resize(b.rows * kTargetCount);
  b.target_class = Tensor({b.rows, kTargetCount});
  b.target_mask = Tensor({b.rows, kTargetCount});
  for (std::size_t i = 0; i < b.rows; ++i) {
    const Example& ex = examples[i];
    for (std::size_t s = 0; s < ex.source_ids.size(); ++s) {
      b.feature_ids[i * b.max_set + s] = ex.source_ids[s];
      b.values[i * b.max_set + s] = ex.source_values[s];
      b.source_mask[i * b.max_set + s] = 1.0;
    }
    double any_target = 0.0;
    for (std::size_t t = 0; t < kTargetCount; ++t) {
      b.target_ids[i * kTargetCount + t] = kTargets[t];
      b.target_class[i * kTargetCount + t] = ex.target_class[t];
      b.target_mask[i * kTargetCount + t] = ex.target_mask[t];
      any_target += ex.target_mask[t];
    }
    if (require_targets && any_target == 0.0) throw DataError("record without any target in training batch");
  }
  return b;
}

inline Batch make_batch(std::span<const LabRecord> records, const FeatureCatalog& catalog, const Scaler& scaler,
                        const Thresholds& thresholds = {}) {
  std::vector<Example> examples;
  examples.reserve(records.size());
  for (const LabRecord& r : records) {
    for (const auto& [f, v] : r.pairs()) {
      if (!catalog.contains(f)) throw UnknownFeature("unknown feature id " + std::to_string(f));
    }
    examples.push_back(prepare_example(r, scaler, thresholds));
  }
  return make_batch(examples);
}

/// Fixed-width layout for the baselines: [rows, 27] over non-target features
/// in id order, missing cells 0.0.
inline Tensor dense_inputs(const Batch& b, const FeatureCatalog& catalog = FeatureCatalog::standard()) {
  std::array<int, kFeatureCount + 1> column{};
  column.fill(-1);
  const auto inputs = catalog.input_features();
  for (std::size_t c = 0; c < inputs.size(); ++c) column[static_cast<std::size_t>(inputs[c])] = static_cast<int>(c);
  Tensor out({b.rows, inputs.size()});
  for (std::size_t i = 0; i < b.rows; ++i) {
    for (std::size_t s = 0; s < b.max_set; ++s) {
      if (b.source_mask[i * b.max_set + s] == 0.0) continue;
      const int c = column[static_cast<std::size_t>(b.id_at(i, s))];
      if (c >= 0) out[i * inputs.size() + static_cast<std::size_t>(c)] = b.values[i * b.max_set + s];
    }
  }
  return out;
}

/// Seeded uniform partition; the first part holds round(ratio * n) items.
template <class T>
std::pair<std::vector<T>, std::vector<T>> split(std::span<const T> items, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must be in (0, 1)");
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5b17));
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_first = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(items.size())));
  std::pair<std::vector<T>, std::vector<T>> out;
  out.first.reserve(n_first);
  out.second.reserve(items.size() - n_first);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_first ? out.first : out.second).push_back(items[order[i]]);
  }
  return out;
}

template <class T>
std::pair<std::vector<T>, std::vector<T>> split(const std::vector<T>& items, double ratio, std::uint64_t seed) {
  return split(std::span<const T>(items), ratio, seed);
}

}  // namespace ulm
