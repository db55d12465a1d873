#pragma once

// Record table -> splits -> trained ModelBundle, shared by the CLI and the
// acceptance suite.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "ulm/batch.hpp"
#include "ulm/checkpoint.hpp"
#include "ulm/config.hpp"
#include "ulm/metrics.hpp"
#include "ulm/trainer.hpp"

namespace ulm {

struct DataSplits {
  std::vector<LabRecord> train_records, validation_records, test_records;
  std::vector<Example> train, validation, test;
};

inline std::vector<Example> to_examples(std::span<const LabRecord> records, const Scaler& scaler,
                                        const Thresholds& thresholds) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const LabRecord& r : records) out.push_back(prepare_example(r, scaler, thresholds));
  return out;
}

/// Test split first (`test_fraction` of the records), then validation as
/// `validation_fraction` of what remains. Both splits derive from `seed`.
inline DataSplits make_splits(std::span<const LabRecord> records, const Scaler& scaler, const Thresholds& thresholds,
                              double test_fraction, double validation_fraction, std::uint64_t seed) {
  DataSplits d;
  auto [rest, test] = split(records, 1.0 - test_fraction, seed);
  auto [train, val] = split(std::span<const LabRecord>(rest), 1.0 - validation_fraction, derive_seed(seed, 1));
  d.train_records = std::move(train);
  d.validation_records = std::move(val);
  d.test_records = std::move(test);
  d.train = to_examples(d.train_records, scaler, thresholds);
  d.validation = to_examples(d.validation_records, scaler, thresholds);
  d.test = to_examples(d.test_records, scaler, thresholds);
  return d;
}

/// Untrained model for the configured kind.
inline ModelBundle new_bundle(const RunConfig& c, const Scaler& scaler) {
  ModelBundle m;
  m.kind = c.kind;
  m.embedding = c.embedding;
  m.thresholds = c.thresholds;
  m.scaler = scaler;
  m.seed = c.seed;
  if (c.kind == ModelKind::ulm) {
    EmbeddingTable table = c.embedding.provenance == EmbeddingProvenance::file
                               ? load_table(c.embedding.path)
                               : pseudo_table(FeatureCatalog::standard(), c.ulm.dim, c.embedding.seed);
    if (c.embedding.scale != 1.0) table = scaled(table, c.embedding.scale);
    m.ulm.emplace(c.ulm, std::move(table), c.seed);
  } else if (c.kind == ModelKind::mlp_m) {
    m.mlps.emplace_back(MlpVariant::multitask, 0, c.seed, c.mlp_hidden);
  } else {
    for (std::size_t t = 0; t < kTargetCount; ++t) m.mlps.emplace_back(MlpVariant::binary, t, c.seed, c.mlp_hidden);
  }
  return m;
}

/// Trains every network in the bundle; one history per network.
inline std::vector<TrainHistory> train_bundle(ModelBundle& m, const DataSplits& d, const TrainConfig& cfg) {
  std::vector<TrainHistory> out;
  if (m.kind == ModelKind::ulm) {
    out.push_back(fit(*m.ulm, d.train, d.validation, cfg));
  } else {
    for (MlpModel& net : m.mlps) out.push_back(fit(net, d.train, d.validation, cfg));
  }
  return out;
}

struct TargetScores {
  std::array<std::vector<double>, kTargetCount> scores;
  std::array<std::vector<int>, kTargetCount> labels;

  double auc(std::size_t column) const { return auc_rank(scores[column], labels[column]); }
};

/// Probabilities of labelled targets over `examples`.
inline TargetScores score_examples(const ModelBundle& m, std::span<const Example> examples,
                                   std::size_t batch_size = 256) {
  TargetScores out;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const Batch b = make_batch(examples.subspan(start, std::min(batch_size, examples.size() - start)));
    const Tensor p = m.predict(b);
    for (std::size_t r = 0; r < b.rows; ++r) {
      for (std::size_t t = 0; t < kTargetCount; ++t) {
        if (b.target_mask[r * kTargetCount + t] == 0.0) continue;
        out.scores[t].push_back(p[r * kTargetCount + t]);
        out.labels[t].push_back(static_cast<int>(b.target_class[r * kTargetCount + t]));
      }
    }
  }
  return out;
}

}  // namespace ulm
