#pragma once

// Single scoring path shared by batch prediction and the HTTP endpoint.

#include <algorithm>
#include <array>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ulm/applicability.hpp"
#include "ulm/batch.hpp"
#include "ulm/checkpoint.hpp"
#include "ulm/config.hpp"
#include "ulm/csv.hpp"

namespace ulm {

struct Prediction {
  std::array<double, kTargetCount> probability{};
  std::array<bool, kTargetCount> abnormal{};
  std::vector<std::pair<FeatureId, bool>> in_domain;        // per source feature, in record order
  std::vector<std::pair<FeatureId, double>> observed_targets;  // stripped before scoring
  std::vector<std::string> warnings;
};

/// Outcome for one record: a prediction, or the reason it was not scored.
struct Scored {
  std::optional<Prediction> prediction;
  std::string reason;
};

/// Strips targets, checks the applicability domain and scores the record.
/// Records with no laboratory result besides age and gender are refused.
/// Under AdPolicy::warn out-of-domain values are clamped to their range for
/// scaling and reported; under reject the record is refused.
inline Scored score_record(const ModelBundle& model, const LabRecord& record, const InferenceConfig& cfg) {
  const auto& cat = FeatureCatalog::standard();
  const AdRanges& ranges = model.scaler.ranges();
  Prediction p;
  LabRecord source;
  for (const auto& [f, v] : record.pairs()) {
    if (!cat.contains(f)) return {std::nullopt, "unknown feature id " + std::to_string(f)};
    if (FeatureCatalog::is_target(f)) {
      p.observed_targets.emplace_back(f, v);
    } else {
      source.set(f, v);
    }
  }
  const bool any_lab = std::any_of(source.pairs().begin(), source.pairs().end(),
                                   [](const auto& fv) { return fv.first != fid::age && fv.first != fid::gender; });
  if (!any_lab) return {std::nullopt, "empty source set"};
  if (const auto g = source.get(fid::gender); g && *g != 0.0 && *g != 1.0) {
    return {std::nullopt, "gender must be M or F"};
  }
  if (const auto why = domain_violation(source, ranges)) {
    if (cfg.ad_policy == AdPolicy::reject) return {std::nullopt, *why};
    p.warnings.push_back(*why);
  }

  Example ex;
  for (const auto& [f, v] : source.pairs()) {
    const AdRange& r = ranges.at(f);
    p.in_domain.emplace_back(f, r.contains(v));
    ex.source_ids.push_back(f);
    ex.source_values.push_back(model.scaler.scale(f, f == fid::gender ? v : std::clamp(v, r.min, r.max)));
  }
  const Tensor probs = model.predict(make_batch(std::span(&ex, 1), false));
  for (std::size_t t = 0; t < kTargetCount; ++t) {
    p.probability[t] = probs[t];
    p.abnormal[t] = probs[t] >= cfg.threshold;
  }
  return {std::move(p), {}};
}

inline nlohmann::json prediction_json(const ModelBundle& model, const Prediction& p, const InferenceConfig& cfg) {
  const auto& cat = FeatureCatalog::standard();
  nlohmann::json j;
  j["model_version"] = model.version;
  j["catalog_hash"] = hex64(cat.hash());
  j["threshold"] = cfg.threshold;
  nlohmann::json preds = nlohmann::json::object();
  for (std::size_t t = 0; t < kTargetCount; ++t) {
    preds[cat.at(kTargets[t]).code] = {{"probability", p.probability[t]}, {"abnormal", p.abnormal[t]}};
  }
  j["predictions"] = std::move(preds);
  nlohmann::json dom = nlohmann::json::object();
  for (const auto& [f, ok] : p.in_domain) dom[cat.at(f).code] = ok;
  j["in_domain"] = std::move(dom);
  nlohmann::json obs = nlohmann::json::object();
  for (const auto& [f, v] : p.observed_targets) obs[cat.at(f).code] = v;
  j["observed_targets"] = std::move(obs);
  j["warnings"] = p.warnings;
  return j;
}

struct BatchPredictionSummary {
  std::size_t accepted = 0;
  std::vector<std::pair<std::string, std::string>> skipped;  // row id, reason
};

/// Predictions CSV: one row per accepted record.
///   id, p_<T> x4, abnormal_<T> x4, observed_<T> x4, out_of_domain
/// `out_of_domain` lists the codes flagged under the warn policy, ';'-joined.
inline BatchPredictionSummary predict_batch(const ModelBundle& model, const RecordTable& table,
                                            const InferenceConfig& cfg, std::ostream& out) {
  const auto& cat = FeatureCatalog::standard();
  std::vector<std::string> header{"id"};
  for (const char* prefix : {"p_", "abnormal_", "observed_"}) {
    for (FeatureId t : kTargets) header.push_back(prefix + cat.at(t).code);
  }
  header.emplace_back("out_of_domain");
  csv::write_row(out, header);

  BatchPredictionSummary s;
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    const std::string id = table.row_ids[i].empty() ? std::to_string(i + 1) : table.row_ids[i];
    const Scored r = score_record(model, table.records[i], cfg);
    if (!r.prediction) {
      s.skipped.emplace_back(id, r.reason);
      continue;
    }
    ++s.accepted;
    const Prediction& p = *r.prediction;
    std::vector<std::string> row{id};
    for (double v : p.probability) row.push_back(csv::format_double(v));
    for (bool a : p.abnormal) row.emplace_back(a ? "1" : "0");
    for (FeatureId t : kTargets) {
      std::string cell;
      for (const auto& [f, v] : p.observed_targets) {
        if (f == t) cell = csv::format_double(v);
      }
      row.push_back(cell);
    }
    std::string flagged;
    for (const auto& [f, ok] : p.in_domain) {
      if (!ok) flagged += (flagged.empty() ? "" : ";") + cat.at(f).code;
    }
    row.push_back(flagged);
    csv::write_row(out, row);
  }
  return s;
}

}  // namespace ulm
