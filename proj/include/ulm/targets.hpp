#pragma once

#include <array>
#include <optional>

#include "ulm/catalog.hpp"
#include "ulm/record.hpp"

namespace ulm {

/// Abnormality thresholds; boundaries are inclusive.
struct Thresholds {
  double glucose_high = 7.0;         // mmol/L, abnormal if >=
  double cholesterol_high = 5.2;     // mmol/L, abnormal if >=
  double ferritin_low = 12.0;        // ng/mL, abnormal if <=
  double uric_high_male = 0.48;      // mmol/L, abnormal if >=
  double uric_high_female = 0.38;

  friend bool operator==(const Thresholds&, const Thresholds&) = default;
};

struct TargetLabel {
  FeatureId feature = 0;
  bool present = false;
  int cls = 0;  // 1 = abnormal; meaningful only when present
};

using TargetLabels = std::array<TargetLabel, kTargetCount>;

/// Class of one analyte value. `gender` is required for uric acid.
inline int classify(FeatureId target, double value, std::optional<double> gender, const Thresholds& t = {}) {
  switch (target) {
    case fid::glu: return value >= t.glucose_high ? 1 : 0;
    case fid::chol: return value >= t.cholesterol_high ? 1 : 0;
    case fid::fer: return value <= t.ferritin_low ? 1 : 0;
    case fid::uric:
      if (!gender) throw DataError("uric acid present without gender");
      return value >= (*gender == 1.0 ? t.uric_high_male : t.uric_high_female) ? 1 : 0;
    default: throw UnknownFeature("feature " + std::to_string(target) + " is not a predicted analyte");
  }
}

/// Labels in output-column order (GLU, CHOL, FER, URIC).
inline TargetLabels label_targets(const LabRecord& r, const Thresholds& t = {}) {
  TargetLabels out{};
  for (std::size_t i = 0; i < kTargets.size(); ++i) {
    out[i].feature = kTargets[i];
    if (const auto v = r.get(kTargets[i])) {
      out[i].present = true;
      out[i].cls = classify(kTargets[i], *v, r.get(fid::gender), t);
    }
  }
  return out;
}

}  // namespace ulm
