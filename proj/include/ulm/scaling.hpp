#pragma once

#include <algorithm>
#include <cmath>

#include "ulm/applicability.hpp"

namespace ulm {

/// Offset added before the logarithm so zero-valued lower bounds stay finite.
inline constexpr double kLogOffset = 1e-3;
inline constexpr double kScaledLow = 0.1;
inline constexpr double kScaledHigh = 0.9;

/// Log transform followed by an affine map of the feature's range onto
/// [0.1, 0.9]. Gender bypasses the log: M -> 0.9, F -> 0.1.
class Scaler {
 public:
  Scaler() : ranges_(AdRanges::reference()) {}
  explicit Scaler(AdRanges ranges) : ranges_(std::move(ranges)) {}

  const AdRanges& ranges() const noexcept { return ranges_; }

  double scale(FeatureId id, double v) const {
    if (id == fid::gender) {
      if (v == 1.0) return kScaledHigh;
      if (v == 0.0) return kScaledLow;
      throw DataError("gender must be 0 or 1");
    }
    const AdRange& r = ranges_.at(id);
    if (!r.contains(v)) {
      throw DataError("value " + csv::format_double(v) + " of feature " + std::to_string(id) +
                      " outside applicability range");
    }
    const double lo = std::log(r.min + kLogOffset);
    const double hi = std::log(r.max + kLogOffset);
    if (hi == lo) return 0.5 * (kScaledLow + kScaledHigh);
    const double u = (std::log(v + kLogOffset) - lo) / (hi - lo);
    return std::clamp(kScaledLow + (kScaledHigh - kScaledLow) * u, kScaledLow, kScaledHigh);
  }

 private:
  AdRanges ranges_;
};

inline double scale_value(FeatureId id, double v, const Scaler& scaler) { return scaler.scale(id, v); }

}  // namespace ulm
