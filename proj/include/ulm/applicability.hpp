#pragma once

// Applicability domain: per-feature acceptable ranges found by a greedy
// walk outward from the modal histogram bin, plus the white-cell
// differential consistency rule.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ulm/catalog.hpp"
#include "ulm/csv.hpp"
#include "ulm/record.hpp"

namespace ulm {

struct AdRange {
  FeatureId feature = 0;
  double min = 0.0;
  double max = 0.0;
  double coverage = 1.0;

  bool contains(double v) const noexcept { return v >= min && v <= max; }
};

inline constexpr double kDefaultCoverage = 0.9999;
inline constexpr std::size_t kDefaultBins = 1000;
inline constexpr std::size_t kMinRangeSamples = 100;

/// Inclusive bin window.
struct BinWindow {
  std::size_t first = 0;
  std::size_t last = 0;
  std::uint64_t count = 0;

  std::size_t width() const noexcept { return last - first + 1; }
  friend bool operator==(const BinWindow&, const BinWindow&) = default;
};

inline bool meets_coverage(std::uint64_t included, std::uint64_t total, double coverage) {
  return static_cast<double>(included) / static_cast<double>(total) >= coverage;
}

/// Index of the fullest bin; the lowest index wins ties.
inline std::size_t modal_bin(std::span<const std::uint64_t> counts) {
  return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

/// Starts at the modal bin and repeatedly absorbs the larger neighbouring
/// bin (the lower one on ties) until the window holds `coverage` of the mass.
inline BinWindow greedy_window(std::span<const std::uint64_t> counts, double coverage) {
  if (counts.empty()) throw std::invalid_argument("greedy_window: empty histogram");
  if (!(coverage > 0.0 && coverage <= 1.0)) throw std::invalid_argument("coverage must be in (0, 1]");
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) throw std::invalid_argument("greedy_window: histogram has no mass");
  const std::size_t mode = modal_bin(counts);
  BinWindow w{mode, mode, counts[mode]};
  while (!meets_coverage(w.count, total, coverage)) {
    const bool can_left = w.first > 0;
    const bool can_right = w.last + 1 < counts.size();
    bool go_left;
    if (can_left && can_right) {
      go_left = counts[w.first - 1] >= counts[w.last + 1];
    } else {
      go_left = can_left;
    }
    if (go_left) {
      w.count += counts[--w.first];
    } else {
      w.count += counts[++w.last];
    }
  }
  return w;
}

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::uint64_t> counts;

  std::size_t bin_of(double v) const {
    const std::size_t n = counts.size();
    const double pos = (v - lo) / (hi - lo) * static_cast<double>(n);
    if (!(pos > 0.0)) return 0;
    return std::min(static_cast<std::size_t>(pos), n - 1);
  }
};

inline Histogram build_histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("histogram needs at least one bin");
  Histogram h;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  h.lo = *mn;
  h.hi = *mx;
  h.counts.assign(bins, 0);
  if (h.hi == h.lo) {
    h.counts[0] = values.size();
    return h;
  }
  for (double v : values) ++h.counts[h.bin_of(v)];
  return h;
}

/// Range covering at least `coverage` of the sample. Bounds are the extreme
/// sample values that fall inside the selected bin window.
inline AdRange compute_ad_range(std::span<const double> values, double coverage = kDefaultCoverage,
                                std::size_t bins = kDefaultBins, FeatureId feature = 0) {
  if (values.size() < kMinRangeSamples) {
    throw DataError("applicability range needs at least " + std::to_string(kMinRangeSamples) + " values, got " +
                    std::to_string(values.size()));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw DataError("applicability range: non-finite value");
  }
  const Histogram h = build_histogram(values, bins);
  if (h.lo == h.hi) return AdRange{feature, h.lo, h.hi, 1.0};
  const BinWindow w = greedy_window(h.counts, coverage);
  double lo = h.hi, hi = h.lo;
  for (double v : values) {
    const std::size_t b = h.bin_of(v);
    if (b >= w.first && b <= w.last) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  return AdRange{feature, lo, hi, static_cast<double>(w.count) / static_cast<double>(values.size())};
}

/// One range per catalog feature, indexed by id - 1.
class AdRanges {
 public:
  AdRanges() = default;

  static AdRanges reference(const FeatureCatalog& catalog = FeatureCatalog::standard()) {
    AdRanges r;
    for (const Feature& f : catalog.features()) r.set(AdRange{f.id, f.range_min, f.range_max, kDefaultCoverage});
    return r;
  }

  void set(const AdRange& r) {
    if (r.feature < 1 || static_cast<std::size_t>(r.feature) > kFeatureCount) {
      throw UnknownFeature("range for unknown feature " + std::to_string(r.feature));
    }
    if (!(r.min <= r.max)) throw DataError("range min exceeds max for feature " + std::to_string(r.feature));
    if (!(r.coverage > 0.0 && r.coverage <= 1.0)) throw DataError("range coverage must be in (0, 1]");
    slots_[static_cast<std::size_t>(r.feature - 1)] = r;
  }

  const AdRange& at(FeatureId id) const {
    if (id < 1 || static_cast<std::size_t>(id) > kFeatureCount) {
      throw UnknownFeature("unknown feature id " + std::to_string(id));
    }
    const auto& slot = slots_[static_cast<std::size_t>(id - 1)];
    if (!slot) throw DataError("no applicability range for feature " + std::to_string(id));
    return *slot;
  }

  bool complete() const {
    return std::all_of(slots_.begin(), slots_.end(), [](const auto& s) { return s.has_value(); });
  }

  std::vector<AdRange> all() const {
    std::vector<AdRange> out;
    for (const auto& s : slots_) {
      if (s) out.push_back(*s);
    }
    return out;
  }

 private:
  std::array<std::optional<AdRange>, kFeatureCount> slots_{};
};

/// CSV `feature,min,max,coverage` with features named by code.
inline void write_ranges(std::ostream& out, const AdRanges& ranges,
                         const FeatureCatalog& catalog = FeatureCatalog::standard()) {
  csv::write_row(out, {"feature", "min", "max", "coverage"});
  for (const AdRange& r : ranges.all()) {
    csv::write_row(out, {catalog.at(r.feature).code, csv::format_double(r.min), csv::format_double(r.max),
                         csv::format_double(r.coverage)});
  }
}

inline AdRanges read_ranges(std::istream& in, const FeatureCatalog& catalog = FeatureCatalog::standard()) {
  const auto rows = csv::read_all(in);
  if (rows.empty() || rows[0] != csv::Row{"feature", "min", "max", "coverage"}) {
    throw DataError("ranges csv: expected header feature,min,max,coverage");
  }
  AdRanges ranges;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != 4) throw DataError("ranges csv line " + std::to_string(i + 1) + ": expected 4 cells");
    const auto id = catalog.find(row[0]);
    if (!id) throw DataError("ranges csv: unknown feature \"" + row[0] + "\"");
    const auto mn = csv::parse_double(row[1]), mx = csv::parse_double(row[2]), cov = csv::parse_double(row[3]);
    if (!mn || !mx || !cov) throw DataError("ranges csv line " + std::to_string(i + 1) + ": bad number");
    ranges.set(AdRange{*id, *mn, *mx, *cov});
  }
  if (!ranges.complete()) throw DataError("ranges csv: not every feature has a range");
  return ranges;
}

inline AdRanges read_ranges_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_ranges(in);
}

inline constexpr std::array<FeatureId, 5> kFiveDiff = {fid::baso, fid::eos, fid::lymph, fid::mono, fid::neut};
inline constexpr std::array<FeatureId, 3> kThreeDiff = {fid::mid, fid::gra, fid::lymph};
inline constexpr double kDiffTolerance = 4.0;

/// White-cell differential parts must sum to 100 +/- 4 %. The 5-part set is
/// checked when complete, else the 3-part set; otherwise the rule does not apply.
inline bool wbc_consistent(const LabRecord& r) {
  auto check = [&](std::span<const FeatureId> parts) -> std::optional<bool> {
    double sum = 0.0;
    for (FeatureId f : parts) {
      const auto v = r.get(f);
      if (!v) return std::nullopt;
      sum += *v;
    }
    return std::abs(sum - 100.0) <= kDiffTolerance;
  };
  if (auto five = check(kFiveDiff)) return *five;
  if (auto three = check(kThreeDiff)) return *three;
  return true;
}

/// First applicability-domain violation of a record, if any.
inline std::optional<std::string> domain_violation(const LabRecord& r, const AdRanges& ranges,
                                                   const FeatureCatalog& catalog = FeatureCatalog::standard()) {
  for (const auto& [f, v] : r.pairs()) {
    if (!catalog.contains(f)) return "unknown feature id " + std::to_string(f);
    const AdRange& range = ranges.at(f);
    if (!range.contains(v) || (f == fid::gender && v != 0.0 && v != 1.0)) {
      return catalog.at(f).code + " out of applicability domain [" + csv::format_double(range.min) + ", " +
             csv::format_double(range.max) + "]";
    }
  }
  if (!wbc_consistent(r)) return "white-cell differential does not sum to 100 +/- 4 %";
  return std::nullopt;
}

inline bool has_any_target(const LabRecord& r) {
  return std::any_of(kTargets.begin(), kTargets.end(), [&](FeatureId t) { return r.has(t); });
}

/// Keeps records inside the domain that carry at least one predicted analyte.
inline std::vector<LabRecord> filter_dataset(std::span<const LabRecord> records, const AdRanges& ranges) {
  if (!ranges.complete()) throw std::invalid_argument("filter_dataset: ranges must cover every feature");
  std::vector<LabRecord> kept;
  for (const LabRecord& r : records) {
    if (has_any_target(r) && !domain_violation(r, ranges)) kept.push_back(r);
  }
  return kept;
}

}  // namespace ulm
