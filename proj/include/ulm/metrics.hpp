#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "ulm/csv.hpp"

namespace ulm {

struct RocPoint {
  double threshold;  // predict positive when score >= threshold
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;  // thresholds descending, (0,0) first, (1,1) last
  double auc = 0.0;
};

namespace detail {

inline void check_scores(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  for (double s : scores) {
    if (std::isnan(s)) throw std::invalid_argument("score is NaN");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("labels must be 0 or 1");
  }
}

inline std::pair<std::uint64_t, std::uint64_t> class_counts(std::span<const int> labels) {
  std::uint64_t pos = 0;
  for (int l : labels) pos += static_cast<std::uint64_t>(l);
  return {pos, labels.size() - pos};
}

}  // namespace detail

/// Mann-Whitney AUC: P(score+ > score-) + P(tie) / 2. Computed from doubled
/// midranks so the statistic stays an exact integer until the final division.
inline double auc_rank(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scores(scores, labels);
  const auto [n_pos, n_neg] = detail::class_counts(labels);
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("AUC needs both classes present");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::uint64_t rank_sum2 = 0;  // sum over positives of 2 * midrank
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t midrank2 = (i + 1) + j;  // ranks i+1..j, averaged and doubled
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum2 += midrank2;
    }
    i = j;
  }
  const std::uint64_t u2 = rank_sum2 - n_pos * (n_pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// ROC curve over unique score thresholds plus the rank-statistic AUC.
inline RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels) {
  RocCurve curve;
  curve.auc = auc_rank(scores, labels);
  const auto [n_pos, n_neg] = detail::class_counts(labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == t) {
      (labels[order[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    curve.points.push_back(
        {t, static_cast<double>(fp) / static_cast<double>(n_neg), static_cast<double>(tp) / static_cast<double>(n_pos)});
    i = j;
  }
  return curve;
}

/// Area under the emitted curve by the trapezoid rule.
inline double trapezoid_area(const RocCurve& c) {
  double area = 0.0;
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    area += (c.points[i].fpr - c.points[i - 1].fpr) * (c.points[i].tpr + c.points[i - 1].tpr) / 2.0;
  }
  return area;
}

inline void write_roc_csv(std::ostream& out, const RocCurve& c) {
  csv::write_row(out, {"threshold", "fpr", "tpr"});
  for (const RocPoint& p : c.points) {
    csv::write_row(out, {std::isinf(p.threshold) ? "inf" : csv::format_double(p.threshold), csv::format_double(p.fpr),
                         csv::format_double(p.tpr)});
  }
}

/// Confusion counts with rates in percent.
struct ConfusionReport {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;

  std::uint64_t total() const noexcept { return tp + tn + fp + fn; }
};

inline ConfusionReport confusion_from_counts(std::uint64_t tp, std::uint64_t tn, std::uint64_t fp, std::uint64_t fn) {
  ConfusionReport r{tp, tn, fp, fn};
  const auto pct = [](std::uint64_t num, std::uint64_t den) {
    return den == 0 ? std::numeric_limits<double>::quiet_NaN()
                    : 100.0 * static_cast<double>(num) / static_cast<double>(den);
  };
  r.accuracy = pct(tp + tn, r.total());
  r.sensitivity = pct(tp, tp + fn);
  r.specificity = pct(tn, tn + fp);
  return r;
}

/// Positive prediction iff score >= threshold.
inline ConfusionReport confusion(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5) {
  detail::check_scores(scores, labels);
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) {
      (predicted ? tp : fn) += 1;
    } else {
      (predicted ? fp : tn) += 1;
    }
  }
  return confusion_from_counts(tp, tn, fp, fn);
}

/// Percent rounded to one decimal, as reported.
inline double round_percent(double pct) { return std::round(pct * 10.0) / 10.0; }

}  // namespace ulm
