#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <sstream>
#include <vector>

#include "oracles.hpp"
#include "reference_figures.hpp"
#include "ulm/metrics.hpp"
#include "ulm/random.hpp"

using namespace ulm;

namespace {

struct Dataset {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Random scores on a coarse grid so ties are frequent; both classes present.
Dataset random_dataset(Rng& rng, std::size_t n, std::size_t levels) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    d.scores.push_back(static_cast<double>(rng.below(levels)) / static_cast<double>(levels));
    d.labels.push_back(rng.bernoulli(0.3) ? 1 : 0);
  }
  d.labels[0] = 1;
  d.labels[1] = 0;
  return d;
}

}  // namespace

TEST(Confusion, ReproducesReferenceRates) {
  for (const auto& c : reference::kConfusion) {
    const ConfusionReport r = confusion_from_counts(c.tp, c.tn, c.fp, c.fn);
    EXPECT_NEAR(r.accuracy, c.accuracy, 0.05) << c.name;
    EXPECT_NEAR(r.sensitivity, c.sensitivity, 0.05) << c.name;
    EXPECT_NEAR(r.specificity, c.specificity, 0.05) << c.name;
    EXPECT_EQ(round_percent(r.accuracy), c.accuracy) << c.name;
    EXPECT_EQ(round_percent(r.sensitivity), c.sensitivity) << c.name;
    EXPECT_EQ(round_percent(r.specificity), c.specificity) << c.name;
  }
}

TEST(Confusion, ThresholdTiesArePositive) {
  const std::vector<double> s{0.5, 0.49, 0.9, 0.1};
  const std::vector<int> y{1, 1, 0, 0};
  const ConfusionReport r = confusion(s, y);
  EXPECT_EQ(r.tp, 1u);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_EQ(r.tn, 1u);
  EXPECT_EQ(r.total(), 4u);
}

TEST(Confusion, AllCorrectIsHundredPercent) {
  const ConfusionReport r = confusion(std::vector<double>{0.9, 0.8, 0.1}, std::vector<int>{1, 1, 0});
  EXPECT_EQ(r.accuracy, 100.0);
  EXPECT_EQ(r.sensitivity, 100.0);
  EXPECT_EQ(r.specificity, 100.0);
}

TEST(Auc, SeparatedAndAllTied) {
  EXPECT_EQ(auc_rank(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(auc_rank(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{1, 1, 0, 0}), 0.0);
  EXPECT_EQ(auc_rank(std::vector<double>(6, 0.3), std::vector<int>{1, 0, 1, 0, 0, 1}), 0.5);
}

TEST(Auc, RejectsSingleClassAndBadInput) {
  EXPECT_THROW(auc_rank(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), std::invalid_argument);
  EXPECT_THROW(auc_rank(std::vector<double>{0.1}, std::vector<int>{1, 0}), std::invalid_argument);
  EXPECT_THROW(auc_rank(std::vector<double>{0.1, NAN}, std::vector<int>{1, 0}), std::invalid_argument);
}

TEST(Auc, MatchesPairCountingOracleExactly) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const Dataset d = random_dataset(rng, 2 + rng.below(199), 1 + rng.below(40));
    EXPECT_EQ(auc_rank(d.scores, d.labels), oracle::auc_pairs(d.scores, d.labels)) << trial;
  }
}

TEST(Auc, InvariantUnderIncreasingTransform) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    Dataset d = random_dataset(rng, 100, 30);
    const double before = auc_rank(d.scores, d.labels);
    for (double& s : d.scores) s = std::exp(3.0 * s) - 7.0;
    EXPECT_EQ(auc_rank(d.scores, d.labels), before);
  }
}

TEST(Auc, ComplementLabelsSumToOne) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    Dataset d = random_dataset(rng, 150, 25);
    const double a = auc_rank(d.scores, d.labels);
    for (int& l : d.labels) l = 1 - l;
    EXPECT_NEAR(a + auc_rank(d.scores, d.labels), 1.0, 1e-12);
  }
}

TEST(Roc, CurveShapeAndTrapezoidArea) {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const Dataset d = random_dataset(rng, 2 + rng.below(300), 1 + rng.below(50));
    const RocCurve c = roc_auc(d.scores, d.labels);
    ASSERT_GE(c.points.size(), 2u);
    EXPECT_EQ(c.points.front().fpr, 0.0);
    EXPECT_EQ(c.points.front().tpr, 0.0);
    EXPECT_TRUE(std::isinf(c.points.front().threshold));
    EXPECT_EQ(c.points.back().fpr, 1.0);
    EXPECT_EQ(c.points.back().tpr, 1.0);
    for (std::size_t i = 1; i < c.points.size(); ++i) {
      EXPECT_GE(c.points[i].fpr, c.points[i - 1].fpr);
      EXPECT_GE(c.points[i].tpr, c.points[i - 1].tpr);
      EXPECT_LT(c.points[i].threshold, c.points[i - 1].threshold);
    }
    EXPECT_NEAR(trapezoid_area(c), c.auc, 1e-12);
  }
}

TEST(Roc, CsvExport) {
  const RocCurve c = roc_auc(std::vector<double>{0.2, 0.7}, std::vector<int>{0, 1});
  std::ostringstream out;
  write_roc_csv(out, c);
  EXPECT_EQ(out.str(), "threshold,fpr,tpr\ninf,0,0\n0.7,0,1\n0.2,1,1\n");
}
