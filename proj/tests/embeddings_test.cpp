#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>

#include "ulm/autodiff.hpp"
#include "ulm/embeddings.hpp"
#include "ulm/gradcheck.hpp"

using namespace ulm;

namespace {

std::string table_text(std::size_t dim, std::optional<FeatureId> skip = std::nullopt,
                       std::optional<FeatureId> short_row = std::nullopt) {
  std::ostringstream out;
  for (const Feature& f : FeatureCatalog::standard().features()) {
    if (skip == f.id) continue;
    out << f.label;
    const std::size_t n = short_row == f.id ? dim - 1 : dim;
    for (std::size_t i = 0; i < n; ++i) out << '\t' << (f.id * 0.01 + static_cast<double>(i) * 1e-3);
    out << '\n';
  }
  return out.str();
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST(EmbeddingFile, LoadsWellFormedTable) {
  std::istringstream in(table_text(64));
  const EmbeddingTable t = load_table(in);
  EXPECT_EQ(t.dim(), 64u);
  EXPECT_EQ(t.features(), 31u);
  EXPECT_EQ(t.provenance(), EmbeddingProvenance::file);
  EXPECT_EQ(t.row(fid::hgb)[1], 16 * 0.01 + 1e-3);
}

TEST(EmbeddingFile, MissingLabelIsNamed) {
  std::istringstream in(table_text(64, fid::fer));
  try {
    load_table(in);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("FER"), std::string::npos) << e.what();
  }
}

TEST(EmbeddingFile, RaggedRowIsRejected) {
  std::istringstream in(table_text(64, std::nullopt, fid::mcv));
  try {
    load_table(in);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("ragged"), std::string::npos) << e.what();
  }
}

TEST(EmbeddingFile, WriteThenLoadRoundTrips) {
  const EmbeddingTable t = pseudo_table(FeatureCatalog::standard(), 32, 5);
  std::stringstream ss;
  write_table(ss, t);
  const EmbeddingTable back = load_table(ss);
  EXPECT_EQ(back.rows(), t.rows());
}

TEST(PseudoTable, DeterministicUnitNorm) {
  const auto& cat = FeatureCatalog::standard();
  const EmbeddingTable a = pseudo_table(cat, 64, 11);
  const EmbeddingTable b = pseudo_table(cat, 64, 11);
  EXPECT_EQ(a.rows(), b.rows());
  EXPECT_EQ(a.provenance(), EmbeddingProvenance::pseudo);
  for (const Feature& f : cat.features()) {
    double n2 = 0;
    for (double v : a.row(f.id)) n2 += v * v;
    EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-12);
  }
  EXPECT_NE(pseudo_table(cat, 64, 12).rows(), a.rows());
  EXPECT_THROW(pseudo_table(cat, 7, 1), std::invalid_argument);
}

TEST(PseudoTable, DistinctLabelsAreNearlyOrthogonal) {
  const auto& cat = FeatureCatalog::standard();
  for (std::uint64_t seed : {0ULL, 1ULL, 2024ULL}) {
    const EmbeddingTable t = pseudo_table(cat, 64, seed);
    double worst = 0.0;
    for (FeatureId i = 1; i <= 31; ++i) {
      for (FeatureId j = i + 1; j <= 31; ++j) worst = std::max(worst, std::abs(cosine(t.row(i), t.row(j))));
    }
    EXPECT_LT(worst, 0.5) << "seed " << seed;
  }
}

TEST(ValueEmbed, WorkedCases) {
  Tensor rows({31, 2}, 1.0);
  rows[(fid::hgb - 1) * 2] = 2.0;
  rows[(fid::hgb - 1) * 2 + 1] = -4.0;
  const EmbeddingTable t(rows, EmbeddingProvenance::file);
  const std::vector<double> b{1.0, 1.0}, zero{0.0, 0.0};
  EXPECT_EQ(value_embed(fid::hgb, 0.5, t, b), (std::vector<double>{2.0, -1.0}));
  EXPECT_EQ(value_embed(fid::hgb, 0.0, t, b), b);
  EXPECT_EQ(value_embed(fid::hgb, 1.0, t, zero), (std::vector<double>{2.0, -4.0}));
  EXPECT_THROW(value_embed(40, 1.0, t, b), UnknownFeature);
  EXPECT_THROW(value_embed(fid::hgb, 1.0, t, std::vector<double>{1.0}), ShapeError);
}

TEST(ValueEmbed, AffineInValue) {
  const EmbeddingTable t = pseudo_table(FeatureCatalog::standard(), 16, 3);
  std::vector<double> b(16);
  Rng rng(2);
  for (double& v : b) v = rng.uniform(-1, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const FeatureId f = static_cast<FeatureId>(1 + rng.below(31));
    const double x = rng.uniform(0.1, 0.9), y = rng.uniform(0.1, 0.9);
    const auto ex = value_embed(f, x, t, b), ey = value_embed(f, y, t, b);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(ex[i] - ey[i], (x - y) * t.row(f)[i], 1e-12);
  }
}

TEST(ValueEmbed, TranslationGradientSumsOverSetPositions) {
  // y_s = e_s * v_s + B for three positions; d(sum w.y)/dB = sum_s w_s.
  Rng rng(4);
  Tensor e({3, 4}), v({3, 1}), w({3, 4});
  for (double& x : e.data()) x = rng.uniform(-1, 1);
  for (double& x : v.data()) x = rng.uniform(0.1, 0.9);
  for (double& x : w.data()) x = rng.uniform(-1, 1);
  auto build = [&](ad::Graph& g, std::span<const ad::Var> in) {
    const ad::Var y = ad::add(ad::mul(g.constant(e), g.constant(v)), in[0]);
    return ad::reduce_sum(ad::mul(y, g.constant(w)));
  };
  ad::Graph g;
  const ad::Var B = g.variable(Tensor({4}, 0.0));
  const ad::Var inputs[] = {B};
  g.backward(build(g, inputs));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(g.grad(B)[i], w[i] + w[4 + i] + w[8 + i], 1e-14);
  EXPECT_LT(ad::grad_check(build, Tensor({4}, 0.3), 1e-5), 1e-8);
}
