#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "support.hpp"
#include "ulm/model.hpp"

using namespace ulm;

namespace {

UlmConfig toy_config() { return UlmConfig{.dim = 16, .heads = 2, .key_dim = 8}; }

UlmModel toy_ulm(std::uint64_t seed = 1, UlmConfig cfg = toy_config()) {
  UlmModel m(cfg, pseudo_table(FeatureCatalog::standard(), cfg.dim, 7), seed);
  Rng rng(seed + 100);
  for (double& v : m.params().get("value_embedding.translation").data()) v = rng.uniform(-0.5, 0.5);
  return m;
}

Example permuted(const Example& ex, Rng& rng) {
  std::vector<std::size_t> order(ex.source_ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span(order));
  Example out = ex;
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.source_ids[i] = ex.source_ids[order[i]];
    out.source_values[i] = ex.source_values[order[i]];
  }
  return out;
}

std::vector<double> matvec(std::span<const double> x, const Tensor& w, const Tensor& b) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  std::vector<double> y(out);
  for (std::size_t j = 0; j < out; ++j) {
    double acc = b[j];
    for (std::size_t i = 0; i < in; ++i) acc += x[i] * w[i * out + j];
    y[j] = acc;
  }
  return y;
}

}  // namespace

TEST(Ulm, OutputShapeAndRange) {
  const UlmModel m = toy_ulm();
  Rng rng(3);
  const auto ex = support::random_examples(rng, 9);
  const Tensor p = m.predict(make_batch(ex));
  ASSERT_EQ(p.shape(), (Shape{9, 4}));
  for (double v : p.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Ulm, RejectsMismatchedEmbeddingDim) {
  EXPECT_THROW(UlmModel(toy_config(), pseudo_table(FeatureCatalog::standard(), 32, 1), 1), ShapeError);
}

TEST(Ulm, PermutationInvariance) {
  const UlmModel m = toy_ulm();
  Rng rng(4);
  const auto examples = support::random_examples(rng, 100);
  double worst = 0.0;
  for (const Example& ex : examples) {
    const Tensor base = m.predict(make_batch(std::span(&ex, 1)));
    for (int k = 0; k < 20; ++k) {
      const Example p = permuted(ex, rng);
      worst = std::max(worst, max_abs_diff(base, m.predict(make_batch(std::span(&p, 1)))));
    }
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Ulm, PaddingInvariance) {
  const UlmModel m = toy_ulm();
  Rng rng(5);
  const auto examples = support::random_examples(rng, 16);
  const Batch b = make_batch(examples);
  const Tensor base = m.predict(b);
  for (std::size_t extra = 1; extra <= 8; ++extra) {
    EXPECT_LT(max_abs_diff(base, m.predict(support::pad_batch(b, extra))), 1e-12) << extra;
  }
}

TEST(Ulm, RowsAreIndependentOfBatchmates) {
  const UlmModel m = toy_ulm();
  Rng rng(6);
  const auto examples = support::random_examples(rng, 6);
  const Tensor joint = m.predict(make_batch(examples));
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Tensor alone = m.predict(make_batch(std::span(&examples[i], 1)));
    for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(joint[i * 4 + t], alone[t], 1e-12);
  }
}

TEST(Ulm, EncoderIsPermutationEquivariant) {
  const UlmModel m = toy_ulm();
  Rng rng(7);
  for (const Example& ex : support::random_examples(rng, 30)) {
    const std::size_t n = ex.source_ids.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span(order));
    Example p = ex;
    for (std::size_t i = 0; i < n; ++i) {
      p.source_ids[i] = ex.source_ids[order[i]];
      p.source_values[i] = ex.source_values[order[i]];
    }
    const Tensor a = m.encoder_outputs(make_batch(std::span(&ex, 1)));
    const Tensor b = m.encoder_outputs(make_batch(std::span(&p, 1)));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < 16; ++d) EXPECT_NEAR(b[i * 16 + d], a[order[i] * 16 + d], 1e-9);
    }
  }
}

TEST(Ulm, MaskedSlotsEncodeToZeroRows) {
  const UlmModel m = toy_ulm();
  Rng rng(8);
  const Batch b = support::pad_batch(make_batch(support::random_examples(rng, 5)), 3);
  const Tensor enc = m.encoder_outputs(b);
  for (std::size_t i = 0; i < b.rows * b.max_set; ++i) {
    if (b.source_mask[i] != 0.0) continue;
    for (std::size_t d = 0; d < 16; ++d) EXPECT_EQ(enc[i * 16 + d], 0.0);
  }
}

TEST(Ulm, SingleElementEncoderByHand) {
  // One key: the softmax weight is exactly 1, so attention returns the
  // projected value of the only element.
  const UlmModel m = toy_ulm(9);
  const ParamSet& ps = m.params();
  Example ex;
  ex.source_ids = {fid::hgb};
  ex.source_values = {0.37};
  ex.target_mask = {1, 0, 0, 0};
  const Tensor enc = m.encoder_outputs(make_batch(std::span(&ex, 1)));

  const auto e = m.table().row(fid::hgb);
  const Tensor& B = ps.get("value_embedding.translation");
  std::vector<double> x(16);
  for (std::size_t d = 0; d < 16; ++d) x[d] = e[d] * 0.37 + B[d];
  const auto v = matvec(x, ps.get("encoder.0.value.kernel"), ps.get("encoder.0.value.bias"));
  const auto out = matvec(v, ps.get("encoder.0.output.kernel"), ps.get("encoder.0.output.bias"));
  for (std::size_t d = 0; d < 16; ++d) EXPECT_NEAR(enc[d], out[d], 1e-12);
}

TEST(Ulm, DropoutOnlyInTrainMode) {
  UlmConfig cfg = toy_config();
  cfg.dropout = 0.5;
  const UlmModel m = toy_ulm(2, cfg);
  Rng rng(10);
  const Batch b = make_batch(support::random_examples(rng, 8));
  EXPECT_EQ(m.predict(b), m.predict(b));
  ad::Graph g1, g2;
  Rng r1(1), r2(2);
  const Tensor t1 = m.forward(g1, b, bind(g1, m.params(), false), Mode::train, r1).value();
  const Tensor t2 = m.forward(g2, b, bind(g2, m.params(), false), Mode::train, r2).value();
  EXPECT_GT(max_abs_diff(t1, t2), 0.0);
}

TEST(Ulm, RestoreFromParamsPredictsIdentically) {
  const UlmModel m = toy_ulm(11);
  const UlmModel r(m.config(), m.table(), m.params());
  Rng rng(12);
  const Batch b = make_batch(support::random_examples(rng, 10));
  EXPECT_EQ(m.predict(b), r.predict(b));
}

TEST(Ulm, ParameterNamesAndShapes) {
  const UlmModel m = toy_ulm();
  const ParamSet& ps = m.params();
  EXPECT_EQ(ps.get("encoder.0.query.kernel").shape(), (Shape{16, 16}));
  EXPECT_EQ(ps.get("decoder.0.output.kernel").shape(), (Shape{16, 16}));
  EXPECT_EQ(ps.get("heads.kernel").shape(), (Shape{4, 16}));
  EXPECT_EQ(ps.get("value_embedding.translation").shape(), (Shape{16}));
  for (const Parameter& p : ps.items()) EXPECT_TRUE(p.value.all_finite()) << p.name;
}

TEST(Ulm, GradientsMatchFiniteDifferences) {
  for (bool residual : {false, true}) {
    UlmConfig cfg = toy_config();
    cfg.residual = residual;
    cfg.encoder_blocks = residual ? 2 : 1;
    const UlmModel m = toy_ulm(13, cfg);
    Rng rng(14);
    const Batch b = make_batch(support::random_examples(rng, 4));
    const auto rep = support::model_grad_check(m, b);
    EXPECT_LT(rep.max_rel_error, 1e-4) << m.params().items()[rep.worst_tensor].name;
  }
}

TEST(Mlp, ZeroWeightsGiveHalf) {
  for (MlpVariant v : {MlpVariant::binary, MlpVariant::multitask}) {
    MlpModel m(v, 2, 1);
    for (Parameter& p : m.params().items()) p.value.fill(0.0);
    Rng rng(15);
    const Tensor p = m.predict(make_batch(support::random_examples(rng, 5)));
    EXPECT_EQ(p.shape(), (Shape{5, v == MlpVariant::binary ? 1u : 4u}));
    for (double x : p.data()) EXPECT_EQ(x, 0.5);
  }
}

TEST(Mlp, HandComputedToy) {
  // Two live inputs (HGB, RBC), two hidden units, one output.
  ParamSet ps;
  Tensor w1({27, 2}, 0.0), b1({2}, {0.1, -0.2}), w2({2, 1}, {1.5, -2.0}), b2({1}, {0.3});
  const auto inputs = FeatureCatalog::standard().input_features();
  const auto col = [&](FeatureId f) {
    return static_cast<std::size_t>(std::find(inputs.begin(), inputs.end(), f) - inputs.begin());
  };
  w1[col(fid::hgb) * 2 + 0] = 2.0;
  w1[col(fid::hgb) * 2 + 1] = -1.0;
  w1[col(fid::rbc) * 2 + 0] = 0.5;
  w1[col(fid::rbc) * 2 + 1] = 3.0;
  ps.add("hidden.kernel", w1);
  ps.add("hidden.bias", b1);
  ps.add("output.kernel", w2);
  ps.add("output.bias", b2);
  const MlpModel m(MlpVariant::binary, 0, ps);

  Example ex;
  ex.source_ids = {fid::hgb, fid::rbc};
  ex.source_values = {0.4, 0.6};
  ex.target_mask = {1, 0, 0, 0};
  // h1 = relu(0.8 + 0.3 + 0.1) = 1.2; h2 = relu(-0.4 + 1.8 - 0.2) = 1.2
  // logit = 1.5 * 1.2 - 2.0 * 1.2 + 0.3 = -0.3
  const Tensor p = m.predict(make_batch(std::span(&ex, 1)));
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(0.3)), 1e-15);
}

TEST(Mlp, RejectsWrongInputWidth) {
  const MlpModel m(MlpVariant::multitask, 0, 1);
  ad::Graph g;
  const auto bound = bind(g, m.params(), false);
  EXPECT_THROW(MlpModel::mlp_forward(g.constant(Tensor({2, 26})), bound), ShapeError);
}

TEST(Mlp, GradientsMatchFiniteDifferences) {
  Rng rng(16);
  const Batch b = make_batch(support::random_examples(rng, 4, 0.8));
  for (MlpVariant v : {MlpVariant::binary, MlpVariant::multitask}) {
    const MlpModel m(v, 0, 17, 32);
    EXPECT_LT(support::model_grad_check(m, b).max_rel_error, 1e-4);
  }
}
