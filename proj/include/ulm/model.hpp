#pragma once

// Set-to-set encoder/decoder over (label embedding, value) pairs, and the
// fixed-width MLP baselines.
//
// ULM forward pass:
//   x_i   = E[f_i] * v_i + B                       value embedding, per slot
//   X     = MHA(Q=X, K=X, V=X, key mask)           encoder, self-attention
//   D     = MHA(Q=E[targets], K=X, V=X, key mask)  decoder, one query per target
//   p_t   = sigmoid(<D_t, w_t> + b_t)              independent per-target heads

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ulm/autodiff.hpp"
#include "ulm/batch.hpp"
#include "ulm/embeddings.hpp"
#include "ulm/params.hpp"

namespace ulm {

enum class Mode { train, infer };

struct UlmConfig {
  std::size_t dim = 64;
  std::size_t heads = 8;
  std::size_t key_dim = 16;
  std::size_t encoder_blocks = 1;
  std::size_t decoder_blocks = 1;
  double dropout = 0.1;
  bool residual = false;

  friend bool operator==(const UlmConfig&, const UlmConfig&) = default;
};

namespace detail {

struct AttentionSlots {
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
};

inline void add_attention_params(ParamSet& ps, const std::string& prefix, std::size_t dim, std::size_t inner,
                                 Rng& rng) {
  for (const char* proj : {"query", "key", "value"}) {
    ps.add(prefix + "." + proj + ".kernel", init_uniform({dim, inner}, dim, rng));
    ps.add(prefix + "." + proj + ".bias", init_uniform({inner}, dim, rng));
  }
  ps.add(prefix + ".output.kernel", init_uniform({inner, dim}, inner, rng));
  ps.add(prefix + ".output.bias", init_uniform({dim}, inner, rng));
}

inline AttentionSlots attention_slots(const ParamSet& ps, const std::string& prefix) {
  return {ps.index_of(prefix + ".query.kernel"), ps.index_of(prefix + ".query.bias"),
          ps.index_of(prefix + ".key.kernel"),   ps.index_of(prefix + ".key.bias"),
          ps.index_of(prefix + ".value.kernel"), ps.index_of(prefix + ".value.bias"),
          ps.index_of(prefix + ".output.kernel"), ps.index_of(prefix + ".output.bias")};
}

/// [Bq, L, dim] -> [Bq, heads, L, key_dim]
inline ad::Var project_heads(ad::Var x, ad::Var kernel, ad::Var bias, std::size_t heads, std::size_t key_dim) {
  const Shape s = x.shape();
  ad::Var p = ad::add(ad::matmul(x, kernel), bias);
  p = ad::reshape(p, {s[0], s[1], heads, key_dim});
  return ad::transpose(p, {0, 2, 1, 3});
}

}  // namespace detail

/// Multi-head scaled dot-product attention with a key mask of shape
/// [B, 1, 1, Lk]. `queries` may have batch 1 and is then shared by all rows.
inline ad::Var multi_head_attention(std::span<const ad::Var> bound, const detail::AttentionSlots& s, ad::Var queries,
                                    ad::Var keys, const Tensor& key_mask, std::size_t heads, std::size_t key_dim,
                                    double dropout, Mode mode, Rng& rng) {
  const std::size_t batch = keys.shape()[0];
  const std::size_t lq = queries.shape()[1];
  ad::Var q = detail::project_heads(queries, bound[s.wq], bound[s.bq], heads, key_dim);
  if (q.shape()[0] != batch) q = ad::broadcast(q, {batch, heads, lq, key_dim});
  ad::Var k = detail::project_heads(keys, bound[s.wk], bound[s.bk], heads, key_dim);
  ad::Var v = detail::project_heads(keys, bound[s.wv], bound[s.bv], heads, key_dim);
  ad::Var scores = ad::scale(ad::batch_matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(key_dim)));
  ad::Var weights = ad::softmax_masked(scores, key_mask);
  weights = ad::dropout(weights, dropout, mode == Mode::train, rng);
  ad::Var ctx = ad::batch_matmul(weights, v);                // [B, H, Lq, k]
  ctx = ad::transpose(ctx, {0, 2, 1, 3});                    // [B, Lq, H, k]
  ctx = ad::reshape(ctx, {batch, lq, heads * key_dim});
  return ad::add(ad::matmul(ctx, bound[s.wo]), bound[s.bo]);
}

class UlmModel {
 public:
  UlmModel(UlmConfig config, EmbeddingTable table, std::uint64_t seed) : config_(config), table_(std::move(table)) {
    if (table_.dim() != config_.dim) {
      throw ShapeError("embedding dim " + std::to_string(table_.dim()) + " does not match model dim " +
                       std::to_string(config_.dim));
    }
    if (config_.heads == 0 || config_.key_dim == 0 || config_.encoder_blocks == 0 || config_.decoder_blocks == 0) {
      throw std::invalid_argument("ulm: heads, key_dim and block counts must be positive");
    }
    Rng rng(derive_seed(seed, 0x11a));
    const std::size_t inner = config_.heads * config_.key_dim;
    params_.add("value_embedding.translation", Tensor({config_.dim}, 0.0));
    for (std::size_t b = 0; b < config_.encoder_blocks; ++b) {
      detail::add_attention_params(params_, "encoder." + std::to_string(b), config_.dim, inner, rng);
    }
    for (std::size_t b = 0; b < config_.decoder_blocks; ++b) {
      detail::add_attention_params(params_, "decoder." + std::to_string(b), config_.dim, inner, rng);
    }
    params_.add("heads.kernel", init_uniform({kTargetCount, config_.dim}, config_.dim, rng));
    params_.add("heads.bias", init_uniform({kTargetCount}, config_.dim, rng));
    index_slots();
  }

  /// Restores a model from saved parameters (names and shapes must match).
  UlmModel(UlmConfig config, EmbeddingTable table, ParamSet params)
      : UlmModel(config, std::move(table), std::uint64_t{0}) {
    if (params.size() != params_.size()) throw std::invalid_argument("ulm: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Parameter& src = params.items()[i];
      Parameter& dst = params_.items()[i];
      if (src.name != dst.name || src.value.shape() != dst.value.shape()) {
        throw std::invalid_argument("ulm: parameter " + src.name + " does not match architecture");
      }
      dst.value = src.value;
    }
  }

  const UlmConfig& config() const noexcept { return config_; }
  const EmbeddingTable& table() const noexcept { return table_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }

  std::vector<std::size_t> target_columns() const { return {0, 1, 2, 3}; }

  /// Encoder outputs [B, S, dim]; padded slots are zero rows.
  ad::Var encode(ad::Graph& g, const Batch& batch, std::span<const ad::Var> bound, Mode mode, Rng& rng) const {
    const std::size_t rows = batch.rows, slots = batch.max_set, dim = config_.dim;
    Tensor labels({rows, slots, dim});
    for (std::size_t i = 0; i < rows * slots; ++i) {
      if (batch.source_mask[i] == 0.0) continue;
      const auto e = table_.row(batch.feature_ids[i]);
      std::copy(e.begin(), e.end(), labels.data().begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
    const ad::Var label_var = g.constant(std::move(labels));
    const ad::Var values = g.constant(batch.values.reshaped({rows, slots, 1}));
    const ad::Var row_mask = g.constant(batch.source_mask.reshaped({rows, slots, 1}));
    const Tensor key_mask = batch.source_mask.reshaped({rows, 1, 1, slots});

    ad::Var x = ad::mul(ad::add(ad::mul(label_var, values), bound[translation_]), row_mask);
    for (const auto& s : encoder_) {
      ad::Var h = multi_head_attention(bound, s, x, x, key_mask, config_.heads, config_.key_dim, config_.dropout, mode,
                                       rng);
      if (config_.residual) h = ad::add(h, x);
      x = ad::mul(h, row_mask);
    }
    return x;
  }

  /// Probabilities [B, 4] in target-column order.
  ad::Var forward(ad::Graph& g, const Batch& batch, std::span<const ad::Var> bound, Mode mode, Rng& rng) const {
    const ad::Var encoded = encode(g, batch, bound, mode, rng);
    const Tensor key_mask = batch.source_mask.reshaped({batch.rows, 1, 1, batch.max_set});
    Tensor query_rows({1, kTargetCount, config_.dim});
    for (std::size_t t = 0; t < kTargetCount; ++t) {
      const auto e = table_.row(kTargets[t]);
      std::copy(e.begin(), e.end(), query_rows.data().begin() + static_cast<std::ptrdiff_t>(t * config_.dim));
    }
    ad::Var q = g.constant(std::move(query_rows));
    for (const auto& s : decoder_) {
      ad::Var h = multi_head_attention(bound, s, q, encoded, key_mask, config_.heads, config_.key_dim,
                                       config_.dropout, mode, rng);
      if (config_.residual) h = ad::add(h, q);
      q = h;
    }
    // per-target heads: logit[b, t] = <q[b, t, :], w[t, :]> + bias[t]
    ad::Var logits = ad::add(ad::sum_last(ad::mul(q, bound[head_kernel_])), bound[head_bias_]);
    return ad::sigmoid(logits);
  }

  Tensor predict(const Batch& batch) const {
    ad::Graph g;
    const auto bound = bind(g, params_, false);
    Rng rng(0);
    return forward(g, batch, bound, Mode::infer, rng).value();
  }

  Tensor encoder_outputs(const Batch& batch) const {
    ad::Graph g;
    const auto bound = bind(g, params_, false);
    Rng rng(0);
    return encode(g, batch, bound, Mode::infer, rng).value();
  }

 private:
  void index_slots() {
    translation_ = params_.index_of("value_embedding.translation");
    for (std::size_t b = 0; b < config_.encoder_blocks; ++b) {
      encoder_.push_back(detail::attention_slots(params_, "encoder." + std::to_string(b)));
    }
    for (std::size_t b = 0; b < config_.decoder_blocks; ++b) {
      decoder_.push_back(detail::attention_slots(params_, "decoder." + std::to_string(b)));
    }
    head_kernel_ = params_.index_of("heads.kernel");
    head_bias_ = params_.index_of("heads.bias");
  }

  UlmConfig config_;
  EmbeddingTable table_;
  ParamSet params_;
  std::size_t translation_ = 0;
  std::vector<detail::AttentionSlots> encoder_;
  std::vector<detail::AttentionSlots> decoder_;
  std::size_t head_kernel_ = 0;
  std::size_t head_bias_ = 0;
};

enum class MlpVariant { binary, multitask };

/// 27 -> hidden (relu) -> k (sigmoid). The binary variant predicts a single
/// target column; the multitask variant all four.
class MlpModel {
 public:
  static constexpr std::size_t kDefaultHidden = 256;

  MlpModel(MlpVariant variant, std::size_t target_column, std::uint64_t seed, std::size_t hidden = kDefaultHidden)
      : variant_(variant), target_column_(target_column), hidden_(hidden) {
    if (variant_ == MlpVariant::binary && target_column_ >= kTargetCount) {
      throw std::invalid_argument("mlp: target column out of range");
    }
    Rng rng(derive_seed(seed, 0x3a7 + target_column));
    params_.add("hidden.kernel", init_uniform({kInputCount, hidden_}, kInputCount, rng));
    params_.add("hidden.bias", init_uniform({hidden_}, kInputCount, rng));
    params_.add("output.kernel", init_uniform({hidden_, outputs()}, hidden_, rng));
    params_.add("output.bias", init_uniform({outputs()}, hidden_, rng));
  }

  MlpModel(MlpVariant variant, std::size_t target_column, ParamSet params)
      : variant_(variant), target_column_(target_column), params_(std::move(params)) {
    const Tensor& w1 = params_.get("hidden.kernel");
    if (w1.rank() != 2 || w1.dim(0) != kInputCount) throw ShapeError("mlp: hidden kernel must be [27, hidden]");
    hidden_ = w1.dim(1);
    if (params_.get("output.kernel").shape() != Shape{hidden_, outputs()}) {
      throw ShapeError("mlp: output kernel shape does not match variant");
    }
  }

  MlpVariant variant() const noexcept { return variant_; }
  std::size_t target_column() const noexcept { return target_column_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t outputs() const noexcept { return variant_ == MlpVariant::binary ? 1 : kTargetCount; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }

  std::vector<std::size_t> target_columns() const {
    if (variant_ == MlpVariant::binary) return {target_column_};
    return {0, 1, 2, 3};
  }

  /// dense [B, 27] -> probabilities [B, k].
  static ad::Var mlp_forward(ad::Var dense, std::span<const ad::Var> bound) {
    if (dense.shape().size() != 2 || dense.shape()[1] != kInputCount) {
      throw ShapeError("mlp input must be [B, 27], got " + to_string(dense.shape()));
    }
    ad::Var h = ad::relu(ad::add(ad::matmul(dense, bound[0]), bound[1]));
    return ad::sigmoid(ad::add(ad::matmul(h, bound[2]), bound[3]));
  }

  ad::Var forward(ad::Graph& g, const Batch& batch, std::span<const ad::Var> bound, Mode, Rng&) const {
    return mlp_forward(g.constant(dense_inputs(batch)), bound);
  }

  Tensor predict(const Batch& batch) const {
    ad::Graph g;
    const auto bound = bind(g, params_, false);
    Rng rng(0);
    return forward(g, batch, bound, Mode::infer, rng).value();
  }

 private:
  MlpVariant variant_;
  std::size_t target_column_;
  std::size_t hidden_;
  ParamSet params_;
};

}  // namespace ulm
