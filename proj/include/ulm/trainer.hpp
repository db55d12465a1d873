#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ulm/autodiff.hpp"
#include "ulm/batch.hpp"
#include "ulm/metrics.hpp"
#include "ulm/model.hpp"
#include "ulm/params.hpp"

namespace ulm {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t max_epochs = 1000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t early_stop_patience = 20;
  double min_delta = 1e-4;
  std::size_t plateau_patience = 10;
  double lr_factor = 0.5;
  double min_lr = 1e-6;
  std::uint64_t seed = 0;

  static constexpr double kUlmLearningRate = 1e-4;
  static constexpr double kMlpLearningRate = 1e-3;

  void validate() const {
    if (max_epochs == 0 || batch_size == 0) throw std::invalid_argument("max_epochs and batch_size must be positive");
    if (!(learning_rate > 0.0 && epsilon > 0.0 && min_lr > 0.0)) throw std::invalid_argument("rates must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("adam betas must be in [0, 1)");
    }
    if (early_stop_patience == 0 || plateau_patience == 0) throw std::invalid_argument("patience must be >= 1");
    if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw std::invalid_argument("lr_factor must be in (0, 1)");
    if (!(min_delta >= 0.0)) throw std::invalid_argument("min_delta must be non-negative");
  }
};

struct AdamState {
  std::vector<Tensor> first;
  std::vector<Tensor> second;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParamSet& params) {
    AdamState s;
    for (const Parameter& p : params.items()) {
      s.first.emplace_back(p.value.shape(), 0.0);
      s.second.emplace_back(p.value.shape(), 0.0);
    }
    return s;
  }
};

/// One bias-corrected Adam update.
inline void adam_step(ParamSet& params, std::span<const Tensor> grads, AdamState& state, double lr,
                      const TrainConfig& hyper) {
  if (grads.size() != params.size() || state.first.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params.items()[i].value.shape()) {
      throw ShapeError("adam_step: gradient shape mismatch for " + params.items()[i].name);
    }
    if (!grads[i].all_finite()) throw NonFiniteError("non-finite gradient for " + params.items()[i].name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Tensor& w = params.items()[i].value;
    Tensor& m = state.first[i];
    Tensor& v = state.second[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
      v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + hyper.epsilon);
    }
  }
}

/// Takes the listed target columns of a [B, 4] tensor.
inline Tensor select_columns(const Tensor& t, std::span<const std::size_t> cols) {
  if (cols.size() == t.dim(1)) return t;
  Tensor out({t.dim(0), cols.size()});
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) out[r * cols.size() + c] = t[r * t.dim(1) + cols[c]];
  }
  return out;
}

/// Mean binary cross-entropy over unmasked cells.
inline ad::Var masked_bce(ad::Var probabilities, const Tensor& target_class, const Tensor& target_mask) {
  return ad::masked_bce(probabilities, target_class, target_mask);
}

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::array<double, kTargetCount> val_auc{};  // NaN where undefined
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // 1-based
  std::string stop_reason;
};

inline void write_history_csv(std::ostream& out, const TrainHistory& h) {
  csv::write_row(out, {"epoch", "train_loss", "val_loss", "val_auc_glu", "val_auc_chol", "val_auc_fer", "val_auc_uric",
                       "lr"});
  for (const EpochStats& e : h.epochs) {
    csv::Row row{std::to_string(e.epoch), csv::format_double(e.train_loss), csv::format_double(e.val_loss)};
    for (double a : e.val_auc) row.push_back(std::isnan(a) ? "" : csv::format_double(a));
    row.push_back(csv::format_double(e.lr));
    csv::write_row(out, row);
  }
}

template <class M>
concept TrainableModel = requires(M& m, const M& cm, ad::Graph& g, const Batch& b, std::span<const ad::Var> bound,
                                  Rng& rng) {
  { m.params() } -> std::same_as<ParamSet&>;
  { cm.target_columns() } -> std::same_as<std::vector<std::size_t>>;
  { cm.forward(g, b, bound, Mode::train, rng) } -> std::same_as<ad::Var>;
};

/// Per-target predictions and labels collected over a dataset.
struct Evaluation {
  double loss = 0.0;
  std::array<std::vector<double>, kTargetCount> scores;
  std::array<std::vector<int>, kTargetCount> labels;

  double auc(std::size_t column) const {
    const auto& l = labels[column];
    const auto pos = std::count(l.begin(), l.end(), 1);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(l.size())) return std::numeric_limits<double>::quiet_NaN();
    return auc_rank(scores[column], l);
  }
};

/// Inference-mode loss and scores over `examples`.
template <TrainableModel M>
Evaluation evaluate(const M& model, std::span<const Example> examples, std::size_t batch_size = 256) {
  Evaluation ev;
  const auto cols = model.target_columns();
  double loss_sum = 0.0, cells = 0.0;
  Rng rng(0);
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const auto chunk = examples.subspan(start, std::min(batch_size, examples.size() - start));
    const Batch batch = make_batch(chunk);
    ad::Graph g;
    const auto bound = bind(g, model.params(), false);
    const ad::Var probs = model.forward(g, batch, bound, Mode::infer, rng);
    const Tensor cls = select_columns(batch.target_class, cols);
    const Tensor mask = select_columns(batch.target_mask, cols);
    double n = 0.0;
    for (double m : mask.data()) n += m;
    loss_sum += ad::masked_bce(probs, cls, mask).value()[0] * n;
    cells += n;
    const Tensor& p = probs.value();
    for (std::size_t r = 0; r < batch.rows; ++r) {
      for (std::size_t c = 0; c < cols.size(); ++c) {
        if (mask[r * cols.size() + c] == 0.0) continue;
        ev.scores[cols[c]].push_back(p[r * cols.size() + c]);
        ev.labels[cols[c]].push_back(static_cast<int>(cls[r * cols.size() + c]));
      }
    }
  }
  ev.loss = cells > 0.0 ? loss_sum / cells : 0.0;
  return ev;
}

/// Adam with per-epoch shuffling, early stopping on validation loss and
/// learning-rate reduction on plateaus. Returns with the model holding the
/// parameters of the epoch with the lowest validation loss.
template <TrainableModel M>
TrainHistory fit(M& model, std::span<const Example> train, std::span<const Example> validation,
                 const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty() || validation.empty()) throw std::invalid_argument("fit: train and validation sets must be nonempty");
  const auto cols = model.target_columns();
  Rng rng(derive_seed(cfg.seed, 0xf17));
  AdamState state = AdamState::zeros_like(model.params());
  double lr = cfg.learning_rate;

  TrainHistory history;
  ParamSet best = model.params();
  double best_loss = std::numeric_limits<double>::infinity();
  double reference = std::numeric_limits<double>::infinity();
  std::size_t wait = 0, plateau_wait = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Example> chunk;
  std::vector<Tensor> grads;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      chunk.clear();
      for (std::size_t i = start; i < std::min(start + cfg.batch_size, order.size()); ++i) chunk.push_back(train[order[i]]);
      const Batch batch = make_batch(chunk);
      ad::Graph g;
      const auto bound = bind(g, model.params(), true);
      const ad::Var probs = model.forward(g, batch, bound, Mode::train, rng);
      const ad::Var loss =
          ad::masked_bce(probs, select_columns(batch.target_class, cols), select_columns(batch.target_mask, cols));
      g.backward(loss);
      grads.clear();
      for (const ad::Var& v : bound) grads.push_back(g.grad(v));
      adam_step(model.params(), grads, state, lr, cfg);
      loss_sum += loss.value()[0];
      ++steps;
    }

    const Evaluation ev = evaluate(model, validation);
    if (!std::isfinite(ev.loss)) {
      throw TrainingError("validation loss is not finite at epoch " + std::to_string(epoch) + " (lr " +
                          csv::format_double(lr) + ", last train loss " +
                          csv::format_double(steps ? loss_sum / static_cast<double>(steps) : 0.0) + ")");
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(steps), ev.loss, {}, lr};
    for (std::size_t c = 0; c < kTargetCount; ++c) stats.val_auc[c] = ev.auc(c);
    history.epochs.push_back(stats);

    if (ev.loss < best_loss) {
      best_loss = ev.loss;
      history.best_epoch = epoch;
      best = model.params();
    }
    if (ev.loss < reference - cfg.min_delta) {
      reference = ev.loss;
      wait = 0;
      plateau_wait = 0;
    } else {
      ++wait;
      ++plateau_wait;
      if (wait >= cfg.early_stop_patience) {
        history.stop_reason = "early stopping";
        break;
      }
      if (plateau_wait >= cfg.plateau_patience) {
        lr = std::max(lr * cfg.lr_factor, cfg.min_lr);
        plateau_wait = 0;
      }
    }
  }
  if (history.stop_reason.empty()) history.stop_reason = "max epochs";
  model.params() = best;
  return history;
}

}  // namespace ulm
