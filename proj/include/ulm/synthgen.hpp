#pragma once

// Synthetic laboratory reports with planted input -> target rules.
//
// Per record (own counter-derived stream):
//   inputs   log-normal marginals truncated to the reference ranges; the
//            white-cell differential is normalised to 100 % with
//            GRA = NEUT + EOS and MID = MONO + BASO
//   latent   L_t = sum_j w_tj * z_j + noise_t * eps, z_j the standardised
//            log value of input j (computed before any masking)
//   target   abnormal iff L_t >= c_t, c_t the (1 - rate_t) quantile of L_t
//            estimated once per config on a calibration stream; the raw
//            analyte value is placed on the matching side of its threshold
//   masks    independent Bernoulli per feature (age and gender never
//            missing), or tied to the latent health state in the
//            missing-informative variant; then repaired to keep at least
//            `min_lab_tests` input tests and one target

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ulm/applicability.hpp"
#include "ulm/catalog.hpp"
#include "ulm/metrics.hpp"
#include "ulm/random.hpp"
#include "ulm/record.hpp"
#include "ulm/targets.hpp"

namespace ulm {

class SynthConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Log-normal marginal of (v + 1e-3).
struct Marginal {
  double mu = 0.0;
  double sigma = 1.0;
};

struct PlantedRule {
  std::vector<std::pair<FeatureId, double>> weights;
  double noise = 0.5;
  double abnormal_rate = 0.2;
};

inline constexpr int kMinAge = 18;
inline constexpr int kMaxAge = 90;
inline constexpr double kTargetSpread = 0.25;  // log-units per latent sd
inline constexpr std::size_t kCalibrationDraws = 100000;

struct SynthConfig {
  std::size_t n_records = 20000;
  std::uint64_t seed = 0;
  std::array<double, kFeatureCount> missingness{};  // by id - 1
  std::array<Marginal, kFeatureCount> marginals{};  // used for non-target lab inputs
  std::array<PlantedRule, kTargetCount> rules{};    // target-column order
  bool missing_informative = false;
  double informative_strength = 1.5;
  std::size_t min_lab_tests = 3;
  double max_repair_fraction = 0.05;
  Thresholds thresholds{};

  /// Marginals centred on each reference range in log space with 99.9 % of
  /// the mass well inside it, and fixed sparse rules.
  static SynthConfig defaults(double missing_rate = 0.3) {
    SynthConfig c;
    for (const Feature& f : FeatureCatalog::standard().features()) {
      const auto i = static_cast<std::size_t>(f.id - 1);
      c.missingness[i] = (f.id == fid::age || f.id == fid::gender) ? 0.0 : missing_rate;
      const double lo = std::log(std::max(f.range_min, 1e-3 * f.range_max) + 1e-3);
      const double hi = std::log(f.range_max + 1e-3);
      c.marginals[i] = {(lo + hi) / 2.0, (hi - lo) / (2.0 * 3.29 * 1.5)};
    }
    c.rules[0] = {{{fid::age, 0.8}, {fid::wbc, 0.5}, {fid::urea, 0.6}, {fid::alt, 0.4}}, 0.5, 0.15};
    c.rules[1] = {{{fid::age, 0.6}, {fid::alt, 0.5}, {fid::pro, 0.7}, {fid::ldh, -0.4}}, 0.5, 0.35};
    c.rules[2] = {{{fid::hgb, -1.0}, {fid::mcv, -0.7}, {fid::rbc, -0.3}, {fid::crp, 0.4}}, 0.5, 0.12};
    c.rules[3] = {{{fid::crea, 0.8}, {fid::urea, 0.6}, {fid::gender, 0.5}, {fid::age, 0.3}}, 0.5, 0.20};
    return c;
  }

  void validate() const;
};

namespace synth_detail {

inline bool is_demographic(FeatureId f) { return f == fid::age || f == fid::gender; }

inline double round_sig6(double v) {
  if (v == 0.0) return 0.0;
  const double mag = std::pow(10.0, 5 - static_cast<int>(std::floor(std::log10(std::abs(v)))));
  return std::round(v * mag) / mag;
}

inline double age_sd() {
  const double n = kMaxAge - kMinAge + 1;
  return std::sqrt((n * n - 1.0) / 12.0);
}

/// Standardised value used by the planted rules.
inline double standardized(FeatureId f, double v, const SynthConfig& c) {
  if (f == fid::gender) return v == 1.0 ? 1.0 : -1.0;
  if (f == fid::age) return (v - 0.5 * (kMinAge + kMaxAge)) / age_sd();
  const Marginal& m = c.marginals[static_cast<std::size_t>(f - 1)];
  return (std::log(v + 1e-3) - m.mu) / m.sigma;
}

inline double draw_marginal(const Feature& f, const Marginal& m, Rng& rng) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const double v = round_sig6(std::exp(m.mu + m.sigma * rng.normal()) - 1e-3);
    if (v >= f.range_min && v <= f.range_max) return v;
  }
  throw SynthConfigError("marginal of " + f.code + " has almost no mass inside its range");
}

/// Complete value vector (by id - 1) for every non-target feature.
inline std::array<double, kFeatureCount> draw_inputs(const SynthConfig& c, Rng& rng) {
  const auto& cat = FeatureCatalog::standard();
  std::array<double, kFeatureCount> v{};
  for (const Feature& f : cat.features()) {
    const auto i = static_cast<std::size_t>(f.id - 1);
    if (FeatureCatalog::is_target(f.id)) continue;
    if (f.id == fid::age) {
      v[i] = kMinAge + static_cast<double>(rng.below(kMaxAge - kMinAge + 1));
    } else if (f.id == fid::gender) {
      v[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    } else if (f.id != fid::gra && f.id != fid::mid) {
      v[i] = draw_marginal(f, c.marginals[i], rng);
    }
  }
  // white-cell differential: five parts summing to 100, with the three-part
  // aggregates derived from them
  auto at = [&](FeatureId f) -> double& { return v[static_cast<std::size_t>(f - 1)]; };
  for (int attempt = 0;; ++attempt) {
    if (attempt == 10000) throw SynthConfigError("cannot draw a white-cell differential inside the ranges");
    double sum = 0.0;
    for (FeatureId f : kFiveDiff) sum += at(f);
    bool ok = true;
    for (FeatureId f : kFiveDiff) {
      at(f) = round_sig6(at(f) * 100.0 / sum);
      ok = ok && cat.at(f).range_min <= at(f) && at(f) <= cat.at(f).range_max;
    }
    at(fid::gra) = round_sig6(at(fid::neut) + at(fid::eos));
    at(fid::mid) = round_sig6(at(fid::mono) + at(fid::baso));
    for (FeatureId f : {fid::gra, fid::mid}) ok = ok && cat.at(f).range_min <= at(f) && at(f) <= cat.at(f).range_max;
    if (ok) break;
    for (FeatureId f : kFiveDiff) at(f) = draw_marginal(cat.at(f), c.marginals[static_cast<std::size_t>(f - 1)], rng);
  }
  return v;
}

inline double latent(const PlantedRule& rule, const std::array<double, kFeatureCount>& v, const SynthConfig& c,
                     Rng& rng) {
  double l = 0.0;
  for (const auto& [f, w] : rule.weights) l += w * standardized(f, v[static_cast<std::size_t>(f - 1)], c);
  return l + rule.noise * rng.normal();
}

inline double rule_sd(const PlantedRule& r) {
  double s = r.noise * r.noise;
  for (const auto& [f, w] : r.weights) s += w * w;
  return std::sqrt(s);
}

/// Raw analyte value on the side of the clinical threshold given by `abnormal`.
inline double target_value(FeatureId t, double d, bool abnormal, double gender, const Thresholds& th) {
  const Feature& f = FeatureCatalog::standard().at(t);
  const bool low_is_abnormal = t == fid::fer;
  double thr = 0.0;
  switch (t) {
    case fid::glu: thr = th.glucose_high; break;
    case fid::chol: thr = th.cholesterol_high; break;
    case fid::fer: thr = th.ferritin_low; break;
    default: thr = gender == 1.0 ? th.uric_high_male : th.uric_high_female; break;
  }
  double v = thr * std::exp((low_is_abnormal ? -1.0 : 1.0) * kTargetSpread * d);
  v = round_sig6(std::clamp(v, f.range_min, f.range_max));
  if (classify(t, v, gender, th) != static_cast<int>(abnormal)) {
    // rounding landed on the wrong side of the threshold
    const double off = round_sig6(thr * (low_is_abnormal ? 1.00001 : 0.99999));
    v = abnormal ? thr : off;
  }
  return v;
}

struct Draw {
  std::array<double, kFeatureCount> values{};
  std::array<double, kTargetCount> latents{};
};

inline Draw draw_complete(const SynthConfig& c, Rng& rng) {
  Draw d;
  d.values = draw_inputs(c, rng);
  for (std::size_t t = 0; t < kTargetCount; ++t) d.latents[t] = latent(c.rules[t], d.values, c, rng);
  return d;
}

/// Probability that an input (or target, when `any_target`) mask needs repair.
inline double repair_probability(const SynthConfig& c) {
  std::vector<double> p_present;
  for (FeatureId f : FeatureCatalog::standard().input_features()) {
    if (!is_demographic(f)) p_present.push_back(1.0 - c.missingness[static_cast<std::size_t>(f - 1)]);
  }
  // Poisson-binomial distribution of the number of present lab inputs
  std::vector<double> dist{1.0};
  for (double p : p_present) {
    std::vector<double> next(dist.size() + 1, 0.0);
    for (std::size_t k = 0; k < dist.size(); ++k) {
      next[k] += dist[k] * (1.0 - p);
      next[k + 1] += dist[k] * p;
    }
    dist = std::move(next);
  }
  double too_few = 0.0;
  for (std::size_t k = 0; k < std::min(c.min_lab_tests, dist.size()); ++k) too_few += dist[k];
  double no_target = 1.0;
  for (FeatureId t : kTargets) no_target *= c.missingness[static_cast<std::size_t>(t - 1)];
  return too_few + no_target - too_few * no_target;
}

}  // namespace synth_detail

inline void SynthConfig::validate() const {
  if (n_records == 0) throw SynthConfigError("synth: n_records must be positive");
  for (const Feature& f : FeatureCatalog::standard().features()) {
    const double m = missingness[static_cast<std::size_t>(f.id - 1)];
    if (!(m >= 0.0 && m < 1.0)) throw SynthConfigError("synth: missingness of " + f.code + " must be in [0, 1)");
    if (synth_detail::is_demographic(f.id) && m != 0.0) {
      throw SynthConfigError("synth: " + f.code + " is always present; its missingness must be 0");
    }
    const Marginal& g = marginals[static_cast<std::size_t>(f.id - 1)];
    if (!FeatureCatalog::is_target(f.id) && !synth_detail::is_demographic(f.id) &&
        !(std::isfinite(g.mu) && g.sigma > 0.0)) {
      throw SynthConfigError("synth: marginal of " + f.code + " needs finite mu and positive sigma");
    }
  }
  for (const PlantedRule& r : rules) {
    if (!(r.abnormal_rate > 0.0 && r.abnormal_rate < 1.0)) throw SynthConfigError("synth: abnormal_rate must be in (0, 1)");
    if (!(r.noise >= 0.0)) throw SynthConfigError("synth: noise must be non-negative");
    if (synth_detail::rule_sd(r) == 0.0) throw SynthConfigError("synth: a rule needs a weight or noise");
    for (const auto& [f, w] : r.weights) {
      if (f < 1 || f > static_cast<FeatureId>(kFeatureCount) || FeatureCatalog::is_target(f)) {
        throw SynthConfigError("synth: rule weight on feature " + std::to_string(f) + " is not an input");
      }
      if (!std::isfinite(w)) throw SynthConfigError("synth: rule weights must be finite");
    }
  }
  const std::size_t labs = kInputCount - 2;
  if (min_lab_tests > labs) throw SynthConfigError("synth: min_lab_tests exceeds the number of lab inputs");
  if (!(informative_strength >= 0.0)) throw SynthConfigError("synth: informative_strength must be non-negative");
  const double p = synth_detail::repair_probability(*this);
  if (p > max_repair_fraction) {
    throw SynthConfigError("synth: missingness too high; " + csv::format_double(100.0 * p) +
                           " % of records would need repair (limit " +
                           csv::format_double(100.0 * max_repair_fraction) + " %)");
  }
}

/// Per-target latent cutoffs (the (1 - rate) quantiles), fixed by the config.
inline std::array<double, kTargetCount> latent_cutoffs(const SynthConfig& c) {
  std::array<std::vector<double>, kTargetCount> samples;
  for (auto& s : samples) s.reserve(kCalibrationDraws);
  for (std::size_t i = 0; i < kCalibrationDraws; ++i) {
    Rng rng(derive_seed(derive_seed(c.seed, 0xca11b), i));
    const auto d = synth_detail::draw_complete(c, rng);
    for (std::size_t t = 0; t < kTargetCount; ++t) samples[t].push_back(d.latents[t]);
  }
  std::array<double, kTargetCount> cut{};
  for (std::size_t t = 0; t < kTargetCount; ++t) {
    auto& s = samples[t];
    const auto k = static_cast<std::size_t>(std::floor((1.0 - c.rules[t].abnormal_rate) * static_cast<double>(s.size())));
    std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(k), s.end());
    cut[t] = s[k];
  }
  return cut;
}

namespace synth_detail {

/// One record from its own stream; `full` holds the pre-mask values.
inline LabRecord make_record(const SynthConfig& c, const std::array<double, kTargetCount>& cut, Rng& rng,
                             Draw* full = nullptr) {
  const Draw d = draw_complete(c, rng);
  std::array<double, kFeatureCount> v = d.values;
  const double gender = v[static_cast<std::size_t>(fid::gender - 1)];
  double health = 0.0;
  for (std::size_t t = 0; t < kTargetCount; ++t) {
    const double z = (d.latents[t] - cut[t]) / rule_sd(c.rules[t]);
    health += z / static_cast<double>(kTargetCount);
    v[static_cast<std::size_t>(kTargets[t] - 1)] = target_value(kTargets[t], z, d.latents[t] >= cut[t], gender,
                                                                c.thresholds);
  }

  std::array<bool, kFeatureCount> present{};
  for (const Feature& f : FeatureCatalog::standard().features()) {
    const auto i = static_cast<std::size_t>(f.id - 1);
    double p_missing = c.missingness[i];
    if (c.missing_informative && !is_demographic(f.id) && !FeatureCatalog::is_target(f.id) && p_missing > 0.0) {
      // sicker patients get more tests ordered
      const double logit = std::log(p_missing / (1.0 - p_missing)) - c.informative_strength * health;
      p_missing = 1.0 / (1.0 + std::exp(-logit));
    }
    present[i] = !rng.bernoulli(p_missing);
  }

  std::vector<FeatureId> missing_labs, missing_targets;
  std::size_t labs = 0;
  bool any_target = false;
  for (const Feature& f : FeatureCatalog::standard().features()) {
    const auto i = static_cast<std::size_t>(f.id - 1);
    if (is_demographic(f.id)) continue;
    if (FeatureCatalog::is_target(f.id)) {
      any_target = any_target || present[i];
      if (!present[i]) missing_targets.push_back(f.id);
    } else {
      labs += present[i] ? 1 : 0;
      if (!present[i]) missing_labs.push_back(f.id);
    }
  }
  rng.shuffle(std::span<FeatureId>(missing_labs));
  for (std::size_t k = 0; labs < c.min_lab_tests; ++k, ++labs) {
    present[static_cast<std::size_t>(missing_labs[k] - 1)] = true;
  }
  if (!any_target) present[static_cast<std::size_t>(missing_targets[rng.below(missing_targets.size())] - 1)] = true;

  LabRecord r(Provenance::synthetic);
  for (const Feature& f : FeatureCatalog::standard().features()) {
    const auto i = static_cast<std::size_t>(f.id - 1);
    if (present[i]) r.set(f.id, v[i]);
  }
  if (full) {
    *full = d;
    full->values = v;
  }
  return r;
}

}  // namespace synth_detail

/// Deterministic in (config, seed); record i depends only on its own stream.
inline std::vector<LabRecord> generate(const SynthConfig& c) {
  c.validate();
  const auto cut = latent_cutoffs(c);
  std::vector<LabRecord> out;
  out.reserve(c.n_records);
  for (std::size_t i = 0; i < c.n_records; ++i) {
    Rng rng(derive_seed(c.seed, i));
    out.push_back(synth_detail::make_record(c, cut, rng));
  }
  return out;
}

/// Score of the planted rule restricted to the observed inputs of a record.
inline double planted_score(const SynthConfig& c, std::size_t target_column, const LabRecord& r) {
  double s = 0.0;
  for (const auto& [f, w] : c.rules[target_column].weights) {
    if (const auto v = r.get(f)) s += w * synth_detail::standardized(f, *v, c);
  }
  return s;
}

/// Monte-Carlo AUC of the planted score given the observed inputs: the
/// ceiling a model trained on this generator can approach. Draws come from a
/// stream disjoint from generate().
inline std::array<double, kTargetCount> reference_auc(const SynthConfig& c, std::size_t n_monte_carlo) {
  if (n_monte_carlo < 100000) throw std::invalid_argument("reference_auc needs at least 1e5 draws");
  c.validate();
  const auto cut = latent_cutoffs(c);
  std::array<std::vector<double>, kTargetCount> scores;
  std::array<std::vector<int>, kTargetCount> labels;
  for (std::size_t i = 0; i < n_monte_carlo; ++i) {
    Rng rng(derive_seed(derive_seed(c.seed, 0x7ef), i));
    const LabRecord r = synth_detail::make_record(c, cut, rng);
    const TargetLabels lab = label_targets(r, c.thresholds);
    for (std::size_t t = 0; t < kTargetCount; ++t) {
      if (!lab[t].present) continue;
      scores[t].push_back(planted_score(c, t, r));
      labels[t].push_back(lab[t].cls);
    }
  }
  std::array<double, kTargetCount> out{};
  for (std::size_t t = 0; t < kTargetCount; ++t) out[t] = auc_rank(scores[t], labels[t]);
  return out;
}

}  // namespace ulm
