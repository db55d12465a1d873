#pragma once

// JSON run configuration. Every section and key is optional; unknown keys
// are errors. Schema (defaults shown):
//
// {
//   "seed": 0,
//   "model": {"kind": "ulm", "dim": 64, "heads": 8, "key_dim": 16,
//             "encoder_blocks": 1, "decoder_blocks": 1, "dropout": 0.1,
//             "residual": false, "mlp_hidden": 256,
//             "embeddings": {"source": "pseudo", "seed": 0, "scale": 1}},
//   "train": {"max_epochs": 1000, "batch_size": 32, "learning_rate": null,
//             "early_stop_patience": 20, "min_delta": 1e-4, "plateau_patience": 10,
//             "lr_factor": 0.5, "min_lr": 1e-6, "test_fraction": 0.2,
//             "validation_fraction": 0.1},
//   "synth": {"n_records": 20000, "missingness": 0.3, "missing_informative": false,
//             "informative_strength": 1.5, "min_lab_tests": 3, "max_repair_fraction": 0.05,
//             "noise": 0.5},
//   "thresholds": {"glucose_high": 7.0, "cholesterol_high": 5.2, "ferritin_low": 12.0,
//                  "uric_high_male": 0.48, "uric_high_female": 0.38},
//   "inference": {"threshold": 0.5, "ad_policy": "reject"},
//   "paths": {"data": null, "ranges": null}
// }
//
// model.embeddings may instead be {"source": "file", "path": "...", "scale": 1};
// scale multiplies every table entry. A null learning rate picks 1e-4 for
// ULM and 1e-3 for the MLPs. Relative paths are resolved against the config
// file's directory.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "ulm/checkpoint.hpp"
#include "ulm/synthgen.hpp"
#include "ulm/trainer.hpp"

namespace ulm {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class AdPolicy { reject, warn };

inline AdPolicy parse_ad_policy(std::string_view s) {
  if (s == "reject") return AdPolicy::reject;
  if (s == "warn") return AdPolicy::warn;
  throw ConfigError("ad_policy must be 'reject' or 'warn', got '" + std::string(s) + "'");
}

struct InferenceConfig {
  double threshold = 0.5;
  AdPolicy ad_policy = AdPolicy::reject;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelKind kind = ModelKind::ulm;
  UlmConfig ulm{};
  std::size_t mlp_hidden = MlpModel::kDefaultHidden;
  EmbeddingSource embedding{};
  TrainConfig train{};
  std::optional<double> learning_rate;
  double test_fraction = 0.2;
  double validation_fraction = 0.1;
  SynthConfig synth = SynthConfig::defaults();
  Thresholds thresholds{};
  InferenceConfig inference{};
  std::optional<std::string> data_path;
  std::optional<std::string> ranges_path;

  void reseed(std::uint64_t s) {
    seed = s;
    train.seed = s;
    synth.seed = s;
  }

  double effective_learning_rate() const {
    if (learning_rate) return *learning_rate;
    return kind == ModelKind::ulm ? TrainConfig::kUlmLearningRate : TrainConfig::kMlpLearningRate;
  }
};

namespace config_detail {

using nlohmann::json;

inline void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

inline std::string resolve(const std::string& p, const std::filesystem::path& base) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? p : (base / path).string();
}

}  // namespace config_detail

/// Parses a config document; `base_dir` anchors relative paths.
inline RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using namespace config_detail;
  RunConfig c;
  only_keys(j, "config", {"seed", "model", "train", "synth", "thresholds", "inference", "paths"});
  read(j, "seed", c.seed, "config");

  if (j.contains("model")) {
    const json& m = j.at("model");
    only_keys(m, "model", {"kind", "dim", "heads", "key_dim", "encoder_blocks", "decoder_blocks", "dropout",
                           "residual", "mlp_hidden", "embeddings"});
    std::string kind = to_string(c.kind);
    read(m, "kind", kind, "model");
    try {
      c.kind = parse_model_kind(kind);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    read(m, "dim", c.ulm.dim, "model");
    read(m, "heads", c.ulm.heads, "model");
    read(m, "key_dim", c.ulm.key_dim, "model");
    read(m, "encoder_blocks", c.ulm.encoder_blocks, "model");
    read(m, "decoder_blocks", c.ulm.decoder_blocks, "model");
    read(m, "dropout", c.ulm.dropout, "model");
    read(m, "residual", c.ulm.residual, "model");
    read(m, "mlp_hidden", c.mlp_hidden, "model");
    if (m.contains("embeddings")) {
      const json& e = m.at("embeddings");
      only_keys(e, "model.embeddings", {"source", "seed", "path", "scale"});
      read(e, "scale", c.embedding.scale, "model.embeddings");
      if (!(c.embedding.scale > 0.0)) throw ConfigError("model.embeddings.scale must be positive");
      std::string source = "pseudo";
      read(e, "source", source, "model.embeddings");
      if (source == "pseudo") {
        c.embedding.provenance = EmbeddingProvenance::pseudo;
        read(e, "seed", c.embedding.seed, "model.embeddings");
      } else if (source == "file") {
        c.embedding.provenance = EmbeddingProvenance::file;
        read(e, "path", c.embedding.path, "model.embeddings");
        if (c.embedding.path.empty()) throw ConfigError("model.embeddings.path is required for source 'file'");
        c.embedding.path = resolve(c.embedding.path, base_dir);
      } else {
        throw ConfigError("model.embeddings.source must be 'pseudo' or 'file'");
      }
    }
    if (!(c.ulm.dropout >= 0.0 && c.ulm.dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
    if (c.ulm.dim == 0 || c.ulm.heads == 0 || c.ulm.key_dim == 0 || c.mlp_hidden == 0 ||
        c.ulm.encoder_blocks == 0 || c.ulm.decoder_blocks == 0) {
      throw ConfigError("model sizes must be positive");
    }
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    only_keys(t, "train", {"max_epochs", "batch_size", "learning_rate", "early_stop_patience", "min_delta",
                           "plateau_patience", "lr_factor", "min_lr", "test_fraction", "validation_fraction"});
    read(t, "max_epochs", c.train.max_epochs, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    if (t.contains("learning_rate") && !t.at("learning_rate").is_null()) {
      double lr = 0.0;
      read(t, "learning_rate", lr, "train");
      c.learning_rate = lr;
    }
    read(t, "early_stop_patience", c.train.early_stop_patience, "train");
    read(t, "min_delta", c.train.min_delta, "train");
    read(t, "plateau_patience", c.train.plateau_patience, "train");
    read(t, "lr_factor", c.train.lr_factor, "train");
    read(t, "min_lr", c.train.min_lr, "train");
    read(t, "test_fraction", c.test_fraction, "train");
    read(t, "validation_fraction", c.validation_fraction, "train");
  }
  c.train.seed = c.seed;
  c.train.learning_rate = c.effective_learning_rate();
  try {
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) throw ConfigError("train.test_fraction must be in (0, 1)");
  if (!(c.validation_fraction > 0.0 && c.validation_fraction < 1.0)) {
    throw ConfigError("train.validation_fraction must be in (0, 1)");
  }

  if (j.contains("thresholds")) {
    const json& t = j.at("thresholds");
    only_keys(t, "thresholds",
              {"glucose_high", "cholesterol_high", "ferritin_low", "uric_high_male", "uric_high_female"});
    read(t, "glucose_high", c.thresholds.glucose_high, "thresholds");
    read(t, "cholesterol_high", c.thresholds.cholesterol_high, "thresholds");
    read(t, "ferritin_low", c.thresholds.ferritin_low, "thresholds");
    read(t, "uric_high_male", c.thresholds.uric_high_male, "thresholds");
    read(t, "uric_high_female", c.thresholds.uric_high_female, "thresholds");
  }

  double missing = 0.3, noise = 0.5;
  SynthConfig s = SynthConfig::defaults(missing);
  if (j.contains("synth")) {
    const json& y = j.at("synth");
    only_keys(y, "synth", {"n_records", "missingness", "missing_informative", "informative_strength",
                           "min_lab_tests", "max_repair_fraction", "noise"});
    read(y, "missingness", missing, "synth");
    s = SynthConfig::defaults(missing);
    read(y, "n_records", s.n_records, "synth");
    read(y, "missing_informative", s.missing_informative, "synth");
    read(y, "informative_strength", s.informative_strength, "synth");
    read(y, "min_lab_tests", s.min_lab_tests, "synth");
    read(y, "max_repair_fraction", s.max_repair_fraction, "synth");
    read(y, "noise", noise, "synth");
    for (PlantedRule& r : s.rules) r.noise = noise;
  }
  s.seed = c.seed;
  s.thresholds = c.thresholds;
  try {
    s.validate();
  } catch (const SynthConfigError& e) {
    throw ConfigError(e.what());
  }
  c.synth = s;

  if (j.contains("inference")) {
    const json& i = j.at("inference");
    only_keys(i, "inference", {"threshold", "ad_policy"});
    read(i, "threshold", c.inference.threshold, "inference");
    std::string policy = "reject";
    read(i, "ad_policy", policy, "inference");
    c.inference.ad_policy = parse_ad_policy(policy);
    if (!(c.inference.threshold > 0.0 && c.inference.threshold < 1.0)) {
      throw ConfigError("inference.threshold must be in (0, 1)");
    }
  }

  if (j.contains("paths")) {
    const json& p = j.at("paths");
    only_keys(p, "paths", {"data", "ranges"});
    std::string v;
    if (p.contains("data") && !p.at("data").is_null()) {
      read(p, "data", v, "paths");
      c.data_path = resolve(v, base_dir);
    }
    if (p.contains("ranges") && !p.at("ranges").is_null()) {
      read(p, "ranges", v, "paths");
      c.ranges_path = resolve(v, base_dir);
    }
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(j, std::filesystem::path(path).parent_path());
}

}  // namespace ulm
