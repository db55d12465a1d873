#pragma once

// Binary checkpoint container, all integers and floats little-endian:
//
//   0   8 bytes  magic "ULMCKPT\0"
//   8   u32      format version
//   12  u64      catalog hash
//   20  u32      metadata length n, then n bytes of JSON
//       u32      tensor count, then per tensor:
//                u32 name length, name, u32 rank, rank x u64 dims, f64 data
//
// The metadata records the model kind and architecture, the embedding
// provenance, thresholds, scaler ranges and the training seed. ULM
// checkpoints carry the embedding table itself as "embeddings.table".

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ulm/applicability.hpp"
#include "ulm/batch.hpp"
#include "ulm/embeddings.hpp"
#include "ulm/model.hpp"
#include "ulm/scaling.hpp"
#include "ulm/targets.hpp"

namespace ulm {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kCheckpointMagic{"ULMCKPT\0", 8};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kCatalogHashOffset = 12;
inline constexpr std::string_view kEmbeddingTensor = "embeddings.table";

enum class ModelKind { ulm, mlp_m, mlp_b };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::ulm: return "ulm";
    case ModelKind::mlp_m: return "mlp_m";
    default: return "mlp_b";
  }
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "ulm") return ModelKind::ulm;
  if (s == "mlp_m") return ModelKind::mlp_m;
  if (s == "mlp_b") return ModelKind::mlp_b;
  throw std::invalid_argument("unknown model kind '" + std::string(s) + "' (expected ulm, mlp_m or mlp_b)");
}

struct EmbeddingSource {
  EmbeddingProvenance provenance = EmbeddingProvenance::pseudo;
  std::uint64_t seed = 0;
  std::string path;
  double scale = 1.0;
};

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

/// A trained model of any kind plus everything needed to score raw records.
struct ModelBundle {
  ModelKind kind = ModelKind::ulm;
  std::optional<UlmModel> ulm;
  std::vector<MlpModel> mlps;  // one for mlp_m, four in target order for mlp_b
  EmbeddingSource embedding;
  Thresholds thresholds;
  Scaler scaler;
  std::uint64_t seed = 0;
  std::string version;  // hash of the checkpoint bytes, set by save and load

  /// Probabilities [B, 4] in target-column order.
  Tensor predict(const Batch& b) const {
    if (kind == ModelKind::ulm) return ulm->predict(b);
    if (kind == ModelKind::mlp_m) return mlps.at(0).predict(b);
    Tensor out({b.rows, kTargetCount});
    for (std::size_t t = 0; t < kTargetCount; ++t) {
      const Tensor p = mlps.at(t).predict(b);
      for (std::size_t i = 0; i < b.rows; ++i) out[i * kTargetCount + t] = p[i];
    }
    return out;
  }
};

namespace ckpt_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    const std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    const std::string_view s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return v;
  }
  std::uint64_t u64(const char* what) {
    const std::string_view s = take(8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u64(out, d);
  for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline std::string target_prefix(std::size_t column) {
  std::string code = FeatureCatalog::standard().at(kTargets[column]).code;
  for (char& c : code) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return code + ".";
}

inline nlohmann::json meta_json(const ModelBundle& m, std::uint64_t catalog_hash) {
  nlohmann::json j;
  j["kind"] = to_string(m.kind);
  j["seed"] = m.seed;
  j["catalog_hash"] = hex64(catalog_hash);
  j["thresholds"] = {{"glucose_high", m.thresholds.glucose_high},
                     {"cholesterol_high", m.thresholds.cholesterol_high},
                     {"ferritin_low", m.thresholds.ferritin_low},
                     {"uric_high_male", m.thresholds.uric_high_male},
                     {"uric_high_female", m.thresholds.uric_high_female}};
  nlohmann::json ranges = nlohmann::json::array();
  for (const AdRange& r : m.scaler.ranges().all()) {
    ranges.push_back({{"feature", FeatureCatalog::standard().at(r.feature).code},
                      {"min", r.min},
                      {"max", r.max},
                      {"coverage", r.coverage}});
  }
  j["ranges"] = std::move(ranges);
  if (m.kind == ModelKind::ulm) {
    const UlmConfig& c = m.ulm->config();
    j["model"] = {{"dim", c.dim},
                  {"heads", c.heads},
                  {"key_dim", c.key_dim},
                  {"encoder_blocks", c.encoder_blocks},
                  {"decoder_blocks", c.decoder_blocks},
                  {"dropout", c.dropout},
                  {"residual", c.residual}};
    const bool pseudo = m.embedding.provenance == EmbeddingProvenance::pseudo;
    j["embedding"] = {{"provenance", pseudo ? "pseudo" : "file"}};
    if (pseudo) j["embedding"]["seed"] = m.embedding.seed;
    else j["embedding"]["path"] = m.embedding.path;
    j["embedding"]["scale"] = m.embedding.scale;
  } else {
    j["model"] = {{"hidden", m.mlps.at(0).hidden()}};
  }
  return j;
}

template <class T>
T field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw CheckpointError(std::string("checkpoint metadata lacks '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw CheckpointError(std::string("checkpoint metadata field '") + key + "' has the wrong type");
  }
}

}  // namespace ckpt_detail

/// Serialises `m`. Saving a loaded bundle reproduces the original bytes.
inline std::string save_checkpoint(const ModelBundle& m,
                                   const FeatureCatalog& catalog = FeatureCatalog::standard()) {
  using namespace ckpt_detail;
  const std::uint64_t h = catalog.hash();
  const std::string meta = meta_json(m, h).dump();
  std::string out(kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, h);
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;

  std::vector<std::pair<std::string, const Tensor*>> tensors;
  if (m.kind == ModelKind::ulm) {
    if (!m.ulm) throw std::invalid_argument("checkpoint: ulm bundle without a model");
    tensors.emplace_back(std::string(kEmbeddingTensor), &m.ulm->table().rows());
    for (const Parameter& p : m.ulm->params().items()) tensors.emplace_back(p.name, &p.value);
  } else {
    const std::size_t want = m.kind == ModelKind::mlp_m ? 1 : kTargetCount;
    if (m.mlps.size() != want) throw std::invalid_argument("checkpoint: wrong number of mlp networks");
    for (std::size_t i = 0; i < want; ++i) {
      const std::string prefix = m.kind == ModelKind::mlp_b ? target_prefix(i) : "";
      for (const Parameter& p : m.mlps[i].params().items()) tensors.emplace_back(prefix + p.name, &p.value);
    }
  }
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) put_tensor(out, name, *t);
  return out;
}

inline std::string model_version(std::string_view checkpoint_bytes) { return hex64(fnv1a(checkpoint_bytes)); }

inline ModelBundle load_checkpoint(std::string_view bytes,
                                   const FeatureCatalog& catalog = FeatureCatalog::standard()) {
  using namespace ckpt_detail;
  Reader in(bytes);
  if (in.take(kCheckpointMagic.size(), "magic") != kCheckpointMagic) throw CheckpointError("not a ULM checkpoint");
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t h = in.u64("catalog hash");
  if (h != catalog.hash()) {
    throw CheckpointError("checkpoint catalog hash " + hex64(h) + " does not match feature catalog " +
                          hex64(catalog.hash()));
  }
  const std::uint32_t meta_len = in.u32("metadata length");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in.take(meta_len, "metadata"));
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  if (field<std::string>(meta, "catalog_hash") != hex64(h)) {
    throw CheckpointError("checkpoint metadata catalog hash disagrees with the header");
  }

  std::vector<Parameter> tensors;
  const std::uint32_t count = in.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = in.u32("tensor name length");
    std::string name(in.take(name_len, "tensor name"));
    const std::uint32_t rank = in.u32("tensor rank");
    if (rank == 0 || rank > 8) throw CheckpointError("tensor " + name + " has invalid rank");
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<std::size_t>(in.u64("tensor dims")));
      if (shape.back() == 0 || n > (std::size_t{1} << 32) / shape.back()) {
        throw CheckpointError("tensor " + name + " has invalid dimensions");
      }
      n *= shape.back();
    }
    std::vector<double> data(n);
    for (double& v : data) v = std::bit_cast<double>(in.u64("tensor data"));
    tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  if (!in.done()) throw CheckpointError("trailing bytes after the last tensor");

  ModelBundle m;
  try {
    m.kind = parse_model_kind(field<std::string>(meta, "kind"));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(e.what());
  }
  m.seed = field<std::uint64_t>(meta, "seed");
  const auto th = field<nlohmann::json>(meta, "thresholds");
  m.thresholds = {field<double>(th, "glucose_high"), field<double>(th, "cholesterol_high"),
                  field<double>(th, "ferritin_low"), field<double>(th, "uric_high_male"),
                  field<double>(th, "uric_high_female")};
  AdRanges ranges;
  for (const auto& r : field<nlohmann::json>(meta, "ranges")) {
    const auto f = catalog.find(field<std::string>(r, "feature"));
    if (!f) throw CheckpointError("checkpoint range for unknown feature " + field<std::string>(r, "feature"));
    ranges.set({*f, field<double>(r, "min"), field<double>(r, "max"), field<double>(r, "coverage")});
  }
  if (!ranges.complete()) throw CheckpointError("checkpoint scaler ranges do not cover every feature");
  m.scaler = Scaler(std::move(ranges));

  const auto& model = field<nlohmann::json>(meta, "model");
  try {
    if (m.kind == ModelKind::ulm) {
      UlmConfig c;
      c.dim = field<std::size_t>(model, "dim");
      c.heads = field<std::size_t>(model, "heads");
      c.key_dim = field<std::size_t>(model, "key_dim");
      c.encoder_blocks = field<std::size_t>(model, "encoder_blocks");
      c.decoder_blocks = field<std::size_t>(model, "decoder_blocks");
      c.dropout = field<double>(model, "dropout");
      c.residual = field<bool>(model, "residual");
      const auto& e = field<nlohmann::json>(meta, "embedding");
      const bool pseudo = field<std::string>(e, "provenance") == "pseudo";
      m.embedding.provenance = pseudo ? EmbeddingProvenance::pseudo : EmbeddingProvenance::file;
      if (pseudo) m.embedding.seed = field<std::uint64_t>(e, "seed");
      else m.embedding.path = field<std::string>(e, "path");
      m.embedding.scale = field<double>(e, "scale");
      if (tensors.empty() || tensors.front().name != kEmbeddingTensor) {
        throw CheckpointError("ulm checkpoint lacks the embedding table");
      }
      EmbeddingTable table(std::move(tensors.front().value), m.embedding.provenance);
      ParamSet ps;
      for (std::size_t i = 1; i < tensors.size(); ++i) ps.add(tensors[i].name, std::move(tensors[i].value));
      m.ulm.emplace(c, std::move(table), std::move(ps));
    } else {
      const std::size_t nets = m.kind == ModelKind::mlp_m ? 1 : kTargetCount;
      if (tensors.size() != 4 * nets) throw CheckpointError("mlp checkpoint has the wrong number of tensors");
      for (std::size_t k = 0; k < nets; ++k) {
        const std::string prefix = m.kind == ModelKind::mlp_b ? target_prefix(k) : "";
        ParamSet ps;
        for (std::size_t i = 4 * k; i < 4 * k + 4; ++i) {
          if (!tensors[i].name.starts_with(prefix)) throw CheckpointError("unexpected tensor " + tensors[i].name);
          ps.add(tensors[i].name.substr(prefix.size()), std::move(tensors[i].value));
        }
        const MlpVariant v = m.kind == ModelKind::mlp_m ? MlpVariant::multitask : MlpVariant::binary;
        m.mlps.emplace_back(v, k, std::move(ps));
      }
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint does not match its architecture: ") + e.what());
  }
  m.version = model_version(bytes);
  return m;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void save_checkpoint_file(const std::string& path, ModelBundle& m) {
  const std::string bytes = save_checkpoint(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path);
  m.version = model_version(bytes);
}

inline ModelBundle load_checkpoint_file(const std::string& path) { return load_checkpoint(read_file_bytes(path)); }

}  // namespace ulm
