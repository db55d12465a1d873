#pragma once

// Frozen label embeddings, one vector per catalog feature, and the
// value-embedding layer y = embedding(feature) * value + B.

#include <cmath>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ulm/catalog.hpp"
#include "ulm/csv.hpp"
#include "ulm/random.hpp"
#include "ulm/tensor.hpp"

namespace ulm {

enum class EmbeddingProvenance { file, pseudo };

inline std::string to_string(EmbeddingProvenance p) { return p == EmbeddingProvenance::file ? "file" : "pseudo"; }

class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  /// `rows` is [features, dim] with row i holding feature id i + 1.
  EmbeddingTable(Tensor rows, EmbeddingProvenance provenance) : rows_(std::move(rows)), provenance_(provenance) {
    if (rows_.rank() != 2) throw ShapeError("embedding table must be 2-D, got " + to_string(rows_.shape()));
    for (std::size_t f = 0; f < rows_.dim(0); ++f) {
      bool nonzero = false;
      for (double v : row(static_cast<FeatureId>(f + 1))) nonzero = nonzero || v != 0.0;
      if (!nonzero) throw DataError("embedding for feature " + std::to_string(f + 1) + " is all zero");
    }
  }

  std::size_t dim() const { return rows_.dim(1); }
  std::size_t features() const { return rows_.dim(0); }
  EmbeddingProvenance provenance() const noexcept { return provenance_; }
  const Tensor& rows() const noexcept { return rows_; }

  std::span<const double> row(FeatureId id) const {
    if (id < 1 || static_cast<std::size_t>(id) > rows_.dim(0)) {
      throw UnknownFeature("no embedding for feature id " + std::to_string(id));
    }
    return rows_.data().subspan(static_cast<std::size_t>(id - 1) * dim(), dim());
  }

 private:
  Tensor rows_;
  EmbeddingProvenance provenance_ = EmbeddingProvenance::pseudo;
};

/// Tab-separated `label<TAB>f1<TAB>...<TAB>fd`, one row per catalog feature,
/// labels matching the catalog byte for byte.
inline EmbeddingTable load_table(std::istream& in, const FeatureCatalog& catalog = FeatureCatalog::standard()) {
  std::vector<std::vector<double>> by_feature(catalog.size());
  std::size_t dim = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', start);
      cells.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const std::string& label = cells[0];
    std::optional<FeatureId> id;
    for (const Feature& f : catalog.features()) {
      if (f.label == label) id = f.id;
    }
    if (!id) throw DataError("embedding file line " + std::to_string(lineno) + ": unknown label \"" + label + "\"");
    std::vector<double> vec;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      const auto v = csv::parse_double(cells[i]);
      if (!v || !std::isfinite(*v)) {
        throw DataError("embedding file line " + std::to_string(lineno) + ": bad number \"" + cells[i] + "\"");
      }
      vec.push_back(*v);
    }
    if (vec.empty()) throw DataError("embedding file line " + std::to_string(lineno) + ": no values");
    if (dim == 0) dim = vec.size();
    if (vec.size() != dim) {
      throw DataError("embedding file line " + std::to_string(lineno) + ": ragged row (" + std::to_string(vec.size()) +
                      " values, expected " + std::to_string(dim) + ")");
    }
    auto& slot = by_feature[static_cast<std::size_t>(*id - 1)];
    if (!slot.empty()) throw DataError("embedding file: duplicate label \"" + label + "\"");
    slot = std::move(vec);
  }
  std::string missing;
  for (const Feature& f : catalog.features()) {
    if (by_feature[static_cast<std::size_t>(f.id - 1)].empty()) {
      missing += (missing.empty() ? "" : ", ") + f.code;
    }
  }
  if (!missing.empty()) throw DataError("embedding file is missing labels: " + missing);
  Tensor rows({catalog.size(), dim});
  for (std::size_t f = 0; f < catalog.size(); ++f) {
    std::copy(by_feature[f].begin(), by_feature[f].end(), rows.data().begin() + static_cast<std::ptrdiff_t>(f * dim));
  }
  return EmbeddingTable(std::move(rows), EmbeddingProvenance::file);
}

inline EmbeddingTable load_table(const std::string& path, const FeatureCatalog& catalog = FeatureCatalog::standard()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return load_table(in, catalog);
}

inline void write_table(std::ostream& out, const EmbeddingTable& table,
                        const FeatureCatalog& catalog = FeatureCatalog::standard()) {
  for (const Feature& f : catalog.features()) {
    out << f.label;
    for (double v : table.row(f.id)) out << '\t' << csv::format_double(v);
    out << '\n';
  }
}

/// Offline stand-in for text embeddings: each vector depends only on the
/// feature's label and the seed. Integer hashing, uniform expansion and an
/// L2 normalisation keep the result bitwise identical across platforms.
inline EmbeddingTable pseudo_table(const FeatureCatalog& catalog, std::size_t dim, std::uint64_t seed) {
  if (dim < 8) throw std::invalid_argument("pseudo embedding dim must be at least 8");
  Tensor rows({catalog.size(), dim});
  for (const Feature& f : catalog.features()) {
    const std::uint64_t key = fnv1a(f.label) ^ mix64(seed);
    auto row = rows.data().subspan(static_cast<std::size_t>(f.id - 1) * dim, dim);
    double norm2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double u = static_cast<double>(mix64(key + i) >> 11) * 0x1.0p-53;
      row[i] = 2.0 * u - 1.0;
      norm2 += row[i] * row[i];
    }
    const double norm = std::sqrt(norm2);
    for (double& v : row) v /= norm;
  }
  return EmbeddingTable(std::move(rows), EmbeddingProvenance::pseudo);
}

/// Every entry multiplied by `factor`.
inline EmbeddingTable scaled(const EmbeddingTable& table, double factor) {
  if (!(std::isfinite(factor) && factor > 0.0)) throw std::invalid_argument("embedding scale must be positive");
  Tensor rows = table.rows();
  for (double& v : rows.data()) v *= factor;
  return EmbeddingTable(std::move(rows), table.provenance());
}

/// table[feature] * v + B, elementwise. No projection touches the label vector.
inline std::vector<double> value_embed(FeatureId feature, double v, const EmbeddingTable& table,
                                       std::span<const double> translation) {
  if (!std::isfinite(v)) throw DataError("value_embed: non-finite value");
  const auto e = table.row(feature);
  if (translation.size() != e.size()) {
    throw ShapeError("value_embed: translation has " + std::to_string(translation.size()) + " entries, table dim " +
                     std::to_string(e.size()));
  }
  std::vector<double> out(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) out[i] = e[i] * v + translation[i];
  return out;
}

}  // namespace ulm
