#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "ulm/catalog.hpp"
#include "ulm/csv.hpp"

namespace ulm {

enum class Provenance { real, synthetic };

/// One laboratory report: an unordered set of (feature, raw value) pairs.
/// Gender is stored as feature 13 with M = 1, F = 0.
class LabRecord {
 public:
  LabRecord() = default;
  explicit LabRecord(Provenance p) : provenance_(p) {}

  void set(FeatureId id, double value) {
    if (!std::isfinite(value)) throw DataError("non-finite value for feature " + std::to_string(id));
    if (has(id)) throw DataError("duplicate feature " + std::to_string(id) + " in record");
    pairs_.emplace_back(id, value);
  }

  void erase(FeatureId id) {
    std::erase_if(pairs_, [id](const auto& p) { return p.first == id; });
  }

  bool has(FeatureId id) const noexcept {
    return std::any_of(pairs_.begin(), pairs_.end(), [id](const auto& p) { return p.first == id; });
  }

  std::optional<double> get(FeatureId id) const noexcept {
    for (const auto& [f, v] : pairs_) {
      if (f == id) return v;
    }
    return std::nullopt;
  }

  /// Pairs in insertion order; the order carries no meaning.
  const std::vector<std::pair<FeatureId, double>>& pairs() const noexcept { return pairs_; }
  std::vector<std::pair<FeatureId, double>>& pairs() noexcept { return pairs_; }
  std::size_t size() const noexcept { return pairs_.size(); }

  Provenance provenance() const noexcept { return provenance_; }
  void set_provenance(Provenance p) noexcept { provenance_ = p; }

  /// Set equality, independent of pair order.
  friend bool operator==(const LabRecord& a, const LabRecord& b) {
    if (a.pairs_.size() != b.pairs_.size()) return false;
    auto x = a.pairs_, y = b.pairs_;
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    return x == y;
  }

 private:
  std::vector<std::pair<FeatureId, double>> pairs_;
  Provenance provenance_ = Provenance::real;
};

/// Column header for a feature in the records CSV.
inline const std::string& csv_column(const Feature& f) {
  return (f.id == fid::age || f.id == fid::gender) ? f.code : f.label;
}

inline std::optional<double> parse_gender(std::string_view s) {
  if (s == "M" || s == "m" || s == "1") return 1.0;
  if (s == "F" || s == "f" || s == "0") return 0.0;
  return std::nullopt;
}

/// Records CSV: header of feature labels (`age`, `gender` for demographics),
/// one row per report, empty cell = missing. An optional `id` column is
/// carried through as row identity and otherwise ignored.
struct RecordTable {
  std::vector<LabRecord> records;
  std::vector<std::string> row_ids;  // empty strings when the file has no id column
};

inline RecordTable read_records(std::istream& in, const FeatureCatalog& catalog = FeatureCatalog::standard(),
                                Provenance provenance = Provenance::real) {
  csv::Row header;
  if (!csv::read_row(in, header)) throw DataError("records csv: missing header row");
  std::vector<std::optional<FeatureId>> columns;
  std::optional<std::size_t> id_col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "id") {
      id_col = c;
      columns.emplace_back();
      continue;
    }
    auto f = catalog.find(header[c]);
    if (!f) throw DataError("records csv: unknown column \"" + header[c] + "\"");
    for (const auto& prev : columns) {
      if (prev == f) throw DataError("records csv: duplicate column \"" + header[c] + "\"");
    }
    columns.push_back(f);
  }

  RecordTable table;
  csv::Row row;
  std::size_t line = 1;
  while (csv::read_row(in, row)) {
    ++line;
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != header.size()) {
      throw DataError("records csv line " + std::to_string(line) + ": expected " + std::to_string(header.size()) +
                      " cells, got " + std::to_string(row.size()));
    }
    LabRecord rec(provenance);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (!columns[c] || row[c].empty()) continue;
      const FeatureId f = *columns[c];
      const auto v = f == fid::gender ? parse_gender(row[c]) : csv::parse_double(row[c]);
      if (!v || !std::isfinite(*v)) {
        throw DataError("records csv line " + std::to_string(line) + ": bad value \"" + row[c] + "\" for " +
                        catalog.at(f).code);
      }
      rec.set(f, *v);
    }
    table.records.push_back(std::move(rec));
    table.row_ids.push_back(id_col ? row[*id_col] : std::string());
  }
  return table;
}

inline RecordTable read_records_file(const std::string& path,
                                     const FeatureCatalog& catalog = FeatureCatalog::standard()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_records(in, catalog);
}

/// Writes every catalog feature as a column in id order.
inline void write_records(std::ostream& out, std::span<const LabRecord> records,
                          const FeatureCatalog& catalog = FeatureCatalog::standard()) {
  csv::Row header;
  for (const Feature& f : catalog.features()) header.push_back(csv_column(f));
  csv::write_row(out, header);
  csv::Row row(catalog.size());
  for (const LabRecord& r : records) {
    std::fill(row.begin(), row.end(), std::string());
    for (const auto& [f, v] : r.pairs()) {
      const auto idx = static_cast<std::size_t>(f - 1);
      row[idx] = f == fid::gender ? (v == 1.0 ? "M" : "F") : csv::format_double(v);
    }
    csv::write_row(out, row);
  }
}

inline void write_records_file(const std::string& path, std::span<const LabRecord> records,
                               const FeatureCatalog& catalog = FeatureCatalog::standard()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_records(out, records, catalog);
}

}  // namespace ulm
