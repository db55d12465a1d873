#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ulm/random.hpp"

namespace ulm {

using FeatureId = int;

/// Feature ids in the order of the reference range table (alphabetical).
namespace fid {
inline constexpr FeatureId age = 1;
inline constexpr FeatureId alt = 2;
inline constexpr FeatureId alb = 3;
inline constexpr FeatureId ast = 4;
inline constexpr FeatureId baso = 5;
inline constexpr FeatureId chol = 6;
inline constexpr FeatureId crea = 7;
inline constexpr FeatureId crp = 8;
inline constexpr FeatureId bc = 9;
inline constexpr FeatureId eos = 10;
inline constexpr FeatureId fer = 11;
inline constexpr FeatureId fol = 12;
inline constexpr FeatureId gender = 13;
inline constexpr FeatureId glu = 14;
inline constexpr FeatureId gra = 15;
inline constexpr FeatureId hgb = 16;
inline constexpr FeatureId bu = 17;
inline constexpr FeatureId ldh = 18;
inline constexpr FeatureId lymph = 19;
inline constexpr FeatureId mcv = 20;
inline constexpr FeatureId mid = 21;
inline constexpr FeatureId mono = 22;
inline constexpr FeatureId neut = 23;
inline constexpr FeatureId plt = 24;
inline constexpr FeatureId rbc = 25;
inline constexpr FeatureId tbil = 26;
inline constexpr FeatureId pro = 27;
inline constexpr FeatureId urea = 28;
inline constexpr FeatureId uric = 29;
inline constexpr FeatureId vb = 30;
inline constexpr FeatureId wbc = 31;
}  // namespace fid

inline constexpr std::size_t kFeatureCount = 31;
inline constexpr std::size_t kTargetCount = 4;
inline constexpr std::size_t kInputCount = kFeatureCount - kTargetCount;

/// Predicted analytes, in output-column order.
inline constexpr std::array<FeatureId, kTargetCount> kTargets = {fid::glu, fid::chol, fid::fer, fid::uric};

struct Feature {
  FeatureId id;
  std::string label;  // canonical name, also the records-CSV column
  std::string code;   // short name used in messages
  std::string units;
  std::optional<std::string> loinc;
  double range_min;   // reference applicability domain
  double range_max;
};

class UnknownFeature : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FeatureCatalog {
 public:
  static const FeatureCatalog& standard() {
    static const FeatureCatalog catalog(build());
    return catalog;
  }

  explicit FeatureCatalog(std::vector<Feature> features) : features_(std::move(features)) {
    for (std::size_t i = 0; i < features_.size(); ++i) {
      if (features_[i].id != static_cast<FeatureId>(i + 1)) {
        throw std::invalid_argument("catalog ids must be 1..N in order");
      }
    }
  }

  std::size_t size() const noexcept { return features_.size(); }
  const std::vector<Feature>& features() const noexcept { return features_; }

  const Feature& at(FeatureId id) const {
    if (id < 1 || static_cast<std::size_t>(id) > features_.size()) {
      throw UnknownFeature("unknown feature id " + std::to_string(id));
    }
    return features_[static_cast<std::size_t>(id - 1)];
  }

  bool contains(FeatureId id) const noexcept {
    return id >= 1 && static_cast<std::size_t>(id) <= features_.size();
  }

  /// Matches the canonical label or the short code, exactly.
  std::optional<FeatureId> find(std::string_view name) const {
    for (const Feature& f : features_) {
      if (f.label == name || f.code == name) return f.id;
    }
    return std::nullopt;
  }

  FeatureId require(std::string_view name) const {
    if (auto id = find(name)) return *id;
    throw UnknownFeature("unknown feature \"" + std::string(name) + "\"");
  }

  static bool is_target(FeatureId id) noexcept {
    for (FeatureId t : kTargets) {
      if (t == id) return true;
    }
    return false;
  }

  /// Index of a target in output-column order, or -1.
  static int target_index(FeatureId id) noexcept {
    for (std::size_t i = 0; i < kTargets.size(); ++i) {
      if (kTargets[i] == id) return static_cast<int>(i);
    }
    return -1;
  }

  /// Non-target features in id order; the fixed-width baseline input layout.
  std::vector<FeatureId> input_features() const {
    std::vector<FeatureId> out;
    for (const Feature& f : features_) {
      if (!is_target(f.id)) out.push_back(f.id);
    }
    return out;
  }

  std::uint64_t hash() const {
    std::uint64_t h = fnv1a("ulm-catalog-v1\n");
    for (const Feature& f : features_) {
      h = fnv1a(std::to_string(f.id) + '\t' + f.label + '\t' + f.code + '\t' + f.units + '\t' +
                    f.loinc.value_or("") + '\n',
                h);
    }
    return h;
  }

 private:
  static std::vector<Feature> build() {
    using std::nullopt;
    return {
        {fid::age, "Age", "age", "years", nullopt, 1, 110},
        {fid::alt, "Alanine transaminase, (ALT)", "ALT", "U/L", "1742-6", 0.10, 1721.40},
        {fid::alb, "Albumin, (ALB)", "ALB", "g/L", "1751-7", 0.04, 60.14},
        {fid::ast, "Aspartate aminotransferase, (AST)", "AST", "U/L", "1920-8", 0.30, 1518.50},
        {fid::baso, "Basophils, (BASO)", "BASO", "%", "704-7", 0.02, 27.20},
        {fid::chol, "Cholesterol, (CHOL)", "CHOL", "mmol/L", "14647-2", 0.02, 17.20},
        {fid::crea, "Creatinine, (CREA)", "CREA", "μmol/L", "14682-9", 0.30, 1618.80},
        {fid::crp, "C-reactive protein, (CRP)", "CRP", "mg/L", "1988-5", 0.01, 250.95},
        {fid::bc, "Direct bilirubin, (BC)", "BC", "μmol/L", "29760-6", 0.04, 238.40},
        {fid::eos, "Eosinophils, (EOS)", "EOS", "%", "711-2", 0.09, 43.80},
        {fid::fer, "Ferritin, (FER)", "FER", "μg/L", "20567-4", 0.01, 1667.20},
        {fid::fol, "Folic acid, (FOL)", "FOL", "ng/mL", "2284-8", 0.56, 330.11},
        {fid::gender, "Gender", "gender", "", nullopt, 0, 1},
        {fid::glu, "Glucose, (GLU)", "GLU", "mmol/L", "14771-0", 0.01, 26.77},
        {fid::gra, "Granulocytes, (GRA)", "GRA", "%", "19023-1", 14.7, 94.7},
        {fid::hgb, "Hemoglobin, (HGB)", "HGB", "g/L", "30350-3", 11.00, 215.00},
        {fid::bu, "Indirect bilirubin, (BU)", "BU", "μmol/L", "14630-8", 0.05, 220.79},
        {fid::ldh, "Lactate dehydrogenase, (LDH)", "LDH", "U/L", "2532-0", 2.00, 4983.00},
        {fid::lymph, "Lymphocytes, (LYMPH)", "LYMPH", "%", "737-7", 0.10, 90.70},
        {fid::mcv, "Mean corpuscular volume, (MCV)", "MCV", "fL", "71829-6", 0.70, 134.00},
        {fid::mid, "Middle-size Cells, (MID)", "MID", "%", "32155-4", 1.2, 29.4},
        {fid::mono, "Monocytes, (MONO)", "MONO", "%", "5905-5", 0.10, 55.40},
        {fid::neut, "Neutrophils, (NEUT)", "NEUT", "%", "768-2", 2.90, 100.00},
        {fid::plt, "Platelets, (PLT)", "PLT", "10^9/L", "777-3", 1.00, 1053.00},
        {fid::rbc, "Red blood cells, (RBC)", "RBC", "10^12/L", "789-8", 0.24, 8.21},
        {fid::tbil, "Total bilirubin, (TBIL)", "TBIL", "μmol/L", "54363-7", 0.03, 432.43},
        {fid::pro, "Total protein, (PRO)", "PRO", "g/L", "13980-8", 19.20, 132.10},
        {fid::urea, "Urea, (UREA)", "UREA", "mmol/L", "22664-7", 0.50, 67.50},
        {fid::uric, "Uric acid, (URIC)", "URIC", "mmol/L", "14933-6", 0.00, 1.22},
        {fid::vb, "Vitamin B12, (VB)", "VB", "pg/mL", "2132-9", 1.00, 39833.00},
        {fid::wbc, "White blood cells, (WBC)", "WBC", "10^9/L", "804-5", 0.10, 68.70},
    };
  }

  std::vector<Feature> features_;
};

}  // namespace ulm
