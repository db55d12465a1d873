#pragma once

// Command-line entry point. Exit codes: 0 success, 1 data or model errors,
// 2 usage and configuration errors.

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ulm/applicability.hpp"
#include "ulm/config.hpp"
#include "ulm/inference.hpp"
#include "ulm/pipeline.hpp"
#include "ulm/record.hpp"
#include "ulm/server.hpp"
#include "ulm/synthgen.hpp"

namespace ulm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitData = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string model;
  std::string out;
  std::string data;
  std::string ranges;
  std::string history;
  std::string test_out;
  std::optional<std::size_t> n_records;
  bool informative = false;
  bool reference_auc = false;
  double coverage = kDefaultCoverage;
  std::size_t bins = kDefaultBins;
  std::optional<double> threshold;
  std::string ad_policy;
  std::string host = "127.0.0.1";
  int port = 8080;
};

inline RunConfig run_config(const Options& o) {
  RunConfig c = o.config.empty() ? parse_config(nlohmann::json::object()) : load_config(o.config);
  if (o.seed) c.reseed(*o.seed);
  if (o.threshold) {
    if (!(*o.threshold > 0.0 && *o.threshold < 1.0)) throw ConfigError("--threshold must be in (0, 1)");
    c.inference.threshold = *o.threshold;
  }
  if (!o.ad_policy.empty()) c.inference.ad_policy = parse_ad_policy(o.ad_policy);
  return c;
}

/// Writes to `path`, or to `fallback` when the path is empty.
template <class F>
void emit(const std::string& path, std::ostream& fallback, F&& write) {
  if (path.empty()) {
    write(fallback);
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  write(f);
  if (!f) throw DataError("write failed for " + path);
}

inline Scaler scaler_for(const RunConfig& c) {
  return c.ranges_path ? Scaler(read_ranges_file(*c.ranges_path)) : Scaler();
}

inline int ad_ranges(const Options& o, std::ostream& out, std::ostream& err) {
  const RecordTable t = read_records_file(o.data);
  const auto& cat = FeatureCatalog::standard();
  AdRanges ranges = AdRanges::reference();
  for (const Feature& f : cat.features()) {
    std::vector<double> values;
    for (const LabRecord& r : t.records) {
      if (const auto v = r.get(f.id)) values.push_back(*v);
    }
    if (f.id == fid::gender) continue;
    if (values.size() < kMinRangeSamples) {
      err << "warning: " << f.code << " has " << values.size() << " values; keeping the reference range\n";
      continue;
    }
    ranges.set(compute_ad_range(values, o.coverage, o.bins, f.id));
  }
  emit(o.out, out, [&](std::ostream& s) { write_ranges(s, ranges); });
  return kExitOk;
}

inline int prepare(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = run_config(o);
  const AdRanges ranges = !o.ranges.empty()  ? read_ranges_file(o.ranges)
                          : c.ranges_path    ? read_ranges_file(*c.ranges_path)
                                             : AdRanges::reference();
  const RecordTable t = read_records_file(o.data);
  std::map<std::string, std::size_t> reasons;
  for (const LabRecord& r : t.records) {
    if (!has_any_target(r)) ++reasons["no target analyte"];
    else if (const auto why = domain_violation(r, ranges)) ++reasons[*why];
  }
  const std::vector<LabRecord> kept = filter_dataset(t.records, ranges);
  emit(o.out, out, [&](std::ostream& s) { write_records(s, kept); });
  err << "kept " << kept.size() << " of " << t.records.size() << " records\n";
  for (const auto& [why, n] : reasons) err << "  dropped " << n << ": " << why << '\n';
  return kExitOk;
}

inline int synth(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig c = run_config(o);
  if (o.n_records) c.synth.n_records = *o.n_records;
  if (o.informative) c.synth.missing_informative = true;
  try {
    c.synth.validate();
  } catch (const SynthConfigError& e) {
    throw ConfigError(e.what());
  }
  const std::vector<LabRecord> records = generate(c.synth);
  emit(o.out, out, [&](std::ostream& s) { write_records(s, records); });
  err << "generated " << records.size() << " records\n";
  if (o.reference_auc) {
    const auto auc = reference_auc(c.synth, 100000);
    for (std::size_t t = 0; t < kTargetCount; ++t) {
      out << "reference_auc " << FeatureCatalog::standard().at(kTargets[t]).code << ' '
          << csv::format_double(auc[t]) << '\n';
    }
  }
  return kExitOk;
}

inline void print_aucs(std::ostream& out, const char* what, const TargetScores& s) {
  for (std::size_t t = 0; t < kTargetCount; ++t) {
    out << what << ' ' << FeatureCatalog::standard().at(kTargets[t]).code << ' ' << csv::format_double(s.auc(t))
        << '\n';
  }
}

inline int train(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig c = run_config(o);
  const Scaler scaler = scaler_for(c);
  std::vector<LabRecord> records;
  if (!o.data.empty() || c.data_path) {
    const std::string path = !o.data.empty() ? o.data : *c.data_path;
    records = filter_dataset(read_records_file(path).records, scaler.ranges());
    err << "loaded " << records.size() << " in-domain records from " << path << '\n';
  } else {
    records = generate(c.synth);
    err << "generated " << records.size() << " synthetic records\n";
  }
  const DataSplits d = make_splits(records, scaler, c.thresholds, c.test_fraction, c.validation_fraction, c.seed);
  if (d.train.empty() || d.validation.empty()) throw DataError("not enough records to train");
  ModelBundle m = new_bundle(c, scaler);
  const std::vector<TrainHistory> hs = train_bundle(m, d, c.train);
  save_checkpoint_file(o.out, m);

  const std::string history = o.history.empty() ? o.out + ".history.csv" : o.history;
  for (std::size_t i = 0; i < hs.size(); ++i) {
    std::string path = history;
    if (hs.size() > 1) {
      const std::string code = ckpt_detail::target_prefix(i);
      path = history + "." + code.substr(0, code.size() - 1);
    }
    emit(path, out, [&](std::ostream& s) { write_history_csv(s, hs[i]); });
  }
  if (!o.test_out.empty()) write_records_file(o.test_out, d.test_records);
  err << "model " << m.version << " written to " << o.out << '\n';
  if (!d.test.empty()) print_aucs(out, "test_auc", score_examples(m, d.test));
  return kExitOk;
}

inline std::vector<LabRecord> labelled_in_domain(const ModelBundle& m, const std::string& path, std::ostream& err) {
  const RecordTable t = read_records_file(path);
  std::vector<LabRecord> kept = filter_dataset(t.records, m.scaler.ranges());
  if (kept.size() != t.records.size()) {
    err << "skipped " << t.records.size() - kept.size() << " records outside the domain or without targets\n";
  }
  if (kept.empty()) throw DataError("no labelled in-domain records in " + path);
  return kept;
}

/// Metrics CSV: target,n,positives,auc,accuracy,sensitivity,specificity,tp,tn,fp,fn
inline int eval(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = run_config(o);
  const ModelBundle m = load_checkpoint_file(o.model);
  const auto records = labelled_in_domain(m, o.data, err);
  const TargetScores s = score_examples(m, to_examples(records, m.scaler, m.thresholds));
  emit(o.out, out, [&](std::ostream& f) {
    csv::write_row(f, {"target", "n", "positives", "auc", "accuracy", "sensitivity", "specificity", "tp", "tn", "fp",
                       "fn"});
    for (std::size_t t = 0; t < kTargetCount; ++t) {
      const std::string code = FeatureCatalog::standard().at(kTargets[t]).code;
      if (s.labels[t].empty()) {
        csv::write_row(f, {code, "0", "0", "", "", "", "", "", "", "", ""});
        continue;
      }
      const ConfusionReport r = confusion(s.scores[t], s.labels[t], c.inference.threshold);
      const auto pos = static_cast<std::size_t>(std::count(s.labels[t].begin(), s.labels[t].end(), 1));
      csv::write_row(f, {code, std::to_string(s.labels[t].size()), std::to_string(pos),
                         csv::format_double(s.auc(t)), csv::format_double(r.accuracy),
                         csv::format_double(r.sensitivity), csv::format_double(r.specificity), std::to_string(r.tp),
                         std::to_string(r.tn), std::to_string(r.fp), std::to_string(r.fn)});
    }
  });
  print_aucs(out, "auc", s);
  return kExitOk;
}

inline int predict(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = run_config(o);
  const ModelBundle m = load_checkpoint_file(o.model);
  const RecordTable t = read_records_file(o.data);
  BatchPredictionSummary s;
  emit(o.out, out, [&](std::ostream& f) { s = predict_batch(m, t, c.inference, f); });
  for (const auto& [id, why] : s.skipped) err << "row " << id << " skipped: " << why << '\n';
  if (s.accepted == 0) {
    err << "no rows accepted\n";
    return kExitData;
  }
  return kExitOk;
}

/// ROC CSV: target,threshold,fpr,tpr
inline int roc_export(const Options& o, std::ostream& out, std::ostream& err) {
  const ModelBundle m = load_checkpoint_file(o.model);
  const auto records = labelled_in_domain(m, o.data, err);
  const TargetScores s = score_examples(m, to_examples(records, m.scaler, m.thresholds));
  emit(o.out, out, [&](std::ostream& f) {
    csv::write_row(f, {"target", "threshold", "fpr", "tpr"});
    for (std::size_t t = 0; t < kTargetCount; ++t) {
      const auto [pos, neg] = ulm::detail::class_counts(s.labels[t]);
      if (neg == 0 || pos == 0) {
        err << "warning: " << FeatureCatalog::standard().at(kTargets[t]).code << " has a single class; no curve\n";
        continue;
      }
      const RocCurve curve = roc_auc(s.scores[t], s.labels[t]);
      for (const RocPoint& p : curve.points) {
        csv::write_row(f, {FeatureCatalog::standard().at(kTargets[t]).code,
                           std::isinf(p.threshold) ? "inf" : csv::format_double(p.threshold),
                           csv::format_double(p.fpr), csv::format_double(p.tpr)});
      }
    }
  });
  return kExitOk;
}

inline int serve(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = run_config(o);
  const ModelBundle m = load_checkpoint_file(o.model);
  httplib::Server srv;
  configure_server(srv, m, c.inference);
  if (!srv.bind_to_port(o.host, o.port)) {
    err << "cannot bind " << o.host << ':' << o.port << '\n';
    return kExitData;
  }
  out << "serving model " << m.version << " on http://" << o.host << ':' << o.port << '\n' << std::flush;
  srv.listen_after_bind();
  return kExitOk;
}

}  // namespace detail

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"Universal laboratory model: training, evaluation and serving"};
  app.name("ulm");
  app.require_subcommand(1);
  app.set_version_flag("--version", "ulm 1");
  Options o;

  auto common = [&](CLI::App* s, bool model) {
    s->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    s->add_option("--seed", o.seed, "overrides the config seed");
    s->add_option("--out", o.out, "output path (standard output when omitted)");
    if (model) s->add_option("--model", o.model, "checkpoint")->required();
  };

  auto* ranges = app.add_subcommand("ad-ranges", "compute applicability ranges from a records CSV");
  common(ranges, false);
  ranges->add_option("--data", o.data, "records CSV")->required();
  ranges->add_option("--coverage", o.coverage, "fraction of values the range must hold")->check(CLI::Range(0.0, 1.0));
  ranges->add_option("--bins", o.bins, "histogram bins")->check(CLI::PositiveNumber);

  auto* prep = app.add_subcommand("prepare", "drop records outside the applicability domain or without targets");
  common(prep, false);
  prep->add_option("--data", o.data, "records CSV")->required();
  prep->add_option("--ranges", o.ranges, "ranges CSV (reference ranges when omitted)");

  auto* syn = app.add_subcommand("synth", "generate a synthetic records CSV");
  common(syn, false);
  syn->add_option("--n", o.n_records, "number of records");
  syn->add_flag("--informative", o.informative, "missingness tied to the latent health state");
  syn->add_flag("--reference-auc", o.reference_auc, "print the Monte-Carlo AUC ceiling per target");

  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint");
  common(tr, false);
  tr->get_option("--config")->required();
  tr->get_option("--out")->required();
  tr->add_option("--data", o.data, "records CSV (synthetic data from the config when omitted)");
  tr->add_option("--history", o.history, "history CSV (default <out>.history.csv)");
  tr->add_option("--test-out", o.test_out, "write the held-out test records here");

  auto* ev = app.add_subcommand("eval", "per-target metrics on a labelled records CSV");
  common(ev, true);
  ev->add_option("--data", o.data, "records CSV")->required();
  ev->add_option("--threshold", o.threshold, "abnormal threshold");

  auto* pr = app.add_subcommand("predict", "batch predictions for a records CSV");
  common(pr, true);
  pr->add_option("--data", o.data, "records CSV")->required();
  pr->add_option("--threshold", o.threshold, "abnormal threshold");
  pr->add_option("--ad-policy", o.ad_policy, "reject or warn")->check(CLI::IsMember({"reject", "warn"}));

  auto* roc = app.add_subcommand("roc-export", "ROC points per target");
  common(roc, true);
  roc->add_option("--data", o.data, "records CSV")->required();

  auto* sv = app.add_subcommand("serve", "HTTP prediction endpoint");
  common(sv, true);
  sv->add_option("--host", o.host, "bind address");
  sv->add_option("--port", o.port, "port")->check(CLI::Range(0, 65535));
  sv->add_option("--threshold", o.threshold, "abnormal threshold");
  sv->add_option("--ad-policy", o.ad_policy, "reject or warn")->check(CLI::IsMember({"reject", "warn"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << app.version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (ranges->parsed()) return ad_ranges(o, out, err);
    if (prep->parsed()) return prepare(o, out, err);
    if (syn->parsed()) return synth(o, out, err);
    if (tr->parsed()) return train(o, out, err);
    if (ev->parsed()) return eval(o, out, err);
    if (pr->parsed()) return predict(o, out, err);
    if (roc->parsed()) return roc_export(o, out, err);
    return serve(o, out, err);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace ulm::cli
