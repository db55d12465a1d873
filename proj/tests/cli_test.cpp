#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ulm/cli.hpp"

using namespace ulm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "ulm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("ulm_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name), std::ios::binary) << text;
    return path(name);
  }

  fs::path dir_;
};

const std::string kData = ULM_TEST_DATA_DIR;

const char* kTinyConfig = R"j({"seed": 5,
  "model": {"dim": 8, "heads": 2, "key_dim": 4, "embeddings": {"scale": 8}},
  "train": {"max_epochs": 2, "learning_rate": 3e-3},
  "synth": {"n_records": 400}})j";

}  // namespace

TEST_F(Cli, HelpExitsZero) {
  const Outcome r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("Usage"), std::string::npos);
  EXPECT_EQ(run({"train", "--help"}).code, 0);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"fly"}).code, 2);
  EXPECT_EQ(run({"eval", "--model", "m", "--data", "d", "--bogus"}).code, 2);
  EXPECT_EQ(run({"predict", "--model", "m", "--data", "d", "--ad-policy", "maybe"}).code, 2);
  const Outcome r = run({"train", "--out", path("m.ckpt")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--config"), std::string::npos);
}

TEST_F(Cli, BadConfigExitsTwo) {
  const std::string cfg = write("bad.json", R"({"model": {"layers": 3}})");
  const Outcome r = run({"train", "--config", cfg, "--out", path("m.ckpt")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("layers"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("m.ckpt")));
}

TEST_F(Cli, DataErrorsExitOne) {
  EXPECT_EQ(run({"eval", "--model", path("absent.ckpt"), "--data", kData + "/toy_records.csv"}).code, 1);
  EXPECT_EQ(run({"eval", "--model", kData + "/toy_records.csv", "--data", kData + "/toy_records.csv"}).code, 1);
  EXPECT_EQ(run({"ad-ranges", "--data", path("absent.csv")}).code, 1);
}

TEST_F(Cli, EvalPrintsMetricsAndAuc) {
  const Outcome r = run({"eval", "--model", kData + "/toy.ckpt", "--data", kData + "/toy_records.csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("target,n,positives,auc,accuracy,sensitivity,specificity,tp,tn,fp,fn\n", 0), 0u);
  for (const char* code : {"GLU", "CHOL", "FER", "URIC"}) {
    EXPECT_NE(r.out.find(std::string("\n") + code + ","), std::string::npos) << code;
    EXPECT_NE(r.out.find(std::string("auc ") + code + " "), std::string::npos) << code;
  }
}

TEST_F(Cli, PredictSkipsRowsAndFailsWhenNothingIsAccepted) {
  const Outcome ok = run({"predict", "--model", kData + "/toy.ckpt", "--data", kData + "/example_records.csv"});
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_NE(ok.err.find("row 3 skipped: UREA out of applicability domain"), std::string::npos) << ok.err;
  EXPECT_EQ(std::count(ok.out.begin(), ok.out.end(), '\n'), 4);

  const Outcome warn = run({"predict", "--model", kData + "/toy.ckpt", "--data", kData + "/example_records.csv",
                        "--ad-policy", "warn"});
  ASSERT_EQ(warn.code, 0);
  EXPECT_EQ(std::count(warn.out.begin(), warn.out.end(), '\n'), 5);
  EXPECT_NE(warn.out.find(",UREA\n"), std::string::npos);

  const std::string bad = write("bad.csv", "gender,age,\"Glucose, (GLU)\"\nF,40,5.1\nM,50,6\n");
  const Outcome none = run({"predict", "--model", kData + "/toy.ckpt", "--data", bad});
  EXPECT_EQ(none.code, 1);
  EXPECT_NE(none.err.find("row 1 skipped: empty source set"), std::string::npos);
  EXPECT_NE(none.err.find("row 2 skipped: empty source set"), std::string::npos);
}

TEST_F(Cli, TrainIsReproducible) {
  const std::string cfg = write("tiny.json", kTinyConfig);
  const Outcome a = run({"train", "--config", cfg, "--out", path("a.ckpt"), "--test-out", path("test.csv")});
  ASSERT_EQ(a.code, 0) << a.err;
  const Outcome b = run({"train", "--config", cfg, "--out", path("b.ckpt")});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(read_file_bytes(path("a.ckpt")), read_file_bytes(path("b.ckpt")));
  EXPECT_EQ(read_file_bytes(path("a.ckpt.history.csv")), read_file_bytes(path("b.ckpt.history.csv")));
  EXPECT_EQ(a.out, b.out);

  const Outcome c = run({"train", "--config", cfg, "--seed", "6", "--out", path("c.ckpt")});
  ASSERT_EQ(c.code, 0);
  EXPECT_NE(read_file_bytes(path("a.ckpt")), read_file_bytes(path("c.ckpt")));

  const Outcome e = run({"eval", "--model", path("a.ckpt"), "--data", path("test.csv")});
  ASSERT_EQ(e.code, 0) << e.err;
  for (const char* code : {"GLU", "CHOL", "FER", "URIC"}) {
    const std::string key = std::string(" ") + code + " ";
    const auto line = [&](const std::string& text, const std::string& prefix) {
      const auto at = text.find(prefix + key);
      return text.substr(at + prefix.size() + key.size(), text.find('\n', at) - at - prefix.size() - key.size());
    };
    EXPECT_EQ(line(e.out, "auc"), line(a.out, "test_auc")) << code;
  }
}

TEST_F(Cli, BaselineTrainingWritesOneHistoryPerNetwork) {
  const std::string cfg = write("mlp.json", R"({"seed": 2, "model": {"kind": "mlp_b", "mlp_hidden": 8},
    "train": {"max_epochs": 2}, "synth": {"n_records": 300}})");
  const Outcome r = run({"train", "--config", cfg, "--out", path("b.ckpt")});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* code : {"glu", "chol", "fer", "uric"}) {
    EXPECT_TRUE(fs::exists(path(std::string("b.ckpt.history.csv.") + code))) << code;
  }
  EXPECT_EQ(load_checkpoint_file(path("b.ckpt")).kind, ModelKind::mlp_b);
}

TEST_F(Cli, SynthRangesPrepareAndRoc) {
  const std::string cfg = write("tiny.json", kTinyConfig);
  ASSERT_EQ(run({"synth", "--config", cfg, "--n", "300", "--out", path("s1.csv")}).code, 0);
  ASSERT_EQ(run({"synth", "--config", cfg, "--n", "300", "--out", path("s2.csv")}).code, 0);
  EXPECT_EQ(read_file_bytes(path("s1.csv")), read_file_bytes(path("s2.csv")));
  EXPECT_EQ(read_records_file(path("s1.csv")).records.size(), 300u);

  const Outcome ranges = run({"ad-ranges", "--data", path("s1.csv"), "--out", path("ranges.csv")});
  ASSERT_EQ(ranges.code, 0) << ranges.err;
  const AdRanges ad = read_ranges_file(path("ranges.csv"));
  EXPECT_TRUE(ad.complete());

  const Outcome prep = run({"prepare", "--data", kData + "/example_records.csv", "--out", path("prepared.csv")});
  ASSERT_EQ(prep.code, 0);
  EXPECT_EQ(read_records_file(path("prepared.csv")).records.size(), 3u);
  EXPECT_NE(prep.err.find("dropped 1: UREA out of applicability domain"), std::string::npos) << prep.err;

  const Outcome roc = run({"roc-export", "--model", kData + "/toy.ckpt", "--data", kData + "/toy_records.csv", "--out",
                       path("roc.csv")});
  ASSERT_EQ(roc.code, 0) << roc.err;
  const auto rows = csv::read_file(path("roc.csv"));
  ASSERT_GT(rows.size(), 4u);
  EXPECT_EQ(rows[0], (csv::Row{"target", "threshold", "fpr", "tpr"}));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double fpr = std::stod(rows[i][2]), tpr = std::stod(rows[i][3]);
    EXPECT_GE(fpr, 0.0);
    EXPECT_LE(fpr, 1.0);
    EXPECT_GE(tpr, 0.0);
    EXPECT_LE(tpr, 1.0);
  }
}
