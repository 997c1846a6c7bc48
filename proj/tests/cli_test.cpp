#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ugest/cli.hpp"

using namespace ugest;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "ugest");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run_cli(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

const std::vector<std::string> kTinyModel = {"--set", "model.tau_slow=2", "--set", "model.c_slow=4", "--set", "model.c_fast=2",
                                              "--set", "model.d_model=8", "--set", "model.n_heads=2", "--set", "model.d_ff=16",
                                              "--set", "model.n_layers=1", "--quiet", "--threads", "1"};

std::vector<std::string> with_tiny(std::vector<std::string> a) {
  a.insert(a.end(), kTinyModel.begin(), kTinyModel.end());
  return a;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "ugest_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    const auto g = run({"gen", "--out", (root_ / "raw").string(), "--per-class", "6", "--frames", "12", "--size", "32", "--set",
                        "synth.base_size=28", "--seed", "3", "--sequences", "2", "--seq-len", "2..3", "--threads", "1"});
    ASSERT_EQ(g.code, 0) << g.err;
    const auto p = run({"preprocess", "--in", (root_ / "raw" / "manifest.jsonl").string(), "--out", (root_ / "proc").string(), "--k", "4",
                        "--target-size", "16", "--seed", "3", "--threads", "1"});
    ASSERT_EQ(p.code, 0) << p.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }
  static std::string proc() { return (root_ / "proc" / "manifest.jsonl").string(); }

  static inline fs::path root_;
};

}  // namespace

TEST(CliUsage, ExitCodes) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"gen", "--out", "x", "--no-such-flag"}).code, 2);
  EXPECT_EQ(run({"gen"}).code, 2);  // --out missing
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"info"}).code, 0);
  const auto bad = run({"info", "--set", "dce.b0=5", "--set", "dce.b1=5"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("dce.b0/dce.b1"), std::string::npos);
  EXPECT_EQ(run({"info", "--set", "no.such.key=1"}).code, 1);
  EXPECT_EQ(run({"eval", "--checkpoint", "/nonexistent", "--data", "/nonexistent", "--out", "/tmp/x"}).code, 1);
}

TEST(CliUsage, GenPerClassOneGivesThirteenRecords) {
  const auto dir = fs::temp_directory_path() / "ugest_cli_gen1";
  fs::remove_all(dir);
  const auto r = run({"gen", "--out", dir.string(), "--per-class", "1", "--frames", "8", "--size", "32", "--set", "synth.base_size=28",
                      "--threads", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_manifest(dir / "manifest.jsonl").records.size(), 13u);
  fs::remove_all(dir);
}

TEST(CliUsage, ConfigFileThenFlagsThenEnvSeed) {
  const auto cfg = fs::temp_directory_path() / "ugest_cli_test.cfg";
  std::ofstream(cfg) << "train.epochs = 4\nseed = 11\n";
  auto r = run({"info", "--config", cfg.string()});
  EXPECT_NE(r.out.find("train.epochs = 4"), std::string::npos);
  EXPECT_NE(r.out.find("seed = 11"), std::string::npos);
  r = run({"info", "--config", cfg.string(), "--seed", "12"});
  EXPECT_NE(r.out.find("seed = 12"), std::string::npos);
  setenv("UGEST_SEED", "13", 1);
  r = run({"info", "--config", cfg.string(), "--seed", "12"});
  unsetenv("UGEST_SEED");
  EXPECT_NE(r.out.find("\n  seed = 13\n"), std::string::npos);
  fs::remove(cfg);
}

TEST_F(Cli, AlphaZeroMatchesNoDce) {
  ASSERT_EQ(run(with_tiny({"train", "--data", proc(), "--out", (root_ / "a0").string(), "--epochs", "2", "--alpha", "0"})).code, 0);
  ASSERT_EQ(run(with_tiny({"train", "--data", proc(), "--out", (root_ / "nd").string(), "--epochs", "2", "--variant", "no_dce"})).code, 0);
  const auto a = read_jsonl(root_ / "a0" / "train_log.jsonl");
  const auto b = read_jsonl(root_ / "nd" / "train_log.jsonl");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]["train_loss"].get<double>(), b[i]["train_loss"].get<double>());
    EXPECT_EQ(a[i]["val_loss"].get<double>(), b[i]["val_loss"].get<double>());
  }
}

TEST_F(Cli, SmokePipelineAndReproducibility) {
  for (const char* tag : {"s1", "s2"}) {
    const auto ck = (root_ / tag / "ck").string(), ev = (root_ / tag / "ev").string();
    ASSERT_EQ(run(with_tiny({"train", "--data", proc(), "--out", ck, "--epochs", "5", "--seed", "3"})).code, 0);
    const auto r = run(with_tiny({"eval", "--checkpoint", ck, "--data", proc(), "--out", ev, "--sequences",
                                  (root_ / "raw" / "sequences.jsonl").string()}));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.rfind("accuracy ", 0), 0u);
  }
  const auto rep = read_json_file(root_ / "s1" / "ev" / "report.json");
  for (const char* key : {"accuracy", "dwa", "gss", "macro_f1", "map", "confusion", "distance_curve", "sequence_accuracy"})
    EXPECT_TRUE(rep.contains(key)) << key;
  EXPECT_EQ(rep["count"], 13);
  for (const char* f : {"ck/train_log.jsonl", "ck/manifest.json", "ev/predictions.jsonl", "ev/report.json"})
    EXPECT_EQ(slurp(root_ / "s1" / f), slurp(root_ / "s2" / f)) << f;
}

TEST_F(Cli, EvalLeavesInputsUntouched) {
  const auto ck = root_ / "ro" / "ck";
  ASSERT_EQ(run(with_tiny({"train", "--data", proc(), "--out", ck.string(), "--epochs", "1"})).code, 0);
  const auto before_ck = slurp(ck / "manifest.json"), before_m = slurp(proc());
  const auto t_ck = fs::last_write_time(ck / "manifest.json");
  ASSERT_EQ(run(with_tiny({"eval", "--checkpoint", ck.string(), "--data", proc(), "--out", (root_ / "ro" / "ev").string(), "--window-frames", "2"}))
                .code,
            0);
  EXPECT_EQ(slurp(ck / "manifest.json"), before_ck);
  EXPECT_EQ(slurp(proc()), before_m);
  EXPECT_EQ(fs::last_write_time(ck / "manifest.json"), t_ck);
}

TEST_F(Cli, AblateAndCurves) {
  const auto out = root_ / "abl";
  const auto r = run(with_tiny({"ablate", "--data", proc(), "--out", out.string(), "--epochs", "1"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("variant,accuracy,dwa,gss,macro_f1,map,epochs", 0), 0u);
  const auto c = run({"curve", "--kind", "distance", "--in", (out / "eval" / "full" / "report.json").string()});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(c.out.rfind("bin_center,accuracy,count\n", 0), 0u);
  EXPECT_EQ(run({"curve", "--kind", "spiral", "--in", "x"}).code, 1);
  const auto csv = out / "training.csv";
  ASSERT_EQ(run({"curve", "--kind", "training", "--in", (out / "checkpoints" / "full" / "train_log.jsonl").string(), "--out", csv.string()}).code, 0);
  EXPECT_TRUE(fs::exists(csv));
}

TEST_F(Cli, FractionDefaultsToTenRepetitions) {
  const auto ck = root_ / "frac";
  const auto r = run(with_tiny({"train", "--data", proc(), "--out", ck.string(), "--epochs", "1", "--train-fraction", "0.5"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(ck / "rep-09" / "manifest.json"));
  EXPECT_FALSE(fs::exists(ck / "rep-10"));
}
