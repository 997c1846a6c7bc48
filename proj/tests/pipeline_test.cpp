#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ugest/pipeline.hpp"

using namespace ugest;

namespace {

RunConfig tiny_run() {
  RunConfig c;
  c.apply_seed(5);
  c.threads = 1;
  c.synth.height = c.synth.width = 32;
  c.synth.base_size = 28;
  c.synth.frames = 12;
  c.gen.train_per_class = 1;
  c.gen.val_per_class = 1;
  c.gen.test_per_class = 1;
  c.gen.sequences = 3;
  c.gen.seq_min = 2;
  c.gen.seq_max = 3;
  c.preprocess.k = 4;
  c.preprocess.target_size = 16;
  c.model.tau_slow = 2;
  c.model.c_slow = 4;
  c.model.c_fast = 2;
  c.model.encoder.d_model = 8;
  c.model.encoder.n_heads = 2;
  c.model.encoder.d_ff = 16;
  c.model.encoder.n_layers = 1;
  c.train.epochs = 2;
  c.train.batch = 8;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "ugest_pipeline_test";
    fs::remove_all(root_);
    cfg_ = tiny_run();
    ASSERT_TRUE(validate_config(cfg_).empty()) << validate_config(cfg_).front();
    run_gen(cfg_, root_ / "raw");
    run_preprocess(cfg_, root_ / "raw" / "manifest.jsonl", root_ / "proc");
    run_train(cfg_, root_ / "proc" / "manifest.jsonl", root_ / "ckpt");
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static inline fs::path root_;
  static inline RunConfig cfg_;
};

}  // namespace

TEST_F(Pipeline, ArtifactsExist) {
  EXPECT_TRUE(fs::exists(root_ / "raw" / "sequences.jsonl"));
  EXPECT_TRUE(fs::exists(root_ / "proc" / kPreprocessInfo));
  EXPECT_TRUE(fs::exists(root_ / "ckpt" / "manifest.json"));
  EXPECT_TRUE(fs::exists(root_ / "ckpt" / "train_log.jsonl"));
  const auto m = read_manifest(root_ / "proc" / "manifest.jsonl");
  ASSERT_EQ(m.records.size(), 3u * kNumClasses);
  for (const auto& r : m.records) {
    ASSERT_TRUE(r.source_id && r.frame_indices);
    EXPECT_EQ(r.frame_indices->size(), cfg_.preprocess.k);
    EXPECT_EQ(ugtn::load(m.path_of(r)).shape(), (Shape{4, 16, 16, 3}));
  }
}

TEST_F(Pipeline, PreprocessIsDeterministic) {
  run_preprocess(cfg_, root_ / "raw" / "manifest.jsonl", root_ / "proc2");
  EXPECT_EQ(slurp(root_ / "proc" / "manifest.jsonl"), slurp(root_ / "proc2" / "manifest.jsonl"));
  EXPECT_EQ(slurp(root_ / "proc" / kPreprocessInfo), slurp(root_ / "proc2" / kPreprocessInfo));
  EXPECT_EQ(slurp(root_ / "proc" / "clips" / "test-00000.ugtn"), slurp(root_ / "proc2" / "clips" / "test-00000.ugtn"));
}

TEST_F(Pipeline, WholeClipEval) {
  auto out = run_eval(cfg_, root_ / "ckpt", root_ / "proc" / "manifest.jsonl", root_ / "eval", "test", root_ / "raw" / "sequences.jsonl");
  ASSERT_EQ(out.predictions.size(), std::size_t(kNumClasses));
  for (const auto& p : out.predictions) {
    EXPECT_TRUE(record_violations(p).empty());
    ASSERT_EQ(p.windows.size(), 1u);
    EXPECT_EQ(p.windows.front().end_frame, 12);
  }
  EXPECT_EQ(out.report["window_frames"], 12);
  EXPECT_DOUBLE_EQ(out.report["gss"].get<double>(), out.report["accuracy"].get<double>());
  EXPECT_TRUE(out.report.contains("sequence_accuracy"));
  EXPECT_EQ(read_jsonl(root_ / "eval" / "predictions.jsonl").size(), std::size_t(kNumClasses));
  const auto again = run_eval(cfg_, root_ / "ckpt", root_ / "proc" / "manifest.jsonl", root_ / "eval2", "test", root_ / "raw" / "sequences.jsonl");
  EXPECT_EQ(slurp(root_ / "eval" / "report.json"), slurp(root_ / "eval2" / "report.json"));
  EXPECT_EQ(slurp(root_ / "eval" / "predictions.jsonl"), slurp(root_ / "eval2" / "predictions.jsonl"));
}

TEST_F(Pipeline, SlidingWindowEval) {
  RunConfig c = cfg_;
  c.window_frames = 3;
  auto out = run_eval(c, root_ / "ckpt", root_ / "proc" / "manifest.jsonl", root_ / "eval_w3");
  for (const auto& p : out.predictions) {
    ASSERT_EQ(p.windows.size(), 10u);
    EXPECT_EQ(p.windows.front().end_frame, 3);
    EXPECT_EQ(p.windows.back().end_frame, 12);
    EXPECT_EQ(p.predicted_label, p.windows.back().predicted_label);
  }
  EXPECT_EQ(out.report["window_frames"], 3);
  c.window_frames = 13;
  EXPECT_THROW(run_eval(c, root_ / "ckpt", root_ / "proc" / "manifest.jsonl", root_ / "eval_bad"), ConfigError);
}

TEST_F(Pipeline, MismatchedModelRejected) {
  RunConfig c = cfg_;
  c.model.height = 8;
  EXPECT_THROW(run_train(c, root_ / "proc" / "manifest.jsonl", root_ / "ckpt_bad"), ConfigError);
}

TEST_F(Pipeline, RepetitionsAndFractionCurve) {
  RunConfig c = cfg_;
  c.train.epochs = 1;
  c.repetitions = 2;
  c.train_fraction = 0.5;
  auto runs = run_train(c, root_ / "proc" / "manifest.jsonl", root_ / "ckpt_reps");
  ASSERT_EQ(runs.size(), 2u);
  EXPECT_TRUE(fs::exists(root_ / "ckpt_reps" / "rep-01" / "manifest.json"));
  auto out = run_eval(c, root_ / "ckpt_reps", root_ / "proc" / "manifest.jsonl", root_ / "eval_reps");
  EXPECT_EQ(out.report["repetitions"], 2);
  EXPECT_DOUBLE_EQ(out.report["train_fraction"].get<double>(), 0.5);
  run_eval(cfg_, root_ / "ckpt", root_ / "proc" / "manifest.jsonl", root_ / "eval_whole");
  const auto csv = run_curve(CurveKind::fraction, {root_ / "eval_reps" / "report.json", root_ / "eval_whole" / "report.json"});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "train_fraction,accuracy,dwa,repetitions");
  EXPECT_EQ(csv.substr(csv.find('\n') + 1, 4), "0.5,");
}

TEST_F(Pipeline, Curves) {
  run_eval(cfg_, root_ / "ckpt", root_ / "proc" / "manifest.jsonl", root_ / "eval_c");
  const auto dist = run_curve(CurveKind::distance, {root_ / "eval_c" / "report.json"});
  EXPECT_EQ(std::count(dist.begin(), dist.end(), '\n'), 14);
  EXPECT_EQ(dist, slurp(root_ / "eval_c" / "distance_curve.csv"));
  const auto tr = run_curve(CurveKind::training, {root_ / "ckpt" / "train_log.jsonl"});
  EXPECT_EQ(std::count(tr.begin(), tr.end(), '\n'), 3);
  EXPECT_THROW(curve_kind_from_name("loss"), ConfigError);
}

TEST_F(Pipeline, Ablation) {
  RunConfig c = cfg_;
  c.train.epochs = 1;
  const auto rows = run_ablate(c, root_ / "proc" / "manifest.jsonl", root_ / "ablate");
  ASSERT_EQ(rows.size(), 6u);
  const auto csv = slurp(root_ / "ablate" / "ablation.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_EQ(read_json_file(root_ / "ablate" / "ablation.json").at("rows").size(), 6u);
}

TEST(PipelineInfo, ListsStagesAndParams) {
  RunConfig c = tiny_run();
  const auto s = run_info(c);
  EXPECT_NE(s.find("slow.conv1"), std::string::npos);
  EXPECT_NE(s.find("parameters "), std::string::npos);
  EXPECT_NE(s.find("train.epochs = 2"), std::string::npos);
}
