#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ugest/dataset.hpp"
#include "ugest/preprocess.hpp"

using namespace ugest;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ugest_synth_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

double mean_flow_u(const VideoSample& v) {
  double sum = 0;
  const std::size_t H = v.height(), W = v.width();
  for (std::size_t f = 0; f + 1 < v.num_frames(); ++f) {
    const auto flow = optical_flow(luminance(v.frames, f), luminance(v.frames, f + 1), H, W);
    for (std::size_t p = 0; p < H * W; ++p) sum += flow[2 * p];
  }
  return sum / double((v.num_frames() - 1) * H * W);
}

}  // namespace

TEST(GestureClass, ThirteenStableNames) {
  EXPECT_EQ(kNumClasses, 13);
  EXPECT_EQ(class_name(GestureClass::go_back), "go-back");
  EXPECT_EQ(class_name(GestureClass::null_gesture), "null");
  for (int i = 0; i < kNumClasses; ++i) EXPECT_EQ(int(class_from_name(class_name(class_from_index(i)))), i);
  EXPECT_THROW(class_from_index(13), InputError);
  EXPECT_THROW(class_from_name("wave"), InputError);
}

TEST(Generate, SameInputsGiveBitIdenticalFrames) {
  SynthConfig cfg;
  auto a = generate(cfg, GestureClass::beckoning, 7.5, 42);
  auto b = generate(cfg, GestureClass::beckoning, 7.5, 42);
  EXPECT_EQ(a.frames.vec(), b.frames.vec());
  auto c = generate(cfg, GestureClass::beckoning, 7.5, 43);
  EXPECT_NE(a.frames.vec(), c.frames.vec());
}

TEST(Generate, ShapeRangeAndMetadata) {
  SynthConfig cfg;
  cfg.channels = 3;
  cfg.frames = 12;
  auto v = generate(cfg, GestureClass::stop, 28.0, 1, "x");
  EXPECT_EQ(v.frames.shape(), (Shape{12, 64, 64, 3}));
  for (float p : v.frames.data()) {
    ASSERT_GE(p, 0.0f);
    ASSERT_LE(p, 1.0f);
  }
  EXPECT_EQ(v.boxes.size(), 12u);
  EXPECT_EQ(v.label, GestureClass::stop);
  EXPECT_EQ(v.id, "x");
}

TEST(Generate, DistanceOutOfRangeThrows) {
  SynthConfig cfg;
  EXPECT_THROW(generate(cfg, GestureClass::stop, 1.99, 0), InputError);
  EXPECT_THROW(generate(cfg, GestureClass::stop, 28.01, 0), InputError);
}

TEST(Generate, ConfigViolations) {
  SynthConfig cfg;
  EXPECT_TRUE(cfg.violations().empty());
  cfg.base_size = 20;  // 20*2/28 < 2 px
  EXPECT_FALSE(cfg.violations().empty());
  cfg = SynthConfig{};
  cfg.frames = 85;
  EXPECT_FALSE(cfg.violations().empty());
}

TEST(Generate, MoveLeftAndRightHaveMirroredFlowSign) {
  SynthConfig cfg;
  for (std::uint64_t seed : {3u, 11u}) {
    const double left = mean_flow_u(generate(cfg, GestureClass::move_left, 2.0, seed));
    const double right = mean_flow_u(generate(cfg, GestureClass::move_right, 2.0, seed));
    EXPECT_LT(left, 0.0) << "seed " << seed;
    EXPECT_GT(right, 0.0) << "seed " << seed;
  }
}

TEST(Generate, BoxAreaFollowsInverseSquareDistance) {
  SynthConfig cfg;
  for (int c = 0; c < kNumClasses; ++c) {
    auto near = generate(cfg, class_from_index(c), 2.0, 5);
    auto far = generate(cfg, class_from_index(c), 28.0, 5);
    double an = 0, af = 0;
    for (std::size_t f = 0; f < near.boxes.size(); ++f) {
      an += near.boxes[f].area();
      af += far.boxes[f].area();
    }
    const double ratio = af / an;
    EXPECT_NEAR(ratio * 196.0, 1.0, 0.2) << class_name(class_from_index(c));
  }
}

TEST(Generate, BoxesStayInsideFrame) {
  SynthConfig cfg;
  Rng rng(9);
  for (int i = 0; i < 60; ++i) {
    const auto cls = class_from_index(int(rng.below(kNumClasses)));
    const double d = rng.uniform(2, 28);
    auto v = generate(cfg, cls, d, rng.next_u64());
    for (const auto& b : v.boxes) ASSERT_TRUE(b.inside(64, 64)) << class_name(cls) << " d=" << d;
  }
}

TEST(Generate, ActorSnrStrictlyDecreasesWithDistance) {
  SynthConfig cfg;
  for (auto cls : {GestureClass::go_up, GestureClass::stop, GestureClass::null_gesture}) {
    double prev = std::numeric_limits<double>::infinity();
    for (double d = 2.0; d <= 28.0; d += 1.0) {
      const double snr = actor_region_snr(cfg, cls, d, 17);
      EXPECT_LT(snr, prev) << class_name(cls) << " d=" << d;
      prev = snr;
    }
  }
}

TEST(Augment, IdentityOpSetLeavesSampleUnchanged) {
  SynthConfig cfg;
  auto v = generate(cfg, GestureClass::go_down, 5.0, 2);
  Rng rng(1);
  auto out = augment(v, {}, rng);
  EXPECT_EQ(out.frames.vec(), v.frames.vec());
  EXPECT_EQ(out.label, v.label);
}

TEST(Augment, HflipSwapsDirectionalLabels) {
  SynthConfig cfg;
  Rng rng(1);
  EXPECT_EQ(augment(generate(cfg, GestureClass::move_left, 3, 1), {AugOp::hflip}, rng).label, GestureClass::move_right);
  EXPECT_EQ(augment(generate(cfg, GestureClass::move_right, 3, 1), {AugOp::hflip}, rng).label, GestureClass::move_left);
  EXPECT_EQ(augment(generate(cfg, GestureClass::go_up, 3, 1), {AugOp::hflip}, rng).label, GestureClass::go_up);
}

TEST(Augment, DoubleHflipIsPixelIdentical) {
  SynthConfig cfg;
  auto v = generate(cfg, GestureClass::turn_around, 9.0, 4);
  auto twice = hflip(hflip(v));
  EXPECT_EQ(twice.frames.vec(), v.frames.vec());
  EXPECT_EQ(twice.label, v.label);
}

TEST(Augment, ThousandRandomCallsFollowLabelMapping) {
  SynthConfig cfg;
  cfg.frames = 4;
  Rng rng(2024);
  const auto& ops = all_aug_ops();
  for (int i = 0; i < 1000; ++i) {
    const auto cls = class_from_index(int(rng.below(kNumClasses)));
    auto v = generate(cfg, cls, rng.uniform(2, 28), rng.next_u64());
    AugSet set;
    for (auto op : ops)
      if (rng.bernoulli(0.5)) set.insert(op);
    auto out = augment(v, set, rng);
    const auto expected = set.count(AugOp::hflip) ? hflip_label(cls) : cls;
    ASSERT_EQ(out.label, expected);
    for (float p : out.frames.data()) ASSERT_TRUE(p >= 0.0f && p <= 1.0f);
    for (const auto& b : out.boxes) ASSERT_TRUE(b.inside(64, 64));
  }
}

TEST(Dataset, OnePerClassGivesThirteenTrainRecords) {
  SynthConfig cfg;
  cfg.frames = 4;
  DatasetOptions opt;
  const auto dir = scratch_dir("one");
  auto m = build_dataset(cfg, opt, dir);
  EXPECT_EQ(m.records.size(), 13u);
  auto read = read_manifest(dir / "manifest.jsonl");
  EXPECT_EQ(read.split("train").size(), 13u);
  for (const auto& r : read.records) {
    EXPECT_GE(r.distance_m, 2.0);
    EXPECT_LE(r.distance_m, 28.0);
    auto v = load_sample(read, r);
    EXPECT_EQ(v.frames.shape(), (Shape{4, 64, 64, 1}));
    EXPECT_EQ(v.boxes.size(), 4u);
  }
  fs::remove_all(dir);
}

TEST(Dataset, SameSeedGivesByteIdenticalManifests) {
  SynthConfig cfg;
  cfg.frames = 3;
  cfg.seed = 77;
  DatasetOptions opt;
  opt.counts = {2, 1, 1};
  opt.aug_fraction = 0.5;
  const auto a = scratch_dir("det_a"), b = scratch_dir("det_b");
  build_dataset(cfg, opt, a);
  opt.threads = 3;
  build_dataset(cfg, opt, b);
  EXPECT_EQ(slurp(a / "manifest.jsonl"), slurp(b / "manifest.jsonl"));
  EXPECT_EQ(slurp(a / "train" / "train-00003.ugtn"), slurp(b / "train" / "train-00003.ugtn"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, PerClassCountsAndAugmentedCopiesOnlyInTrain) {
  SynthConfig cfg;
  cfg.frames = 3;
  DatasetOptions opt;
  opt.counts = {3, 2, 1};
  opt.aug_fraction = 0.25;
  const auto dir = scratch_dir("counts");
  auto m = build_dataset(cfg, opt, dir);
  std::map<std::string, std::map<int, int>> per;
  std::size_t aug = 0;
  std::set<std::string> ids;
  for (const auto& r : m.records) {
    EXPECT_TRUE(ids.insert(r.id).second);
    if (r.id.rfind("train-aug-", 0) == 0) {
      ++aug;
      EXPECT_EQ(r.split, "train");
      continue;
    }
    ++per[r.split][int(r.label)];
  }
  EXPECT_EQ(aug, 10u);  // round(0.25 * 39)
  for (int c = 0; c < kNumClasses; ++c) {
    EXPECT_EQ(per["train"][c], 3);
    EXPECT_EQ(per["val"][c], 2);
    EXPECT_EQ(per["test"][c], 1);
  }
  fs::remove_all(dir);
}

TEST(Dataset, ManifestValidationRejectsDuplicatesAndMissingFiles) {
  const auto dir = scratch_dir("bad");
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "manifest.jsonl");
    f << R"({"id":"a","file":"a.ugtn","label":"stop","distance_m":3,"split":"train"})" << '\n';
  }
  EXPECT_THROW(read_manifest(dir / "manifest.jsonl"), IoError);
  ugtn::save(dir / "a.ugtn", Tensor<float>({1, 8, 8, 1}));
  {
    std::ofstream f(dir / "manifest.jsonl");
    f << R"({"id":"a","file":"a.ugtn","label":"stop","distance_m":3,"split":"train"})" << '\n';
    f << R"({"id":"a","file":"a.ugtn","label":"stop","distance_m":3,"split":"test"})" << '\n';
  }
  EXPECT_THROW(read_manifest(dir / "manifest.jsonl"), InputError);
  fs::remove_all(dir);
}

TEST(Dataset, SequencesDrawDistinctTestVideos) {
  SynthConfig cfg;
  cfg.frames = 2;
  DatasetOptions opt;
  opt.counts = {1, 0, 1};
  const auto dir = scratch_dir("seq");
  auto m = build_dataset(cfg, opt, dir);
  auto seqs = build_sequences(m, 20, 2, 5, 3);
  ASSERT_EQ(seqs.size(), 20u);
  for (const auto& s : seqs) {
    EXPECT_GE(s.video_ids.size(), 2u);
    EXPECT_LE(s.video_ids.size(), 5u);
    std::set<std::string> u(s.video_ids.begin(), s.video_ids.end());
    EXPECT_EQ(u.size(), s.video_ids.size());
    for (const auto& id : s.video_ids) EXPECT_EQ(id.rfind("test-", 0), 0u);
  }
  write_sequences(dir / "sequences.jsonl", seqs);
  auto back = read_sequences(dir / "sequences.jsonl");
  ASSERT_EQ(back.size(), seqs.size());
  EXPECT_EQ(back[7].video_ids, seqs[7].video_ids);
  fs::remove_all(dir);
}
