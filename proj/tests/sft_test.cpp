#include <gtest/gtest.h>

#include <cmath>
#include <span>

#include "ugest/gradcheck.hpp"
#include "ugest/sft.hpp"
#include "ugest/train.hpp"

using namespace ugest;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

SFTConfig toy_config(std::size_t S = 16) {
  SFTConfig c;
  c.frames = 8;
  c.height = c.width = S;
  c.in_channels = 3;
  c.c_slow = 4;
  c.c_fast = 2;
  c.encoder.d_model = 8;
  c.encoder.n_heads = 2;
  c.encoder.d_ff = 16;
  c.encoder.n_layers = 1;
  c.encoder.dropout_p = 0.0;
  return c;
}

template <class T>
std::vector<std::remove_cv_t<T>> vec(std::span<T> s) {
  return {s.begin(), s.end()};
}

Shape input_shape(const SFTConfig& c, std::size_t B) { return {B, c.in_channels, c.frames, c.height, c.width}; }

}  // namespace

// ------------------------------------------------------------------ config

TEST(SFTConfig, DefaultsAreLegal) {
  SFTConfig c;
  EXPECT_TRUE(c.violations().empty());
  EXPECT_EQ(c.num_classes, 13u);
  EXPECT_EQ(c.fused_shape(2), (Shape{2, 40, 2, 16, 16}));
}

TEST(SFTConfig, ViolationsNameKeys) {
  SFTConfig c;
  c.frames = 6;
  c.c_fast = 64;
  const auto v = c.violations();
  auto has = [&](const std::string& key) {
    return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.find(key) != std::string::npos; });
  };
  EXPECT_TRUE(has("model.frames"));
  EXPECT_TRUE(has("model.c_fast"));
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SFTConfig, JsonRoundTrip) {
  SFTConfig c = toy_config();
  c.use_transformer = false;
  c.tau_slow = 2;
  const auto back = sft_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
}

TEST(SFTConfig, VariantNames) {
  for (auto v : kAllVariants) EXPECT_EQ(variant_from_name(variant_name(v)), v);
  EXPECT_THROW(variant_from_name("no_head"), ConfigError);
}

// ------------------------------------------------------------------ pathways

TEST(Pathways, SlowAndFastShapesAt32) {
  SFTConfig c;
  c.height = c.width = 32;
  auto ps = init_sft_params<float>(c, 1);
  Tape<float> tp;
  ParamBinder<float> bind(tp, ps);
  Var x = tp.constant(Tensor<float>(input_shape(c, 3)));
  EXPECT_EQ(tp.shape(slow_pathway(bind, x, c)), (Shape{3, 32, 2, 8, 8}));
  EXPECT_EQ(tp.shape(fast_pathway(bind, x, c)), (Shape{3, 8, 2, 8, 8}));
}

TEST(Pathways, ShapeMismatchThrows) {
  SFTConfig c = toy_config();
  auto ps = init_sft_params<float>(c, 1);
  Tape<float> tp;
  ParamBinder<float> bind(tp, ps);
  Var x = tp.constant(Tensor<float>({1, 3, 4, 16, 16}));
  EXPECT_THROW(slow_pathway(bind, x, c), DimensionError);
  EXPECT_THROW(fast_pathway(bind, x, c), DimensionError);
}

TEST(Pathways, ZeroInputGivesBiasPatternDeterministically) {
  SFTConfig c = toy_config();
  auto ps = init_sft_params<float>(c, 2);
  for (auto& v : ps["slow.conv1.b"].data()) v = 0.25f;
  auto run = [&] {
    Tape<float> tp;
    ParamBinder<float> bind(tp, ps);
    return tp.value(slow_pathway(bind, tp.constant(Tensor<float>(input_shape(c, 2))), c));
  };
  const auto a = run(), b = run();
  EXPECT_EQ(vec(a.data()), vec(b.data()));
  // Interior outputs see only the constant bias map, so each channel is spatially uniform there.
  const std::size_t C = a.dim(1), L = a.dim(2), H = a.dim(3), W = a.dim(4);
  for (std::size_t ch = 0; ch < C; ++ch) {
    const float ref = a[((0 * C + ch) * L) * H * W + 1 * W + 1];
    for (std::size_t y = 1; y + 1 < H; ++y)
      for (std::size_t x = 1; x + 1 < W; ++x) EXPECT_FLOAT_EQ(a[((0 * C + ch) * L) * H * W + y * W + x], ref);
  }
}

TEST(Pathways, RandomLegalConfigsMatchFusedShape) {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    SFTConfig c;
    c.frames = 4 * (1 + rng.below(3));
    const std::size_t taus[] = {1, 2, 4};
    c.tau_slow = taus[rng.below(3)];
    c.height = 4 * (2 + rng.below(4));
    c.width = 4 * (2 + rng.below(4));
    c.in_channels = 1 + rng.below(4);
    c.c_fast = 1 + rng.below(4);
    c.c_slow = c.c_fast + 1 + rng.below(6);
    c.encoder.d_model = 4;
    c.encoder.n_heads = 2;
    c.encoder.d_ff = 8;
    c.encoder.n_layers = 1;
    ASSERT_TRUE(c.violations().empty()) << trial;
    const std::size_t B = 1 + rng.below(2);
    auto ps = init_sft_params<float>(c, trial);
    Tape<float> tp;
    ParamBinder<float> bind(tp, ps);
    Var x = tp.constant(Tensor<float>(input_shape(c, B), 0.5f));
    Var s = slow_pathway(bind, x, c), f = fast_pathway(bind, x, c);
    EXPECT_EQ(tp.shape(fuse(tp, s, f)), c.fused_shape(B)) << "trial " << trial;
    auto out = sft_forward(bind, x, c);
    EXPECT_EQ(tp.shape(out.logits), (Shape{B, 13}));
  }
}

TEST(Pathways, GradCheck) {
  SFTConfig c = toy_config();
  auto ps = init_sft_params<double>(c, 3);
  Rng rng(4);
  auto x = random_tensor(input_shape(c, 2), rng);
  for (const std::string path : {"slow", "fast"}) {
    Tensor<double> probe = random_tensor(Shape{2, path == "slow" ? c.c_slow : c.c_fast, 2, 4, 4}, rng);
    LossFn loss = [&](Tape<double>& tp) {
      ParamBinder<double> bind(tp, ps);
      Var xin = tp.param(x);
      Var y = path == "slow" ? slow_pathway(bind, xin, c) : fast_pathway(bind, xin, c);
      return sum(tp, mul(tp, y, tp.constant(probe)));
    };
    GradCheckOptions opt;
    opt.max_coords = 60;
    EXPECT_LT(gradient_check(loss, x, opt), 1e-4) << path;
    for (auto& e : ps.entries()) {
      if (e.name.rfind(path + ".", 0) != 0) continue;
      EXPECT_LT(gradient_check(loss, e.value, opt), 1e-4) << e.name;
    }
  }
}

// ------------------------------------------------------------------ fuse

TEST(Fuse, ChannelConcatSlowFirst) {
  Tape<float> tp;
  Var a = tp.constant(Tensor<float>({2, 32, 2, 8, 8}, 1.0f));
  Var b = tp.constant(Tensor<float>({2, 8, 2, 8, 8}, 2.0f));
  Var y = fuse(tp, a, b);
  ASSERT_EQ(tp.shape(y), (Shape{2, 40, 2, 8, 8}));
  const auto& v = tp.value(y);
  const std::size_t per = 2 * 8 * 8;
  EXPECT_EQ(v[31 * per], 1.0f);
  EXPECT_EQ(v[32 * per], 2.0f);
  EXPECT_EQ(v[40 * per], 1.0f);  // second sample starts with slow channels
}

TEST(Fuse, MismatchNamesAxis) {
  Tape<float> tp;
  Var a = tp.constant(Tensor<float>({2, 32, 2, 8, 8}));
  Var b = tp.constant(Tensor<float>({2, 8, 1, 8, 8}));
  try {
    fuse(tp, a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("axis 2"), std::string::npos) << e.what();
  }
}

// ------------------------------------------------------------------ head and full model

TEST(Head, ProbabilitiesAndLogitShape) {
  SFTConfig c = toy_config();
  c.num_classes = 13;
  auto ps = init_sft_params<float>(c, 5);
  Rng rng(6);
  Tensor<float> x(input_shape(c, 4));
  for (auto& v : x.data()) v = float(rng.uniform(-1, 1));
  Tape<float> tp;
  ParamBinder<float> bind(tp, ps);
  auto out = sft_forward(bind, tp.constant(x), c);
  ASSERT_EQ(tp.shape(out.logits), (Shape{4, 13}));
  const auto& p = tp.value(out.probs);
  for (std::size_t b = 0; b < 4; ++b) {
    double s = 0;
    for (std::size_t j = 0; j < 13; ++j) s += p[b * 13 + j];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Head, TrainingModeNeedsRng) {
  SFTConfig c = toy_config();
  auto ps = init_sft_params<float>(c, 5);
  Tape<float> tp;
  ParamBinder<float> bind(tp, ps);
  EXPECT_THROW(sft_forward(bind, tp.constant(Tensor<float>(input_shape(c, 1))), c, true), ContractError);
}

TEST(Head, GradCheck) {
  SFTConfig c = toy_config();
  c.encoder.dropout_p = 0.3;
  auto ps = init_sft_params<double>(c, 7);
  Rng rng(8);
  auto fused = random_tensor(c.fused_shape(2), rng, 0.0, 1.0);
  const std::vector<int> targets = {3, 11};
  LossFn loss = [&](Tape<double>& tp) {
    ParamBinder<double> bind(tp, ps);
    Rng drop(9);  // same mask on every evaluation
    auto out = head(bind, tp.param(fused), c, true, &drop);
    return mean(tp, cross_entropy_logits(tp, out.logits, targets));
  };
  EXPECT_LT(gradient_check(loss, fused), 1e-4);
  for (auto& e : ps.entries()) {
    if (e.name.rfind("slow.", 0) == 0 || e.name.rfind("fast.", 0) == 0) continue;
    EXPECT_LT(gradient_check(loss, e.value), 1e-4) << e.name;
  }
}

TEST(FullModel, DceGradCheckTwoSamples16x16) {
  SFTConfig c = toy_config(16);
  auto ps = init_sft_params<double>(c, 10);
  Rng rng(11);
  auto x = random_tensor(input_shape(c, 2), rng);
  const std::vector<int> targets = {0, 7};
  const std::vector<double> dist = {3.0, 21.0};
  LossFn loss = [&](Tape<double>& tp) {
    ParamBinder<double> bind(tp, ps);
    auto out = sft_forward(bind, tp.param(x), c);
    return dce_loss(tp, out.logits, targets, dist, DCEConfig{});
  };
  GradCheckOptions opt;
  opt.max_coords = 40;
  EXPECT_LT(gradient_check(loss, x, opt), 1e-4);
  for (auto& e : ps.entries()) EXPECT_LT(gradient_check(loss, e.value, opt), 1e-4) << e.name;
}

TEST(FullModel, InferenceIsDeterministic) {
  SFTConfig c = toy_config();
  auto ps = init_sft_params<float>(c, 12);
  Tensor<float> clip({8, 16, 16, 3});
  Rng rng(13);
  for (auto& v : clip.data()) v = float(rng.normal());
  auto a = classify_batch(ps, c, {&clip, &clip});
  auto b = classify_batch(ps, c, {&clip});
  EXPECT_EQ(a[0].probs, a[1].probs);
  EXPECT_EQ(a[0].label, b[0].label);
  for (std::size_t j = 0; j < a[0].probs.size(); ++j) EXPECT_NEAR(a[0].probs[j], b[0].probs[j], 1e-6);
}

TEST(FullModel, InitIsSeededAndCountStable) {
  SFTConfig c;
  auto a = init_sft_params<float>(c, 1), b = init_sft_params<float>(c, 1), d = init_sft_params<float>(c, 2);
  EXPECT_EQ(a.count(), b.count());
  EXPECT_EQ(vec(a["cls.w"].data()), vec(b["cls.w"].data()));
  EXPECT_NE(vec(a["cls.w"].data()), vec(d["cls.w"].data()));
}

TEST(PackBatch, LayoutIsChannelMajor) {
  Tensor<float> clip({2, 2, 2, 3});
  for (std::size_t i = 0; i < clip.size(); ++i) clip[i] = float(i);
  auto t = pack_batch<float>({&clip});
  ASSERT_EQ(t.shape(), (Shape{1, 3, 2, 2, 2}));
  // (c=1, k=1, y=0, x=1) <- clip[k=1][y=0][x=1][c=1]
  EXPECT_EQ(t[(1 * 2 + 1) * 4 + 1], clip[((1 * 2 + 0) * 2 + 1) * 3 + 1]);
  Tensor<float> other({2, 2, 2, 2});
  EXPECT_THROW(pack_batch<float>({&clip, &other}), DimensionError);
}

// ------------------------------------------------------------------ classification rule

TEST(Classify, UniformLogitsPickClassZero) {
  std::vector<double> logits(13, 0.7);
  EXPECT_EQ(argmax_smallest(logits.begin(), logits.end()), 0);
  logits[4] = 0.9;
  logits[9] = 0.9;
  EXPECT_EQ(argmax_smallest(logits.begin(), logits.end()), 4);
}

TEST(Classify, InvariantUnderMonotoneTransforms) {
  Rng rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> l(13), shifted(13), squashed(13);
    for (auto& v : l) v = std::round(rng.uniform(-3, 3) * 4) / 4;  // coarse grid forces ties
    for (std::size_t j = 0; j < 13; ++j) {
      shifted[j] = l[j] + 17.25;
      squashed[j] = std::tanh(l[j] / 4) * 2 + 1;
    }
    const int a = argmax_smallest(l.begin(), l.end());
    EXPECT_EQ(argmax_smallest(shifted.begin(), shifted.end()), a);
    EXPECT_EQ(argmax_smallest(squashed.begin(), squashed.end()), a);
  }
}

// ------------------------------------------------------------------ variants

TEST(Variants, FusedChannelsAndForward) {
  SFTConfig base = toy_config();
  for (auto v : kAllVariants) {
    SFTConfig c = apply_variant(base, v);
    const std::size_t expect = v == Variant::no_slow ? base.c_fast : v == Variant::no_fast ? base.c_slow : base.c_slow + base.c_fast;
    EXPECT_EQ(c.fused_channels(), expect) << variant_name(v);
    auto ps = init_sft_params<float>(c, 15);
    EXPECT_EQ(ps.contains("enc.0.attn.wq"), v != Variant::no_transformer) << variant_name(v);
    Tape<float> tp;
    ParamBinder<float> bind(tp, ps);
    auto out = sft_forward(bind, tp.constant(Tensor<float>(input_shape(c, 2), 0.1f)), c);
    EXPECT_EQ(tp.shape(out.fused), c.fused_shape(2)) << variant_name(v);
    EXPECT_EQ(tp.shape(out.logits), (Shape{2, 13})) << variant_name(v);
  }
  EXPECT_EQ(apply_variant(base, Variant::no_temporal_pooling).classifier_inputs(), base.encoder.d_model * base.tokens());
}

TEST(Info, StageShapesEndAtLogits) {
  SFTConfig c;
  auto s = stage_shapes(c, 2);
  EXPECT_EQ(s.front().second, (Shape{2, 3, 8, 64, 64}));
  EXPECT_EQ(s.back().second, (Shape{2, 13}));
  auto fused = std::find_if(s.begin(), s.end(), [](auto& p) { return p.first == "fused"; });
  ASSERT_NE(fused, s.end());
  EXPECT_EQ(fused->second, c.fused_shape(2));
}
