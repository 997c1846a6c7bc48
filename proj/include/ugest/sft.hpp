#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ugest/layers.hpp"
#include "ugest/preprocess.hpp"

namespace ugest {

// ============================================================ variants

enum class Variant { full, no_slow, no_fast, no_transformer, no_dce, no_temporal_pooling };

inline constexpr std::array<Variant, 6> kAllVariants = {Variant::full,           Variant::no_slow, Variant::no_fast,
                                                        Variant::no_transformer, Variant::no_dce,  Variant::no_temporal_pooling};

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_slow: return "no_slow";
    case Variant::no_fast: return "no_fast";
    case Variant::no_transformer: return "no_transformer";
    case Variant::no_dce: return "no_dce";
    case Variant::no_temporal_pooling: return "no_temporal_pooling";
  }
  return "full";
}

inline Variant variant_from_name(const std::string& s) {
  for (auto v : kAllVariants)
    if (variant_name(v) == s) return v;
  throw ConfigError("unknown variant '" + s + "' (expected full, no_slow, no_fast, no_transformer, no_dce, no_temporal_pooling)");
}

// ============================================================ configuration

struct SFTConfig {
  std::size_t frames = 8;  // k
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t in_channels = 3;  // C + 2 flow channels
  std::size_t tau_slow = 4;
  std::size_t tau_fast = 1;
  std::size_t c_slow = 32;
  std::size_t c_fast = 8;
  bool use_slow = true;
  bool use_fast = true;
  bool use_transformer = true;
  bool temporal_pooling = true;
  TransformerEncoderConfig encoder;
  std::size_t num_classes = kNumClasses;

  std::size_t fused_channels() const { return (use_slow ? c_slow : 0) + (use_fast ? c_fast : 0); }
  std::size_t tokens() const { return frames / 4; }
  Shape fused_shape(std::size_t B) const { return {B, fused_channels(), frames / 4, height / 4, width / 4}; }
  std::size_t classifier_inputs() const { return encoder.d_model * (temporal_pooling ? 1 : tokens()); }

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (frames == 0 || frames % 4 != 0) v.push_back("model.frames must be a positive multiple of 4");
    if (tau_slow == 0 || frames % tau_slow != 0) v.push_back("model.tau_slow must divide model.frames");
    if (tau_slow != 1 && tau_slow != 2 && tau_slow != 4) v.push_back("model.tau_slow must be 1, 2 or 4");
    if (tau_fast != 1) v.push_back("model.tau_fast must be 1");
    if (height == 0 || height % 4 != 0 || width == 0 || width % 4 != 0) v.push_back("model.height/model.width must be positive multiples of 4");
    if (in_channels == 0) v.push_back("model.in_channels must be positive");
    if (!use_slow && !use_fast) v.push_back("model: at least one pathway is required");
    if (use_slow && c_slow == 0) v.push_back("model.c_slow must be positive");
    if (use_fast && c_fast == 0) v.push_back("model.c_fast must be positive");
    if (use_slow && use_fast && c_fast >= c_slow) v.push_back("model.c_fast must be smaller than model.c_slow");
    if (num_classes < 2) v.push_back("model.num_classes must be >= 2");
    try {
      encoder.validate();
    } catch (const ConfigError& e) {
      v.push_back(std::string("model.encoder: ") + e.what());
    }
    return v;
  }

  void validate() const {
    auto v = violations();
    if (!v.empty()) throw ConfigError(v.front());
  }
};

inline nlohmann::ordered_json to_json(const SFTConfig& c) {
  return {{"frames", c.frames},
          {"height", c.height},
          {"width", c.width},
          {"in_channels", c.in_channels},
          {"tau_slow", c.tau_slow},
          {"tau_fast", c.tau_fast},
          {"c_slow", c.c_slow},
          {"c_fast", c.c_fast},
          {"use_slow", c.use_slow},
          {"use_fast", c.use_fast},
          {"use_transformer", c.use_transformer},
          {"temporal_pooling", c.temporal_pooling},
          {"d_model", c.encoder.d_model},
          {"n_heads", c.encoder.n_heads},
          {"d_ff", c.encoder.d_ff},
          {"n_layers", c.encoder.n_layers},
          {"dropout_p", c.encoder.dropout_p},
          {"positional_encoding", c.encoder.positional_encoding},
          {"num_classes", c.num_classes}};
}

inline SFTConfig sft_config_from_json(const nlohmann::json& j) {
  SFTConfig c;
  c.frames = j.value("frames", c.frames);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.tau_slow = j.value("tau_slow", c.tau_slow);
  c.tau_fast = j.value("tau_fast", c.tau_fast);
  c.c_slow = j.value("c_slow", c.c_slow);
  c.c_fast = j.value("c_fast", c.c_fast);
  c.use_slow = j.value("use_slow", c.use_slow);
  c.use_fast = j.value("use_fast", c.use_fast);
  c.use_transformer = j.value("use_transformer", c.use_transformer);
  c.temporal_pooling = j.value("temporal_pooling", c.temporal_pooling);
  c.encoder.d_model = j.value("d_model", c.encoder.d_model);
  c.encoder.n_heads = j.value("n_heads", c.encoder.n_heads);
  c.encoder.d_ff = j.value("d_ff", c.encoder.d_ff);
  c.encoder.n_layers = j.value("n_layers", c.encoder.n_layers);
  c.encoder.dropout_p = j.value("dropout_p", c.encoder.dropout_p);
  c.encoder.positional_encoding = j.value("positional_encoding", c.encoder.positional_encoding);
  c.num_classes = j.value("num_classes", c.num_classes);
  return c;
}

/// Model-side edits of an ablation variant (the loss-side edit of no_dce lives in training).
inline SFTConfig apply_variant(SFTConfig c, Variant v) {
  switch (v) {
    case Variant::no_slow: c.use_slow = false; break;
    case Variant::no_fast: c.use_fast = false; break;
    case Variant::no_transformer: c.use_transformer = false; break;
    case Variant::no_temporal_pooling: c.temporal_pooling = false; break;
    case Variant::full:
    case Variant::no_dce: break;
  }
  return c;
}

// ============================================================ parameters

template <class T>
ParamSet<T> init_sft_params(const SFTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamSet<T> ps;
  Rng rng(Rng(seed).split("sft-init"));
  auto conv = [&](const std::string& name, std::size_t out, std::size_t in, Shape k) {
    const std::size_t fan_in = in * k[0] * k[1] * k[2];
    ps.add(name + ".w", init_uniform<T>({out, in, k[0], k[1], k[2]}, fan_in, rng), true);
    ps.add(name + ".b", Tensor<T>({out}), false);
  };
  if (cfg.use_slow) {
    conv("slow.conv1", cfg.c_slow, cfg.in_channels, {1, 3, 3});
    conv("slow.conv2", cfg.c_slow, cfg.c_slow, {3, 3, 3});
  }
  if (cfg.use_fast) {
    conv("fast.conv1", cfg.c_fast, cfg.in_channels, {3, 3, 3});
    conv("fast.conv2", cfg.c_fast, cfg.c_fast, {3, 3, 3});
  }
  const auto D = cfg.encoder.d_model;
  ps.add("embed.w", init_uniform<T>({cfg.fused_channels(), D}, cfg.fused_channels(), rng), true);
  ps.add("embed.b", Tensor<T>({D}), false);
  if (cfg.use_transformer)
    for (std::size_t l = 0; l < cfg.encoder.n_layers; ++l) init_encoder_layer(ps, "enc." + std::to_string(l) + ".", cfg.encoder, rng);
  ps.add("cls.w", init_uniform<T>({cfg.classifier_inputs(), cfg.num_classes}, cfg.classifier_inputs(), rng), true);
  ps.add("cls.b", Tensor<T>({cfg.num_classes}), false);
  return ps;
}

// ============================================================ forward

namespace sft_detail {

inline void check_input(const SFTConfig& cfg, const Shape& s) {
  if (s.size() != 5 || s[1] != cfg.in_channels || s[2] != cfg.frames || s[3] != cfg.height || s[4] != cfg.width) {
    throw DimensionError("SFT input must be B x " + std::to_string(cfg.in_channels) + " x " + std::to_string(cfg.frames) + " x " +
                         std::to_string(cfg.height) + " x " + std::to_string(cfg.width) + ", got " + shape_str(s));
  }
}

}  // namespace sft_detail

/// Subsample by tau_slow, conv 1x3x3 (spatial stride 2), conv 3x3x3 (spatial
/// stride 2, temporal stride 4/tau_slow), ReLU after each.
template <class T>
Var slow_pathway(ParamBinder<T>& bind, Var x, const SFTConfig& cfg) {
  auto& tp = bind.tape();
  sft_detail::check_input(cfg, tp.shape(x));
  Var h = subsample(tp, x, 2, cfg.tau_slow);
  h = relu(tp, conv3d(tp, h, bind("slow.conv1.w"), bind("slow.conv1.b"), {1, 2, 2}, {0, 1, 1}));
  return relu(tp, conv3d(tp, h, bind("slow.conv2.w"), bind("slow.conv2.b"), {4 / cfg.tau_slow, 2, 2}, {1, 1, 1}));
}

/// Two 3x3x3 convs with stride 2 on every axis, ReLU after each.
template <class T>
Var fast_pathway(ParamBinder<T>& bind, Var x, const SFTConfig& cfg) {
  auto& tp = bind.tape();
  sft_detail::check_input(cfg, tp.shape(x));
  Var h = relu(tp, conv3d(tp, x, bind("fast.conv1.w"), bind("fast.conv1.b"), {2, 2, 2}, {1, 1, 1}));
  return relu(tp, conv3d(tp, h, bind("fast.conv2.w"), bind("fast.conv2.b"), {2, 2, 2}, {1, 1, 1}));
}

/// Channel concatenation, slow channels first.
template <class T>
Var fuse(Tape<T>& tp, Var slow, Var fast) {
  return concat(tp, slow, fast, 1);
}

template <class T>
struct SFTOutputs {
  Var fused, logits, probs;
};

/// Spatial GAP -> tokens -> embedding -> encoder -> temporal mean (or flatten)
/// -> dropout -> classifier.
template <class T>
SFTOutputs<T> head(ParamBinder<T>& bind, Var fused, const SFTConfig& cfg, bool training, Rng* dropout_rng) {
  auto& tp = bind.tape();
  const Shape fs = tp.shape(fused);
  const std::size_t B = fs[0], L = fs[2];
  Var tok = pool(tp, fused, PoolKind::global_avg);  // B x C x L
  tok = permute(tp, tok, {0, 2, 1});                // B x L x C
  tok = linear(tp, tok, bind("embed.w"), bind("embed.b"));
  if (cfg.use_transformer) {
    std::vector<EncoderLayerVars> layers;
    for (std::size_t l = 0; l < cfg.encoder.n_layers; ++l) layers.push_back(bind_encoder_layer(bind, "enc." + std::to_string(l) + "."));
    tok = transformer_encoder(tp, tok, cfg.encoder, layers);
  }
  Var feat = cfg.temporal_pooling ? reduce_mean(tp, tok, {1}) : reshape(tp, tok, Shape{B, L * cfg.encoder.d_model});
  if (training) {
    if (!dropout_rng) throw ContractError("training-mode forward needs a dropout rng");
    feat = dropout(tp, feat, cfg.encoder.dropout_p, true, *dropout_rng);
  }
  SFTOutputs<T> out;
  out.fused = fused;
  out.logits = linear(tp, feat, bind("cls.w"), bind("cls.b"));
  out.probs = softmax(tp, out.logits, 1);
  return out;
}

template <class T>
SFTOutputs<T> sft_forward(ParamBinder<T>& bind, Var x, const SFTConfig& cfg, bool training = false, Rng* dropout_rng = nullptr) {
  auto& tp = bind.tape();
  Var fused;
  if (cfg.use_slow && cfg.use_fast) fused = fuse(tp, slow_pathway(bind, x, cfg), fast_pathway(bind, x, cfg));
  else if (cfg.use_slow) fused = slow_pathway(bind, x, cfg);
  else fused = fast_pathway(bind, x, cfg);
  if (tp.shape(fused) != cfg.fused_shape(tp.shape(x)[0])) {
    throw ContractError("fused shape " + shape_str(tp.shape(fused)) + " != " + shape_str(cfg.fused_shape(tp.shape(x)[0])));
  }
  return head(bind, fused, cfg, training, dropout_rng);
}

// ============================================================ input packing and inference

/// Packs processed clips (k x S x S x C') into a B x C' x k x S x S batch.
template <class T>
Tensor<T> pack_batch(const std::vector<const Tensor<float>*>& clips) {
  if (clips.empty()) throw InputError("pack_batch: empty batch");
  const Shape s = clips.front()->shape();
  if (s.size() != 4) throw DimensionError("processed clip must be k x S x S x C', got " + shape_str(s));
  const std::size_t K = s[0], H = s[1], W = s[2], C = s[3];
  Tensor<T> out({clips.size(), C, K, H, W});
  for (std::size_t b = 0; b < clips.size(); ++b) {
    if (clips[b]->shape() != s) throw DimensionError("pack_batch: clip shapes differ: " + shape_str(clips[b]->shape()) + " vs " + shape_str(s));
    const auto src = clips[b]->data();
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t p = 0; p < H * W; ++p)
        for (std::size_t c = 0; c < C; ++c) out[(((b * C + c) * K + k) * H * W) + p] = static_cast<T>(src[(k * H * W + p) * C + c]);
  }
  return out;
}

/// argmax with the smallest index winning ties.
template <class It>
int argmax_smallest(It first, It last) {
  int best = 0, i = 0;
  for (It it = first; it != last; ++it, ++i)
    if (*it > *(first + best)) best = i;
  return best;
}

struct Classification {
  int label = 0;
  std::vector<double> probs;
};

/// Inference on a batch of processed clips; one result per clip.
inline std::vector<Classification> classify_batch(ParamSet<float>& params, const SFTConfig& cfg, const std::vector<const Tensor<float>*>& clips) {
  Tape<float> tp;
  ParamBinder<float> bind(tp, params);
  auto out = sft_forward(bind, tp.constant(pack_batch<float>(clips)), cfg, false);
  const auto& pr = tp.value(out.probs);
  const std::size_t m = cfg.num_classes;
  std::vector<Classification> res(clips.size());
  for (std::size_t b = 0; b < clips.size(); ++b) {
    res[b].probs.assign(pr.data().begin() + long(b * m), pr.data().begin() + long((b + 1) * m));
    const auto& lg = tp.value(out.logits);
    res[b].label = argmax_smallest(lg.data().begin() + long(b * m), lg.data().begin() + long((b + 1) * m));
  }
  return res;
}

inline Classification classify(ParamSet<float>& params, const SFTConfig& cfg, const ProcessedClip& clip) {
  return classify_batch(params, cfg, {&clip.frames}).front();
}

// ============================================================ introspection

/// Per-stage output shapes for a batch of B (used by `info`).
inline std::vector<std::pair<std::string, Shape>> stage_shapes(const SFTConfig& cfg, std::size_t B = 1) {
  std::vector<std::pair<std::string, Shape>> s;
  const std::size_t T = cfg.frames, H = cfg.height, W = cfg.width, D = cfg.encoder.d_model;
  s.push_back({"input", {B, cfg.in_channels, T, H, W}});
  if (cfg.use_slow) {
    s.push_back({"slow.subsample", {B, cfg.in_channels, T / cfg.tau_slow, H, W}});
    s.push_back({"slow.conv1", {B, cfg.c_slow, T / cfg.tau_slow, H / 2, W / 2}});
    s.push_back({"slow.conv2", {B, cfg.c_slow, T / 4, H / 4, W / 4}});
  }
  if (cfg.use_fast) {
    s.push_back({"fast.conv1", {B, cfg.c_fast, T / 2, H / 2, W / 2}});
    s.push_back({"fast.conv2", {B, cfg.c_fast, T / 4, H / 4, W / 4}});
  }
  s.push_back({"fused", cfg.fused_shape(B)});
  s.push_back({"tokens", {B, T / 4, cfg.fused_channels()}});
  s.push_back({"embed", {B, T / 4, D}});
  if (cfg.use_transformer) s.push_back({"encoder", {B, T / 4, D}});
  s.push_back({cfg.temporal_pooling ? "temporal_mean" : "flatten", {B, cfg.classifier_inputs()}});
  s.push_back({"logits", {B, cfg.num_classes}});
  return s;
}

}  // namespace ugest
