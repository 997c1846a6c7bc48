#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ugest/ops.hpp"
#include "ugest/params.hpp"
#include "ugest/rng.hpp"

namespace ugest {

struct TransformerEncoderConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t n_layers = 4;
  double dropout_p = 0.1;
  bool positional_encoding = true;

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_ff == 0 || n_layers == 0) {
      throw ConfigError("transformer: d_model, n_heads, d_ff and n_layers must be positive");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("transformer: d_model (" + std::to_string(d_model) + ") not divisible by n_heads (" +
                        std::to_string(n_heads) + ")");
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("transformer: dropout_p must be in [0,1)");
  }
};

struct AttentionVars {
  Var wq, wk, wv, wo;
};

/// One pre-norm encoder block's parameters, bound to a tape.
struct EncoderLayerVars {
  AttentionVars attn;
  Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Var w1, b1, w2, b2;
};

/// Registers one encoder block's parameters under `prefix`.
template <class T>
void init_encoder_layer(ParamSet<T>& ps, const std::string& prefix, const TransformerEncoderConfig& cfg, Rng& rng) {
  const auto D = cfg.d_model, F = cfg.d_ff;
  for (const char* n : {"wq", "wk", "wv", "wo"}) ps.add(prefix + "attn." + n, init_uniform<T>({D, D}, D, rng), true);
  ps.add(prefix + "ln1.gain", Tensor<T>({D}, T{1}), false);
  ps.add(prefix + "ln1.bias", Tensor<T>({D}), false);
  ps.add(prefix + "ln2.gain", Tensor<T>({D}, T{1}), false);
  ps.add(prefix + "ln2.bias", Tensor<T>({D}), false);
  ps.add(prefix + "ffn.w1", init_uniform<T>({D, F}, D, rng), true);
  ps.add(prefix + "ffn.b1", Tensor<T>({F}), false);
  ps.add(prefix + "ffn.w2", init_uniform<T>({F, D}, F, rng), true);
  ps.add(prefix + "ffn.b2", Tensor<T>({D}), false);
}

template <class T>
EncoderLayerVars bind_encoder_layer(ParamBinder<T>& bind, const std::string& prefix) {
  EncoderLayerVars v;
  v.attn = {bind(prefix + "attn.wq"), bind(prefix + "attn.wk"), bind(prefix + "attn.wv"), bind(prefix + "attn.wo")};
  v.ln1_gain = bind(prefix + "ln1.gain");
  v.ln1_bias = bind(prefix + "ln1.bias");
  v.ln2_gain = bind(prefix + "ln2.gain");
  v.ln2_bias = bind(prefix + "ln2.bias");
  v.w1 = bind(prefix + "ffn.w1");
  v.b1 = bind(prefix + "ffn.b1");
  v.w2 = bind(prefix + "ffn.w2");
  v.b2 = bind(prefix + "ffn.b2");
  return v;
}

/// x[... x Din] * W without bias.
template <class T>
Var project(Tape<T>& tp, Var x, Var W) {
  const Shape xs = tp.shape(x);
  const auto Din = xs.back();
  Var flat = reshape(tp, x, Shape{tp.value(x).size() / Din, Din});
  Var y = matmul(tp, flat, W);
  Shape os = xs;
  os.back() = tp.shape(W)[1];
  return reshape(tp, y, os);
}

/// Unmasked multi-head self-attention over x[B x L x d_model].
/// When `weights_out` is given it receives the [B*heads x L x L] attention map.
template <class T>
Var multi_head_attention(Tape<T>& tp, Var x, const AttentionVars& p, std::size_t n_heads, Var* weights_out = nullptr) {
  const Shape xs = tp.shape(x);
  if (xs.size() != 3) throw DimensionError("attention expects B x L x d_model, got " + shape_str(xs));
  const std::size_t B = xs[0], L = xs[1], D = xs[2];
  if (n_heads == 0 || D % n_heads != 0) {
    throw ConfigError("attention: d_model (" + std::to_string(D) + ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
  }
  const std::size_t H = n_heads, dh = D / H;
  auto heads = [&](Var v) {
    Var r = reshape(tp, v, Shape{B, L, H, dh});
    r = permute(tp, r, {0, 2, 1, 3});
    return reshape(tp, r, Shape{B * H, L, dh});
  };
  Var q = heads(project(tp, x, p.wq));
  Var k = heads(project(tp, x, p.wk));
  Var v = heads(project(tp, x, p.wv));
  Var scores = scale(tp, bmm(tp, q, k, /*transpose_b=*/true), T{1} / std::sqrt(static_cast<T>(dh)));
  Var attn = softmax(tp, scores, 2);
  if (weights_out) *weights_out = attn;
  Var ctx = bmm(tp, attn, v);
  ctx = reshape(tp, ctx, Shape{B, H, L, dh});
  ctx = permute(tp, ctx, {0, 2, 1, 3});
  ctx = reshape(tp, ctx, Shape{B, L, D});
  return project(tp, ctx, p.wo);
}

/// Sinusoidal encoding [L x D]: sin on even, cos on odd columns.
template <class T>
Tensor<T> sinusoidal_encoding(std::size_t L, std::size_t D) {
  Tensor<T> pe(Shape{L, D});
  for (std::size_t pos = 0; pos < L; ++pos)
    for (std::size_t i = 0; i < D; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(D));
      const double a = static_cast<double>(pos) * freq;
      pe[pos * D + i] = static_cast<T>(i % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  return pe;
}

/// Pre-norm blocks: x + MHA(LN(x)), then x + FFN(LN(x)).
template <class T>
Var encoder_layer(Tape<T>& tp, Var x, const EncoderLayerVars& p, std::size_t n_heads) {
  Var h = layer_norm(tp, x, p.ln1_gain, p.ln1_bias);
  x = add(tp, x, multi_head_attention(tp, h, p.attn, n_heads));
  h = layer_norm(tp, x, p.ln2_gain, p.ln2_bias);
  h = relu(tp, linear(tp, h, p.w1, p.b1));
  h = linear(tp, h, p.w2, p.b2);
  return add(tp, x, h);
}

template <class T>
Var transformer_encoder(Tape<T>& tp, Var x, const TransformerEncoderConfig& cfg, const std::vector<EncoderLayerVars>& layers) {
  cfg.validate();
  const Shape xs = tp.shape(x);
  if (xs.size() != 3 || xs[2] != cfg.d_model) {
    throw DimensionError("transformer_encoder expects B x L x " + std::to_string(cfg.d_model) + ", got " + shape_str(xs));
  }
  if (layers.size() != cfg.n_layers) throw ConfigError("transformer_encoder: layer parameter count != n_layers");
  if (cfg.positional_encoding) {
    const auto pe = sinusoidal_encoding<T>(xs[1], xs[2]);
    Tensor<T> tiled(xs);
    for (std::size_t b = 0; b < xs[0]; ++b) std::copy(pe.data().begin(), pe.data().end(), tiled.data().begin() + b * pe.size());
    x = add(tp, x, tp.constant(std::move(tiled)));
  }
  for (const auto& layer : layers) x = encoder_layer(tp, x, layer, cfg.n_heads);
  return x;
}

/// Inverted dropout: survivors are scaled by 1/(1-p). Identity at inference.
template <class T>
Var dropout(Tape<T>& tp, Var x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must be in [0,1)");
  if (!training || p == 0.0) return x;
  Tensor<T> mask(tp.shape(x));
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask.data()) m = rng.bernoulli(p) ? T{0} : keep;
  return mul(tp, x, tp.constant(std::move(mask)));
}

enum class PoolKind { temporal_mean, global_avg, max };

/// Reductions over B x C x T x H x W tensors (or any tensor given explicit axes).
/// temporal_mean reduces T (axis 2), global_avg reduces H and W (axes 3, 4).
/// An empty `axes` picks the default axes for the kind.
template <class T>
Var pool(Tape<T>& tp, Var x, PoolKind kind, std::vector<std::size_t> axes = {}) {
  if (axes.empty()) {
    switch (kind) {
      case PoolKind::temporal_mean: axes = {2}; break;
      case PoolKind::global_avg: axes = {3, 4}; break;
      case PoolKind::max: throw DimensionError("pool: max needs explicit axes");
    }
  }
  return kind == PoolKind::max ? reduce_max(tp, x, axes) : reduce_mean(tp, x, axes);
}

}  // namespace ugest
