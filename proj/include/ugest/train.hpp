#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ugest/sft.hpp"

namespace ugest {

// ============================================================ configuration

struct DCEConfig {
  double alpha = 1.6;
  double b0 = 2.0;
  double b1 = 28.0;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (!(alpha >= 0)) v.push_back("dce.alpha must be >= 0");
    if (!(b0 < b1)) v.push_back("dce.b0/dce.b1: b0 must be < b1");
    return v;
  }
};

struct TrainConfig {
  double lr0 = 1e-3;
  double lr_min = 1e-5;
  std::size_t epochs = 100;
  std::size_t batch = 16;
  double weight_decay = 1e-4;
  std::size_t patience = 10;
  std::uint64_t seed = 0;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (!(lr0 > 0)) v.push_back("train.lr0 must be positive");
    if (!(lr_min > 0) || lr_min > lr0) v.push_back("train.lr_min must be positive and <= train.lr0");
    if (epochs == 0) v.push_back("train.epochs must be positive");
    if (batch == 0) v.push_back("train.batch must be >= 1");
    if (!(weight_decay >= 0)) v.push_back("train.weight_decay must be >= 0");
    return v;
  }
};

inline nlohmann::ordered_json to_json(const DCEConfig& c) { return {{"alpha", c.alpha}, {"b0", c.b0}, {"b1", c.b1}}; }
inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},         {"lr_min", c.lr_min}, {"epochs", c.epochs}, {"batch", c.batch}, {"weight_decay", c.weight_decay},
          {"patience", c.patience}, {"seed", c.seed}};
}

// ============================================================ losses

/// Per-sample -log p(target) from a probability matrix [B x m].
inline std::vector<double> cross_entropy(const Tensor<double>& probs, const std::vector<int>& targets) {
  if (probs.ndim() != 2 || probs.dim(0) != targets.size()) throw DimensionError("cross_entropy: probs must be B x m with B targets");
  const std::size_t m = probs.dim(1);
  std::vector<double> out(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || std::size_t(targets[i]) >= m) throw InputError("cross_entropy: target " + std::to_string(targets[i]) + " out of range");
    out[i] = -std::log(probs[i * m + std::size_t(targets[i])]);
  }
  return out;
}

inline double dce_weight(double d, const DCEConfig& cfg) {
  if (cfg.b0 == cfg.b1) throw ConfigError("dce: b0 == b1");
  return 1.0 + cfg.alpha * (d - cfg.b0) / (cfg.b1 - cfg.b0);
}

/// (1/B) sum CE_i * (1 + alpha (d_i - b0) / (b1 - b0)); no clamping of d.
inline double dce_loss(const std::vector<double>& ce, const std::vector<double>& distances, const DCEConfig& cfg) {
  if (ce.size() != distances.size() || ce.empty()) throw DimensionError("dce_loss: losses and distances must be non-empty and equal length");
  double s = 0;
  for (std::size_t i = 0; i < ce.size(); ++i) s += ce[i] * dce_weight(distances[i], cfg);
  return s / double(ce.size());
}

inline double dce_loss(const Tensor<double>& probs, const std::vector<int>& targets, const std::vector<double>& distances, const DCEConfig& cfg) {
  return dce_loss(cross_entropy(probs, targets), distances, cfg);
}

/// Differentiable DCE from logits (log-sum-exp cross-entropy).
template <class T>
Var dce_loss(Tape<T>& tp, Var logits, const std::vector<int>& targets, const std::vector<double>& distances, const DCEConfig& cfg) {
  if (distances.size() != targets.size()) throw DimensionError("dce_loss: targets and distances differ in length");
  std::vector<T> w(distances.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(dce_weight(distances[i], cfg));
  return weighted_mean(tp, cross_entropy_logits(tp, logits, targets), std::move(w));
}

/// lambda * sum of squared entries over decay-marked parameters.
template <class T>
Var l2_penalty(ParamBinder<T>& bind, double lambda) {
  auto& tp = bind.tape();
  Var total = tp.constant(Tensor<T>::scalar(T{0}));
  if (lambda == 0) return total;
  for (const auto& e : bind.params().entries())
    if (e.decay) total = add(tp, total, sum_squares(tp, bind(e.name)));
  return scale(tp, total, static_cast<T>(lambda));
}

// ============================================================ optimiser

struct AdamConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

/// Bias-corrected Adam on every parameter that holds a gradient.
template <class T>
void adam_step(ParamSet<T>& params, AdamState& st, double lr, const AdamConfig& c = {}) {
  auto& es = params.entries();
  if (st.m.empty()) {
    for (const auto& e : es) {
      st.m.emplace_back(e.value.size(), 0.0);
      st.v.emplace_back(e.value.size(), 0.0);
    }
  }
  if (st.m.size() != es.size()) throw DimensionError("adam_step: optimiser state does not match parameter set");
  ++st.step;
  const double bc1 = 1.0 - std::pow(c.beta1, double(st.step)), bc2 = 1.0 - std::pow(c.beta2, double(st.step));
  for (std::size_t i = 0; i < es.size(); ++i) {
    auto& p = es[i].value;
    if (!p.grad) continue;
    if (p.grad->size() != p.size() || st.m[i].size() != p.size()) throw DimensionError("adam_step: gradient shape mismatch for " + es[i].name);
    auto& m = st.m[i];
    auto& v = st.v[i];
    const auto& g = *p.grad;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = double(g[j]);
      m[j] = c.beta1 * m[j] + (1 - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1 - c.beta2) * gj * gj;
      p[j] = static_cast<T>(double(p[j]) - lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.eps));
    }
  }
}

inline double cosine_lr(std::size_t t, const TrainConfig& c) {
  constexpr double kPi = 3.14159265358979323846;
  return c.lr_min + 0.5 * (c.lr0 - c.lr_min) * (1.0 + std::cos(kPi * double(t) / double(c.epochs)));
}

// ============================================================ training loop

/// One preprocessed training example.
struct Example {
  std::string id;
  Tensor<float> clip;  // k x S x S x C'
  int label = 0;
  double distance_m = 0;
};

struct TrainResult {
  SFTConfig model;
  ParamSet<float> params;
  std::vector<nlohmann::ordered_json> log;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

/// Model and loss configuration actually used for a variant.
inline std::pair<SFTConfig, DCEConfig> make_variant(Variant v, const SFTConfig& model, const DCEConfig& dce) {
  DCEConfig d = dce;
  if (v == Variant::no_dce) d.alpha = 0.0;
  return {apply_variant(model, v), d};
}

struct EvalSummary {
  double loss = 0, accuracy = 0;
};

/// Mean DCE loss and accuracy over examples (inference mode).
inline EvalSummary evaluate_examples(ParamSet<float>& params, const SFTConfig& cfg, const std::vector<Example>& data, const DCEConfig& dce,
                                     std::size_t batch = 32) {
  EvalSummary s;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t end = std::min(data.size(), start + batch);
    std::vector<const Tensor<float>*> clips;
    std::vector<int> targets;
    std::vector<double> dist;
    for (std::size_t i = start; i < end; ++i) {
      clips.push_back(&data[i].clip);
      targets.push_back(data[i].label);
      dist.push_back(data[i].distance_m);
    }
    Tape<float> tp;
    ParamBinder<float> bind(tp, params);
    auto out = sft_forward(bind, tp.constant(pack_batch<float>(clips)), cfg, false);
    s.loss += double(tp.value(dce_loss(tp, out.logits, targets, dist, dce))[0]) * double(end - start);
    const auto& lg = tp.value(out.logits);
    const std::size_t m = cfg.num_classes;
    for (std::size_t b = 0; b < end - start; ++b)
      s.accuracy += argmax_smallest(lg.data().begin() + long(b * m), lg.data().begin() + long((b + 1) * m)) == targets[b];
  }
  s.loss /= double(data.size());
  s.accuracy /= double(data.size());
  return s;
}

using TrainLogSink = std::function<void(const nlohmann::ordered_json&)>;

/// Seeded mini-batch training with DCE (+ L2), Adam and a cosine schedule;
/// early stopping on validation loss restores the best epoch's parameters.
inline TrainResult train_model(const SFTConfig& model_cfg, const std::vector<Example>& train, const std::vector<Example>& val,
                               const TrainConfig& tc, const DCEConfig& dce_cfg, Variant variant, const TrainLogSink& sink = {}) {
  if (train.empty()) throw InputError("train: empty train split");
  if (val.empty()) throw InputError("train: empty validation split");
  for (const auto& v : {tc.violations(), dce_cfg.violations()})
    if (!v.empty()) throw ConfigError(v.front());
  auto [cfg, dce] = make_variant(variant, model_cfg, dce_cfg);
  cfg.validate();

  TrainResult r;
  r.model = cfg;
  r.params = init_sft_params<float>(cfg, tc.seed);
  ParamSet<float> best = r.params;
  AdamState adam;
  const Rng root(tc.seed);
  Rng dropout_rng = root.split("dropout");
  std::vector<std::size_t> order(train.size());
  std::size_t bad_epochs = 0;

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, tc);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = root.split("shuffle").split(epoch);
    shuffle.shuffle(order.begin(), order.end());
    double loss_sum = 0;
    std::size_t batch_idx = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch, ++batch_idx) {
      const std::size_t end = std::min(order.size(), start + tc.batch);
      std::vector<const Tensor<float>*> clips;
      std::vector<int> targets;
      std::vector<double> dist;
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = train[order[i]];
        clips.push_back(&ex.clip);
        targets.push_back(ex.label);
        dist.push_back(ex.distance_m);
      }
      Tape<float> tp;
      ParamBinder<float> bind(tp, r.params);
      auto out = sft_forward(bind, tp.constant(pack_batch<float>(clips)), cfg, true, &dropout_rng);
      Var loss = add(tp, dce_loss(tp, out.logits, targets, dist, dce), l2_penalty(bind, tc.weight_decay));
      const double lv = double(tp.value(loss)[0]);
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << batch_idx << ", lr " << lr;
        throw TrainingError(msg.str());
      }
      r.params.zero_grad();
      tp.backward(loss);
      adam_step(r.params, adam, lr);
      loss_sum += lv * double(end - start);
    }
    const auto vs = evaluate_examples(r.params, cfg, val, dce);
    nlohmann::ordered_json row;
    row["epoch"] = epoch;
    row["lr"] = lr;
    row["train_loss"] = loss_sum / double(train.size());
    row["val_loss"] = vs.loss;
    row["val_acc"] = vs.accuracy;
    row["variant"] = variant_name(variant);
    r.log.push_back(row);
    if (sink) sink(row);
    if (!std::isfinite(vs.loss)) throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    if (vs.loss < r.best_val_loss) {
      r.best_val_loss = vs.loss;
      r.best_epoch = epoch;
      best = r.params;
      bad_epochs = 0;
    } else if (++bad_epochs >= tc.patience) {
      break;
    }
  }
  r.params = std::move(best);
  r.params.zero_grad();
  return r;
}

/// Class-stratified seeded subsample keeping round(fraction * n_c) (at least 1) per class.
inline std::vector<Example> subsample_fraction(const std::vector<Example>& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) throw ConfigError("train.fraction must be in (0,1]");
  if (fraction == 1.0) return data;
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data[i].label].push_back(i);
  Rng rng(Rng(seed).split("fraction"));
  std::vector<std::size_t> keep;
  for (auto& [c, idx] : by_class) {
    rng.shuffle(idx.begin(), idx.end());
    const auto n = std::max<std::size_t>(1, std::size_t(std::lround(fraction * double(idx.size()))));
    keep.insert(keep.end(), idx.begin(), idx.begin() + long(std::min(n, idx.size())));
  }
  std::sort(keep.begin(), keep.end());
  std::vector<Example> out;
  for (auto i : keep) out.push_back(data[i]);
  return out;
}

}  // namespace ugest
