#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ugest/dataset.hpp"
#include "ugest/metrics.hpp"
#include "ugest/preprocess.hpp"
#include "ugest/sft.hpp"
#include "ugest/train.hpp"

namespace ugest {

struct GenOptions {
  std::size_t train_per_class = 40;
  std::size_t val_per_class = 10;
  std::size_t test_per_class = 10;
  double aug_fraction = 0.0;
  std::size_t sequences = 0;
  std::size_t seq_min = 3;
  std::size_t seq_max = 5;
};

/// Everything a subcommand may need. model.frames/height/width/in_channels
/// left at 0 are derived from the preprocessing and generator settings.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0 = available cores
  SynthConfig synth;
  GenOptions gen;
  PreprocessConfig preprocess;
  SFTConfig model = [] {
    SFTConfig m;
    m.frames = m.height = m.width = m.in_channels = 0;
    return m;
  }();
  TrainConfig train;
  double train_fraction = 1.0;
  std::size_t repetitions = 1;
  Variant variant = Variant::full;
  DCEConfig dce;
  DWAConfig dwa;
  std::size_t window_frames = 0;  // 0 = whole clip

  std::size_t thread_count() const { return threads ? threads : default_threads(); }

  /// Model config with derived fields filled in.
  SFTConfig resolved_model() const {
    SFTConfig m = model;
    if (!m.frames) m.frames = preprocess.k;
    if (!m.height) m.height = preprocess.target_size;
    if (!m.width) m.width = preprocess.target_size;
    if (!m.in_channels) m.in_channels = synth.channels + 2;
    return m;
  }

  /// Propagates the global seed into every stochastic component.
  void apply_seed(std::uint64_t s) {
    seed = s;
    synth.seed = s;
    preprocess.seed = s;
    train.seed = s;
  }
};

// ============================================================ dotted keys

namespace config_detail {

struct Field {
  std::function<void(RunConfig&, const nlohmann::json&)> set;
  std::function<nlohmann::ordered_json(const RunConfig&)> get;
};

template <class V, class Ref>
Field make_field(Ref ref) {
  return {[ref](RunConfig& c, const nlohmann::json& v) { ref(c) = v.get<V>(); },
          [ref](const RunConfig& c) { return nlohmann::ordered_json(ref(const_cast<RunConfig&>(c))); }};
}

#define UGEST_FIELD(key, type, expr) \
  f.emplace(key, make_field<type>([](RunConfig& c) -> type& { return expr; }))

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    UGEST_FIELD("seed", std::uint64_t, c.seed);
    UGEST_FIELD("threads", std::size_t, c.threads);
    UGEST_FIELD("synth.height", std::size_t, c.synth.height);
    UGEST_FIELD("synth.width", std::size_t, c.synth.width);
    UGEST_FIELD("synth.channels", std::size_t, c.synth.channels);
    UGEST_FIELD("synth.frames", std::size_t, c.synth.frames);
    UGEST_FIELD("synth.fps", double, c.synth.fps);
    UGEST_FIELD("synth.base_size", double, c.synth.base_size);
    UGEST_FIELD("synth.ref_distance", double, c.synth.ref_distance);
    UGEST_FIELD("synth.min_distance", double, c.synth.min_distance);
    UGEST_FIELD("synth.max_distance", double, c.synth.max_distance);
    UGEST_FIELD("synth.noise_floor", double, c.synth.noise_floor);
    UGEST_FIELD("synth.noise_slope", double, c.synth.noise_slope);
    UGEST_FIELD("synth.blur_slope", double, c.synth.blur_slope);
    UGEST_FIELD("synth.actor_intensity", double, c.synth.actor_intensity);
    UGEST_FIELD("synth.background_level", double, c.synth.background_level);
    UGEST_FIELD("gen.train_per_class", std::size_t, c.gen.train_per_class);
    UGEST_FIELD("gen.val_per_class", std::size_t, c.gen.val_per_class);
    UGEST_FIELD("gen.test_per_class", std::size_t, c.gen.test_per_class);
    UGEST_FIELD("gen.aug_fraction", double, c.gen.aug_fraction);
    UGEST_FIELD("gen.sequences", std::size_t, c.gen.sequences);
    UGEST_FIELD("gen.seq_min", std::size_t, c.gen.seq_min);
    UGEST_FIELD("gen.seq_max", std::size_t, c.gen.seq_max);
    UGEST_FIELD("preprocess.k", std::size_t, c.preprocess.k);
    UGEST_FIELD("preprocess.target_size", std::size_t, c.preprocess.target_size);
    UGEST_FIELD("preprocess.ratio_a", double, c.preprocess.ratio_a);
    UGEST_FIELD("preprocess.full_frame_on_miss", bool, c.preprocess.full_frame_on_miss);
    UGEST_FIELD("preprocess.embed_dim", std::size_t, c.preprocess.embed_dim);
    UGEST_FIELD("preprocess.flow.window", std::size_t, c.preprocess.flow.window);
    UGEST_FIELD("preprocess.flow.min_eigen", double, c.preprocess.flow.min_eigen);
    UGEST_FIELD("preprocess.flow.iterations", std::size_t, c.preprocess.flow.iterations);
    UGEST_FIELD("preprocess.flow.levels", std::size_t, c.preprocess.flow.levels);
    UGEST_FIELD("preprocess.flow.max_displacement", double, c.preprocess.flow.max_displacement);
    UGEST_FIELD("model.frames", std::size_t, c.model.frames);
    UGEST_FIELD("model.height", std::size_t, c.model.height);
    UGEST_FIELD("model.width", std::size_t, c.model.width);
    UGEST_FIELD("model.in_channels", std::size_t, c.model.in_channels);
    UGEST_FIELD("model.tau_slow", std::size_t, c.model.tau_slow);
    UGEST_FIELD("model.tau_fast", std::size_t, c.model.tau_fast);
    UGEST_FIELD("model.c_slow", std::size_t, c.model.c_slow);
    UGEST_FIELD("model.c_fast", std::size_t, c.model.c_fast);
    UGEST_FIELD("model.use_slow", bool, c.model.use_slow);
    UGEST_FIELD("model.use_fast", bool, c.model.use_fast);
    UGEST_FIELD("model.use_transformer", bool, c.model.use_transformer);
    UGEST_FIELD("model.temporal_pooling", bool, c.model.temporal_pooling);
    UGEST_FIELD("model.d_model", std::size_t, c.model.encoder.d_model);
    UGEST_FIELD("model.n_heads", std::size_t, c.model.encoder.n_heads);
    UGEST_FIELD("model.d_ff", std::size_t, c.model.encoder.d_ff);
    UGEST_FIELD("model.n_layers", std::size_t, c.model.encoder.n_layers);
    UGEST_FIELD("model.dropout_p", double, c.model.encoder.dropout_p);
    UGEST_FIELD("model.positional_encoding", bool, c.model.encoder.positional_encoding);
    UGEST_FIELD("model.num_classes", std::size_t, c.model.num_classes);
    UGEST_FIELD("train.lr0", double, c.train.lr0);
    UGEST_FIELD("train.lr_min", double, c.train.lr_min);
    UGEST_FIELD("train.epochs", std::size_t, c.train.epochs);
    UGEST_FIELD("train.batch", std::size_t, c.train.batch);
    UGEST_FIELD("train.weight_decay", double, c.train.weight_decay);
    UGEST_FIELD("train.patience", std::size_t, c.train.patience);
    UGEST_FIELD("train.fraction", double, c.train_fraction);
    UGEST_FIELD("train.repetitions", std::size_t, c.repetitions);
    UGEST_FIELD("dce.alpha", double, c.dce.alpha);
    UGEST_FIELD("dce.b0", double, c.dce.b0);
    UGEST_FIELD("dce.b1", double, c.dce.b1);
    UGEST_FIELD("dwa.beta", double, c.dwa.beta);
    UGEST_FIELD("dwa.d_min", double, c.dwa.d_min);
    UGEST_FIELD("dwa.d_max", double, c.dwa.d_max);
    UGEST_FIELD("dwa.normalized", bool, c.dwa.normalized);
    UGEST_FIELD("eval.window_frames", std::size_t, c.window_frames);
    f.emplace("preprocess.detector",
              Field{[](RunConfig& c, const nlohmann::json& v) {
                      const auto s = v.get<std::string>();
                      if (s == "ground_truth") c.preprocess.detector = DetectorKind::ground_truth;
                      else if (s == "threshold") c.preprocess.detector = DetectorKind::threshold;
                      else throw ConfigError("preprocess.detector must be ground_truth or threshold, got " + s);
                    },
                    [](const RunConfig& c) {
                      return nlohmann::ordered_json(c.preprocess.detector == DetectorKind::threshold ? "threshold" : "ground_truth");
                    }});
    f.emplace("train.variant", Field{[](RunConfig& c, const nlohmann::json& v) { c.variant = variant_from_name(v.get<std::string>()); },
                                     [](const RunConfig& c) { return nlohmann::ordered_json(variant_name(c.variant)); }});
    return f;
  }();
  return table;
}

#undef UGEST_FIELD

/// Text values are read as JSON scalars when they parse, else as strings.
inline nlohmann::json scalar_from_text(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    if (!j.is_structured()) return j;
  } catch (const nlohmann::json::exception&) {
  }
  return text;
}

inline void flatten(const nlohmann::json& j, const std::string& prefix, std::vector<std::pair<std::string, nlohmann::json>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) flatten(*it, key, out);
    else out.emplace_back(key, *it);
  }
}

}  // namespace config_detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& [name, f] : config_detail::fields()) k.push_back(name);
  return k;
}

/// Sets one dotted key; unknown keys and ill-typed values are ConfigErrors.
inline void set_config_value(RunConfig& c, const std::string& key, const nlohmann::json& value) {
  const auto& f = config_detail::fields();
  auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown config key: " + key);
  try {
    it->second.set(c, value);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("bad value for " + key + ": " + value.dump());
  }
  if (key == "seed") c.apply_seed(c.seed);
}

inline void set_config_text(RunConfig& c, const std::string& key, const std::string& text) {
  set_config_value(c, key, config_detail::scalar_from_text(text));
}

/// Accepts a JSON object (nested or with dotted keys) or key=value lines.
inline void load_config_text(RunConfig& c, const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed JSON config: ") + e.what());
    }
    std::vector<std::pair<std::string, nlohmann::json>> kv;
    config_detail::flatten(j, "", kv);
    for (const auto& [k, v] : kv) set_config_value(c, k, v);
    return;
  }
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto l = s.find_first_not_of(" \t\r"), r = s.find_last_not_of(" \t\r");
      return l == std::string::npos ? std::string() : s.substr(l, r - l + 1);
    };
    set_config_text(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

inline void load_config_file(RunConfig& c, const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  load_config_text(c, ss.str());
}

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  for (const auto& [k, f] : config_detail::fields()) j[k] = f.get(c);
  return j;
}

/// Every violated invariant, not only the first.
inline std::vector<std::string> validate_config(const RunConfig& c) {
  std::vector<std::string> v;
  auto append = [&](const std::vector<std::string>& more) { v.insert(v.end(), more.begin(), more.end()); };
  append(c.synth.violations());
  append(c.preprocess.violations(c.synth.frames));
  if (c.gen.train_per_class == 0) v.push_back("gen.train_per_class must be >= 1");
  if (!(c.gen.aug_fraction >= 0 && c.gen.aug_fraction <= 1)) v.push_back("gen.aug_fraction must be in [0,1]");
  if (c.gen.seq_min == 0 || c.gen.seq_min > c.gen.seq_max) v.push_back("gen.seq_min/gen.seq_max must satisfy 1 <= min <= max");
  const SFTConfig m = c.resolved_model();
  append(m.violations());
  if (m.frames != c.preprocess.k) v.push_back("model.frames must equal preprocess.k");
  if (m.height != c.preprocess.target_size || m.width != c.preprocess.target_size)
    v.push_back("model.height/model.width must equal preprocess.target_size");
  if (m.in_channels != c.synth.channels + 2) v.push_back("model.in_channels must equal synth.channels + 2");
  if (m.num_classes != std::size_t(kNumClasses)) v.push_back("model.num_classes must be 13");
  append(c.train.violations());
  if (!(c.train_fraction > 0 && c.train_fraction <= 1)) v.push_back("train.fraction must be in (0,1]");
  if (c.repetitions == 0) v.push_back("train.repetitions must be >= 1");
  append(c.dce.violations());
  append(c.dwa.violations());
  if (c.window_frames > c.synth.frames) v.push_back("eval.window_frames exceeds synth.frames");
  return v;
}

}  // namespace ugest
