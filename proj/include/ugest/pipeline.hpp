#pragma once

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ugest/config.hpp"
#include "ugest/ugtn.hpp"

// Subcommand bodies. Each takes a resolved RunConfig and paths and writes its
// artifacts deterministically (no timestamps, fixed key order).
namespace ugest {

// ============================================================ small helpers

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline nlohmann::ordered_json to_json(const PreprocessConfig& p) {
  return {{"k", p.k},
          {"target_size", p.target_size},
          {"ratio_a", p.ratio_a},
          {"detector", p.detector == DetectorKind::threshold ? "threshold" : "ground_truth"},
          {"full_frame_on_miss", p.full_frame_on_miss},
          {"embed_dim", p.embed_dim},
          {"flow", {{"window", p.flow.window}, {"min_eigen", p.flow.min_eigen}, {"iterations", p.flow.iterations}, {"levels", p.flow.levels}, {"max_displacement", p.flow.max_displacement}}},
          {"seed", p.seed}};
}

inline PreprocessConfig preprocess_config_from_json(const nlohmann::json& j) {
  PreprocessConfig p;
  p.k = j.at("k").get<std::size_t>();
  p.target_size = j.at("target_size").get<std::size_t>();
  p.ratio_a = j.at("ratio_a").get<double>();
  p.detector = j.at("detector").get<std::string>() == "threshold" ? DetectorKind::threshold : DetectorKind::ground_truth;
  p.full_frame_on_miss = j.at("full_frame_on_miss").get<bool>();
  p.embed_dim = j.at("embed_dim").get<std::size_t>();
  const auto& f = j.at("flow");
  p.flow.window = f.at("window").get<std::size_t>();
  p.flow.min_eigen = f.at("min_eigen").get<double>();
  p.flow.iterations = f.at("iterations").get<std::size_t>();
  p.flow.levels = f.at("levels").get<std::size_t>();
  p.flow.max_displacement = f.at("max_displacement").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

inline std::string format_double(double v, int digits = 6) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

// ============================================================ gen

struct GenResult {
  Manifest manifest;
  std::size_t sequences = 0;
};

inline GenResult run_gen(const RunConfig& cfg, const fs::path& out_dir) {
  DatasetOptions opt;
  opt.counts = {cfg.gen.train_per_class, cfg.gen.val_per_class, cfg.gen.test_per_class};
  opt.aug_fraction = cfg.gen.aug_fraction;
  opt.threads = cfg.thread_count();
  GenResult r;
  r.manifest = build_dataset(cfg.synth, opt, out_dir);
  if (cfg.gen.sequences > 0) {
    auto seqs = build_sequences(r.manifest, cfg.gen.sequences, cfg.gen.seq_min, cfg.gen.seq_max, cfg.seed);
    write_sequences(out_dir / "sequences.jsonl", seqs);
    r.sequences = seqs.size();
  }
  return r;
}

// ============================================================ preprocess

inline constexpr const char* kPreprocessInfo = "preprocess.json";

/// Raw manifest -> processed clips (k x S x S x (C+2)) and a processed manifest.
inline Manifest run_preprocess(const RunConfig& cfg, const fs::path& in_manifest, const fs::path& out_dir) {
  const Manifest src = read_manifest(in_manifest);
  if (src.records.empty()) throw InputError("preprocess: empty manifest " + in_manifest.string());
  fs::create_directories(out_dir / "clips");
  const FrameEncoder enc(cfg.preprocess.embed_dim);
  std::vector<ManifestRecord> out(src.records.size());
  std::vector<std::size_t> channels(src.records.size());
  parallel_for(src.records.size(), cfg.thread_count(), [&](std::size_t i) {
    const auto& r = src.records[i];
    const VideoSample v = load_sample(src, r, cfg.synth.fps);
    if (auto viol = cfg.preprocess.violations(v.num_frames()); !viol.empty()) throw ConfigError(viol.front());
    const ProcessedClip clip = preprocess_clip(v, cfg.preprocess, enc);
    ManifestRecord p;
    p.id = r.id;
    p.file = "clips/" + r.id + ".ugtn";
    p.label = r.label;
    p.distance_m = r.distance_m;
    p.split = r.split;
    p.source_id = r.id;
    p.frame_indices = std::vector<int>(clip.source_indices.begin(), clip.source_indices.end());
    ugtn::save(out_dir / p.file, clip.frames);
    channels[i] = v.channels();
    out[i] = std::move(p);
  });
  write_manifest(out_dir / "manifest.jsonl", out);
  nlohmann::ordered_json info;
  info["source_manifest"] = fs::relative(fs::absolute(in_manifest), fs::absolute(out_dir)).generic_string();
  info["image_channels"] = channels.front();
  info["preprocess"] = to_json(cfg.preprocess);
  write_text(out_dir / kPreprocessInfo, info.dump(2) + "\n");
  return read_manifest(out_dir / "manifest.jsonl");
}

struct ProcessedDataset {
  Manifest manifest;
  PreprocessConfig preprocess;
  fs::path source_manifest;
  std::size_t image_channels = 1;
};

inline ProcessedDataset open_processed(const fs::path& manifest_path) {
  ProcessedDataset d;
  d.manifest = read_manifest(manifest_path);
  const auto info = read_json_file(d.manifest.dir / kPreprocessInfo);
  d.preprocess = preprocess_config_from_json(info.at("preprocess"));
  d.source_manifest = d.manifest.dir / info.at("source_manifest").get<std::string>();
  d.image_channels = info.at("image_channels").get<std::size_t>();
  return d;
}

inline std::vector<Example> load_examples(const Manifest& m, const std::string& split) {
  std::vector<Example> out;
  for (const auto& r : m.split(split)) {
    Example e;
    e.id = r.id;
    e.clip = ugtn::load(m.path_of(r));
    e.label = static_cast<int>(r.label);
    e.distance_m = r.distance_m;
    out.push_back(std::move(e));
  }
  return out;
}

/// Model shape implied by a processed dataset plus the configured architecture.
inline SFTConfig model_for(const RunConfig& cfg, const ProcessedDataset& d) {
  SFTConfig m = cfg.model;
  m.frames = d.preprocess.k;
  m.height = m.width = d.preprocess.target_size;
  m.in_channels = d.image_channels + 2;
  for (auto [key, given, want] : {std::tuple{"model.frames", cfg.model.frames, m.frames}, std::tuple{"model.height", cfg.model.height, m.height},
                                  std::tuple{"model.width", cfg.model.width, m.width},
                                  std::tuple{"model.in_channels", cfg.model.in_channels, m.in_channels}}) {
    if (given && given != want) throw ConfigError(std::string(key) + " = " + std::to_string(given) + " does not match the processed data (" + std::to_string(want) + ")");
  }
  return m;
}

// ============================================================ train

struct TrainRun {
  fs::path checkpoint;
  TrainResult result;
};

inline nlohmann::json checkpoint_extra(const RunConfig& cfg, const ProcessedDataset& d, const TrainResult& r, const DCEConfig& dce,
                                       std::uint64_t seed) {
  nlohmann::json j;
  j["model"] = to_json(r.model);
  j["preprocess"] = to_json(d.preprocess);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  j["train"] = to_json(tc);
  j["dce"] = to_json(dce);
  j["variant"] = variant_name(cfg.variant);
  j["train_fraction"] = cfg.train_fraction;
  j["best_epoch"] = r.best_epoch;
  j["best_val_loss"] = r.best_val_loss;
  return j;
}

inline std::uint64_t repetition_seed(std::uint64_t seed, std::size_t rep) {
  return rep == 0 ? seed : Rng(seed).split("repetition").split(rep).next_u64();
}

/// Trains `repetitions` models (one per seeded train-split subsample). With a
/// single repetition the checkpoint goes to ckpt_dir itself, otherwise to
/// ckpt_dir/rep-NN.
inline std::vector<TrainRun> run_train(const RunConfig& cfg, const fs::path& processed_manifest, const fs::path& ckpt_dir,
                                       std::ostream* progress = nullptr) {
  const ProcessedDataset d = open_processed(processed_manifest);
  const SFTConfig model = model_for(cfg, d);
  const auto train_all = load_examples(d.manifest, "train");
  const auto val = load_examples(d.manifest, "val");
  std::vector<TrainRun> runs;
  for (std::size_t rep = 0; rep < cfg.repetitions; ++rep) {
    const std::uint64_t seed = repetition_seed(cfg.seed, rep);
    const fs::path dir = cfg.repetitions == 1 ? ckpt_dir : ckpt_dir / ("rep-" + padded(rep, 2));
    fs::create_directories(dir);
    const auto train = subsample_fraction(train_all, cfg.train_fraction, seed);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    std::ofstream log(dir / "train_log.jsonl", std::ios::trunc);
    if (!log) throw IoError("cannot write training log in " + dir.string());
    auto sink = [&](const nlohmann::ordered_json& row) {
      log << row.dump() << '\n';
      log.flush();
      if (progress) *progress << row.dump() << '\n';
    };
    TrainRun run;
    run.checkpoint = dir;
    run.result = train_model(model, train, val, tc, cfg.dce, cfg.variant, sink);
    const DCEConfig used = make_variant(cfg.variant, model, cfg.dce).second;
    save_checkpoint(dir, run.result.params, checkpoint_extra(cfg, d, run.result, used, seed));
    runs.push_back(std::move(run));
  }
  return runs;
}

// ============================================================ eval

struct EvalOutput {
  std::vector<PredictionRecord> predictions;
  nlohmann::ordered_json report;
};

inline std::vector<fs::path> checkpoint_dirs(const fs::path& ckpt) {
  if (fs::exists(ckpt / "manifest.json")) return {ckpt};
  std::vector<fs::path> reps;
  if (fs::is_directory(ckpt))
    for (const auto& e : fs::directory_iterator(ckpt))
      if (e.is_directory() && e.path().filename().string().rfind("rep-", 0) == 0 && fs::exists(e.path() / "manifest.json")) reps.push_back(e.path());
  std::sort(reps.begin(), reps.end());
  if (reps.empty()) throw IoError("no checkpoint found at " + ckpt.string());
  return reps;
}

/// Predictions for one checkpoint. Windows of n frames end at n..T; the
/// clip-level prediction is the last window's. n = 0 or n = T uses the
/// stored whole-clip tensors.
inline std::vector<PredictionRecord> predict(const fs::path& ckpt_dir, const ProcessedDataset& d, const std::string& split,
                                             std::size_t window_frames, std::size_t threads) {
  auto ck = load_checkpoint(ckpt_dir);
  const SFTConfig model = sft_config_from_json(ck.config.at("model"));
  if (auto v = model.violations(); !v.empty()) throw ConfigError("checkpoint model: " + v.front());
  if (model.frames != d.preprocess.k || model.height != d.preprocess.target_size || model.in_channels != d.image_channels + 2) {
    throw ConfigError("checkpoint " + ckpt_dir.string() + " does not match the processed data shape");
  }
  const auto records = d.manifest.split(split);
  if (records.empty()) throw InputError("eval: split '" + split + "' is empty");
  const Manifest raw = read_manifest(d.source_manifest);
  std::map<std::string, const ManifestRecord*> by_id;
  for (const auto& r : raw.records) by_id[r.id] = &r;
  auto source_of = [&](const ManifestRecord& r) -> const ManifestRecord& {
    auto it = by_id.find(r.source_id.value_or(r.id));
    if (it == by_id.end()) throw InputError("eval: source video " + r.source_id.value_or(r.id) + " not in " + d.source_manifest.string());
    return *it->second;
  };
  const std::size_t T = ugtn::load(raw.path_of(source_of(records.front()))).dim(0);
  if (window_frames > T) throw ConfigError("eval.window_frames exceeds the clip length " + std::to_string(T));
  const std::size_t n = window_frames == 0 ? T : window_frames;

  std::vector<PredictionRecord> out(records.size());
  const FrameEncoder enc(d.preprocess.embed_dim);
  parallel_for(records.size(), threads, [&](std::size_t i) {
    const auto& r = records[i];
    std::vector<Classification> res;
    if (n == T) {
      const auto clip = ugtn::load(d.manifest.path_of(r));
      res = classify_batch(ck.params, model, {&clip});
    } else {
      const VideoSample v = load_sample(raw, source_of(r));
      if (v.num_frames() != T) throw InputError("eval: clip " + v.id + " length differs from " + std::to_string(T));
      ClipPreprocessor pre(v, d.preprocess, enc);
      std::vector<Tensor<float>> clips;
      for (std::size_t end = n; end <= T; ++end) clips.push_back(pre.window(end, n).frames);
      for (std::size_t s = 0; s < clips.size(); s += 32) {
        std::vector<const Tensor<float>*> batch;
        for (std::size_t q = s; q < std::min(clips.size(), s + 32); ++q) batch.push_back(&clips[q]);
        auto part = classify_batch(ck.params, model, batch);
        res.insert(res.end(), part.begin(), part.end());
      }
    }
    auto& p = out[i];
    p.video_id = r.id;
    p.true_label = static_cast<int>(r.label);
    p.distance_m = r.distance_m;
    p.predicted_label = res.back().label;
    p.confidence = res.back().probs;
    for (std::size_t q = 0; q < res.size(); ++q) p.windows.push_back({int(n + q), res[q].label});
  });
  return out;
}

inline nlohmann::ordered_json report_for(const std::vector<PredictionRecord>& preds, const DWAConfig& dwa_cfg, const nlohmann::json& ck_config,
                                         const std::vector<SequenceRecord>* sequences) {
  const int n = preds.front().windows.front().end_frame;
  auto rep = metric_report(preds, n, dwa_cfg);
  rep["variant"] = ck_config.value("variant", "full");
  rep["train_fraction"] = ck_config.value("train_fraction", 1.0);
  if (sequences && !sequences->empty()) {
    std::map<std::string, const PredictionRecord*> by_id;
    for (const auto& p : preds) by_id[p.video_id] = &p;
    std::vector<std::vector<PredictionRecord>> seq_preds;
    for (const auto& s : *sequences) {
      std::vector<PredictionRecord> members;
      for (const auto& id : s.video_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw InputError("sequence " + s.seq_id + " references unknown video " + id);
        members.push_back(*it->second);
      }
      seq_preds.push_back(std::move(members));
    }
    rep["sequence_accuracy"] = sequence_accuracy(seq_preds);
    rep["sequences"] = seq_preds.size();
  }
  return rep;
}

/// Evaluates a checkpoint (or every rep-NN checkpoint below it) and writes
/// predictions.jsonl, report.json and distance_curve.csv into out_dir.
inline EvalOutput run_eval(const RunConfig& cfg, const fs::path& ckpt, const fs::path& processed_manifest, const fs::path& out_dir,
                           const std::string& split = "test", const fs::path& sequences_path = {}) {
  const ProcessedDataset d = open_processed(processed_manifest);
  std::vector<SequenceRecord> seqs;
  if (!sequences_path.empty()) seqs = read_sequences(sequences_path);
  EvalOutput out;
  std::vector<double> accs, dwas;
  for (const auto& dir : checkpoint_dirs(ckpt)) {
    auto preds = predict(dir, d, split, cfg.window_frames, cfg.thread_count());
    for (const auto& p : preds)
      if (auto v = record_violations(p); !v.empty()) throw ContractError("prediction record invalid: " + v.front());
    const auto ck = read_json_file(dir / "manifest.json").value("config", nlohmann::json::object());
    auto rep = report_for(preds, cfg.dwa, ck, seqs.empty() ? nullptr : &seqs);
    accs.push_back(rep["accuracy"].get<double>());
    dwas.push_back(rep["dwa"].get<double>());
    if (out.predictions.empty()) {
      out.predictions = std::move(preds);
      out.report = std::move(rep);
    }
  }
  out.report["repetitions"] = accs.size();
  out.report["accuracy_mean"] = std::accumulate(accs.begin(), accs.end(), 0.0) / double(accs.size());
  out.report["dwa_mean"] = std::accumulate(dwas.begin(), dwas.end(), 0.0) / double(dwas.size());
  fs::create_directories(out_dir);
  std::vector<nlohmann::ordered_json> rows;
  for (const auto& p : out.predictions) rows.push_back(to_json(p));
  write_jsonl(out_dir / "predictions.jsonl", rows);
  write_text(out_dir / "report.json", out.report.dump(2) + "\n");
  std::vector<PredictionRecord> tmp = out.predictions;
  write_text(out_dir / "distance_curve.csv", curve_csv(distance_curve(tmp, 2.0, cfg.dwa.d_min, cfg.dwa.d_max)));
  return out;
}

// ============================================================ ablate

struct AblationRow {
  Variant variant;
  nlohmann::ordered_json metrics;
  std::size_t epochs_run = 0;
};

inline const char* kAblationColumns[] = {"accuracy", "dwa", "gss", "macro_f1", "map"};

/// Trains and evaluates all six variants with the shared seed.
inline std::vector<AblationRow> run_ablate(const RunConfig& cfg, const fs::path& processed_manifest, const fs::path& out_dir,
                                           std::ostream* progress = nullptr) {
  std::vector<AblationRow> rows;
  for (auto v : kAllVariants) {
    RunConfig c = cfg;
    c.variant = v;
    c.repetitions = 1;
    c.window_frames = 0;
    const fs::path ck = out_dir / "checkpoints" / variant_name(v);
    auto runs = run_train(c, processed_manifest, ck, nullptr);
    auto ev = run_eval(c, ck, processed_manifest, out_dir / "eval" / variant_name(v));
    AblationRow row{v, {}, runs.front().result.log.size()};
    for (const char* k : kAblationColumns) row.metrics[k] = ev.report[k];
    if (progress) *progress << variant_name(v) << ' ' << row.metrics.dump() << '\n';
    rows.push_back(std::move(row));
  }
  std::ostringstream csv;
  csv << "variant";
  for (const char* k : kAblationColumns) csv << ',' << k;
  csv << ",epochs\n";
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    csv << variant_name(r.variant);
    for (const char* k : kAblationColumns) csv << ',' << format_double(r.metrics[k].get<double>());
    csv << ',' << r.epochs_run << '\n';
    nlohmann::ordered_json j;
    j["variant"] = variant_name(r.variant);
    for (const char* k : kAblationColumns) j[k] = r.metrics[k];
    j["epochs"] = r.epochs_run;
    table.push_back(j);
  }
  write_text(out_dir / "ablation.csv", csv.str());
  nlohmann::ordered_json doc;
  doc["seed"] = cfg.seed;
  doc["epochs_budget"] = cfg.train.epochs;
  doc["rows"] = table;
  write_text(out_dir / "ablation.json", doc.dump(2) + "\n");
  return rows;
}

// ============================================================ curve

enum class CurveKind { distance, window, fraction, training };

inline CurveKind curve_kind_from_name(const std::string& s) {
  if (s == "distance") return CurveKind::distance;
  if (s == "window") return CurveKind::window;
  if (s == "fraction") return CurveKind::fraction;
  if (s == "training") return CurveKind::training;
  throw ConfigError("unknown curve kind: " + s + " (distance, window, fraction, training)");
}

/// CSV from existing reports (distance/window/fraction) or a training log.
inline std::string run_curve(CurveKind kind, const std::vector<fs::path>& inputs) {
  if (inputs.empty()) throw InputError("curve: no input files");
  std::ostringstream csv;
  switch (kind) {
    case CurveKind::distance: {
      const auto rep = read_json_file(inputs.front());
      csv << "bin_center,accuracy,count\n";
      for (const auto& b : rep.at("distance_curve")) {
        csv << format_double(b.at("bin_center").get<double>()) << ',';
        if (!b.at("accuracy").is_null()) csv << format_double(b.at("accuracy").get<double>());
        csv << ',' << b.at("count").get<std::size_t>() << '\n';
      }
      break;
    }
    case CurveKind::window:
    case CurveKind::fraction: {
      const bool window = kind == CurveKind::window;
      std::vector<std::pair<double, std::string>> rows;
      for (const auto& p : inputs) {
        const auto rep = read_json_file(p);
        const double x = window ? rep.at("window_frames").get<double>() : rep.value("train_fraction", 1.0);
        std::ostringstream row;
        row << format_double(x) << ',' << format_double(window ? rep.at("accuracy").get<double>() : rep.value("accuracy_mean", rep.at("accuracy").get<double>()))
            << ',';
        if (window) row << format_double(rep.at("gss").get<double>()) << ',' << format_double(rep.at("gss_raw").get<double>());
        else row << format_double(rep.value("dwa_mean", rep.at("dwa").get<double>())) << ',' << rep.value("repetitions", 1);
        rows.emplace_back(x, row.str());
      }
      std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      csv << (window ? "window_frames,accuracy,gss,gss_raw\n" : "train_fraction,accuracy,dwa,repetitions\n");
      for (const auto& r : rows) csv << r.second << '\n';
      break;
    }
    case CurveKind::training: {
      csv << "epoch,lr,train_loss,val_loss,val_acc\n";
      for (const auto& row : read_jsonl(inputs.front())) {
        csv << row.at("epoch").get<std::size_t>() << ',' << format_double(row.at("lr").get<double>(), 8) << ','
            << format_double(row.at("train_loss").get<double>()) << ',' << format_double(row.at("val_loss").get<double>()) << ','
            << format_double(row.at("val_acc").get<double>()) << '\n';
      }
      break;
    }
  }
  return csv.str();
}

// ============================================================ info

inline std::string run_info(const RunConfig& cfg) {
  const SFTConfig m = cfg.resolved_model();
  if (auto v = m.violations(); !v.empty()) throw ConfigError(v.front());
  std::ostringstream s;
  s << "config\n";
  const auto flat = config_to_json(cfg);
  for (const auto& [k, v] : flat.items()) s << "  " << k << " = " << v.dump() << '\n';
  s << "stages (batch 1)\n";
  for (const auto& [name, shape] : stage_shapes(m, 1)) s << "  " << std::left << std::setw(16) << name << shape_str(shape) << '\n';
  const auto params = init_sft_params<float>(m, cfg.seed);
  s << "parameters " << params.count() << '\n';
  for (const auto& e : params.entries()) s << "  " << std::left << std::setw(22) << e.name << shape_str(e.value.shape()) << '\n';
  return s.str();
}

}  // namespace ugest
