#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ugest/synth.hpp"
#include "ugest/ugtn.hpp"

namespace ugest {

namespace fs = std::filesystem;

/// One JSON-lines manifest row. Processed manifests add source_id and frame_indices.
struct ManifestRecord {
  std::string id;
  std::string file;
  GestureClass label = GestureClass::null_gesture;
  double distance_m = 0;
  std::string split;
  std::optional<std::string> source_id;
  std::optional<std::vector<int>> frame_indices;
};

inline nlohmann::ordered_json to_json(const ManifestRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["file"] = r.file;
  j["label"] = std::string(class_name(r.label));
  j["distance_m"] = r.distance_m;
  j["split"] = r.split;
  if (r.source_id) j["source_id"] = *r.source_id;
  if (r.frame_indices) j["frame_indices"] = *r.frame_indices;
  return j;
}

inline ManifestRecord record_from_json(const nlohmann::json& j) {
  ManifestRecord r;
  r.id = j.at("id").get<std::string>();
  r.file = j.at("file").get<std::string>();
  r.label = class_from_name(j.at("label").get<std::string>());
  r.distance_m = j.at("distance_m").get<double>();
  r.split = j.at("split").get<std::string>();
  if (j.contains("source_id")) r.source_id = j.at("source_id").get<std::string>();
  if (j.contains("frame_indices")) r.frame_indices = j.at("frame_indices").get<std::vector<int>>();
  return r;
}

struct Manifest {
  fs::path dir;  // file paths are relative to this directory
  std::vector<ManifestRecord> records;

  std::vector<ManifestRecord> split(const std::string& name) const {
    std::vector<ManifestRecord> out;
    std::copy_if(records.begin(), records.end(), std::back_inserter(out), [&](const auto& r) { return r.split == name; });
    return out;
  }
  fs::path path_of(const ManifestRecord& r) const { return dir / r.file; }
};

template <class Rows>
void write_jsonl(const fs::path& path, const Rows& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  for (const auto& row : rows) f << row.dump() << '\n';
  if (!f) throw IoError("write failed: " + path.string());
}

inline std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

inline void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
  std::vector<nlohmann::ordered_json> rows;
  for (const auto& r : records) rows.push_back(to_json(r));
  write_jsonl(path, rows);
}

/// Reads a manifest and checks its invariants (unique ids, known splits,
/// existing files).
inline Manifest read_manifest(const fs::path& path) {
  Manifest m;
  m.dir = path.parent_path();
  std::set<std::string> ids;
  for (const auto& j : read_jsonl(path)) {
    ManifestRecord r;
    try {
      r = record_from_json(j);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed manifest row in " + path.string() + ": " + e.what());
    }
    if (!ids.insert(r.id).second) throw InputError("duplicate id in manifest: " + r.id);
    if (r.split != "train" && r.split != "val" && r.split != "test") throw InputError("unknown split '" + r.split + "' for " + r.id);
    if (!fs::exists(m.dir / r.file)) throw IoError("manifest references missing file: " + (m.dir / r.file).string());
    m.records.push_back(std::move(r));
  }
  return m;
}

inline fs::path boxes_path(const fs::path& frames_file) {
  fs::path p = frames_file;
  p.replace_extension(".boxes.ugtn");
  return p;
}

inline void save_sample(const fs::path& frames_file, const VideoSample& v) {
  fs::create_directories(frames_file.parent_path());
  ugtn::save(frames_file, v.frames);
  Tensor<float> boxes({v.boxes.size(), 4});
  for (std::size_t i = 0; i < v.boxes.size(); ++i) {
    boxes[4 * i + 0] = static_cast<float>(v.boxes[i].x0);
    boxes[4 * i + 1] = static_cast<float>(v.boxes[i].y0);
    boxes[4 * i + 2] = static_cast<float>(v.boxes[i].x1);
    boxes[4 * i + 3] = static_cast<float>(v.boxes[i].y1);
  }
  ugtn::save(boxes_path(frames_file), boxes);
}

/// Loads frames and, when the sidecar exists, the ground-truth boxes.
inline VideoSample load_sample(const Manifest& m, const ManifestRecord& r, double fps = 8.0) {
  VideoSample v;
  const auto path = m.path_of(r);
  v.frames = ugtn::load(path);
  if (v.frames.ndim() != 4) throw IoError("expected T x H x W x C frames in " + path.string());
  v.distance_m = r.distance_m;
  v.label = r.label;
  v.id = r.id;
  v.fps = fps;
  const auto bp = boxes_path(path);
  if (fs::exists(bp)) {
    const auto b = ugtn::load(bp);
    for (std::size_t i = 0; i < b.dim(0); ++i) v.boxes.push_back({b[4 * i], b[4 * i + 1], b[4 * i + 2], b[4 * i + 3]});
  }
  return v;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// handled by exactly one worker; callers write results by index, so output
/// does not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::size_t default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

struct SplitCounts {
  std::size_t train = 1, val = 0, test = 0;  // per class
};

struct DatasetOptions {
  SplitCounts counts;
  /// Fraction of train samples that get one augmented copy appended to train.
  double aug_fraction = 0.0;
  AugSet aug_ops = {AugOp::crop, AugOp::hflip, AugOp::rotate, AugOp::scale, AugOp::brightness, AugOp::contrast};
  std::size_t threads = 1;
};

inline std::string padded(std::size_t i, int width = 5) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, i);
  return buf;
}

/// Writes UGTN clips under out_dir/<split>/ and out_dir/manifest.jsonl.
/// Class-balanced; distances uniform over the configured range.
inline Manifest build_dataset(const SynthConfig& cfg, const DatasetOptions& opt, const fs::path& out_dir) {
  if (auto v = cfg.violations(); !v.empty()) throw ConfigError("invalid synth config: " + v.front());
  if (opt.counts.train == 0) throw ConfigError("build_dataset: need at least one train sample per class");
  const Rng root(cfg.seed);

  struct Job {
    ManifestRecord rec;
    std::uint64_t seed;
    bool augmented;
    std::size_t source;  // index into jobs of the original for augmented copies
  };
  std::vector<Job> jobs;
  auto add_split = [&](const std::string& split, std::size_t per_class) {
    std::size_t idx = 0;
    for (int c = 0; c < kNumClasses; ++c)
      for (std::size_t k = 0; k < per_class; ++k, ++idx) {
        ManifestRecord r;
        r.id = split + "-" + padded(idx);
        r.file = split + "/" + r.id + ".ugtn";
        r.label = class_from_index(c);
        r.split = split;
        Rng item = root.split(r.id);
        r.distance_m = item.uniform(cfg.min_distance, cfg.max_distance);
        jobs.push_back({r, item.next_u64(), false, 0});
      }
  };
  add_split("train", opt.counts.train);
  const std::size_t n_train = jobs.size();
  if (opt.aug_fraction > 0) {
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng pick = root.split("augment-pick");
    pick.shuffle(order.begin(), order.end());
    const auto n_aug = static_cast<std::size_t>(std::round(opt.aug_fraction * double(n_train)));
    order.resize(std::min(n_aug, n_train));
    std::sort(order.begin(), order.end());
    for (std::size_t k = 0; k < order.size(); ++k) {
      Job j = jobs[order[k]];
      j.rec.id = "train-aug-" + padded(k);
      j.rec.file = "train/" + j.rec.id + ".ugtn";
      j.seed = root.split(j.rec.id).next_u64();
      j.augmented = true;
      j.source = order[k];
      jobs.push_back(j);
    }
  }
  add_split("val", opt.counts.val);
  add_split("test", opt.counts.test);

  fs::create_directories(out_dir);
  parallel_for(jobs.size(), opt.threads, [&](std::size_t i) {
    Job& j = jobs[i];
    VideoSample v;
    if (j.augmented) {
      const Job& src = jobs[j.source];
      v = generate(cfg, src.rec.label, src.rec.distance_m, src.seed, j.rec.id);
      Rng rng(j.seed);
      v = augment(v, opt.aug_ops, rng);
      j.rec.label = v.label;
    } else {
      v = generate(cfg, j.rec.label, j.rec.distance_m, j.seed, j.rec.id);
    }
    try {
      save_sample(out_dir / j.rec.file, v);
    } catch (const fs::filesystem_error& e) {
      throw IoError(std::string("cannot write sample: ") + e.what());
    }
  });

  Manifest m;
  m.dir = out_dir;
  for (const auto& j : jobs) m.records.push_back(j.rec);
  write_manifest(out_dir / "manifest.jsonl", m.records);
  return m;
}

struct SequenceRecord {
  std::string seq_id;
  std::vector<std::string> video_ids;
};

/// Random gesture sequences of min_len..max_len distinct test videos.
inline std::vector<SequenceRecord> build_sequences(const Manifest& m, std::size_t count, std::size_t min_len,
                                                   std::size_t max_len, std::uint64_t seed) {
  if (min_len == 0 || min_len > max_len) throw ConfigError("sequence length range must satisfy 1 <= min <= max");
  auto pool = m.split("test");
  if (pool.size() < max_len) throw InputError("not enough test videos for sequences of length " + std::to_string(max_len));
  Rng rng(Rng(seed).split("sequences"));
  std::vector<SequenceRecord> out;
  for (std::size_t s = 0; s < count; ++s) {
    SequenceRecord r;
    r.seq_id = "seq-" + padded(s, 4);
    const std::size_t len = min_len + rng.below(max_len - min_len + 1);
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx.begin(), idx.end());
    for (std::size_t k = 0; k < len; ++k) r.video_ids.push_back(pool[idx[k]].id);
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_sequences(const fs::path& path, const std::vector<SequenceRecord>& seqs) {
  std::vector<nlohmann::ordered_json> rows;
  for (const auto& s : seqs) {
    nlohmann::ordered_json j;
    j["seq_id"] = s.seq_id;
    j["video_ids"] = s.video_ids;
    rows.push_back(std::move(j));
  }
  write_jsonl(path, rows);
}

inline std::vector<SequenceRecord> read_sequences(const fs::path& path) {
  std::vector<SequenceRecord> out;
  for (const auto& j : read_jsonl(path)) out.push_back({j.at("seq_id").get<std::string>(), j.at("video_ids").get<std::vector<std::string>>()});
  return out;
}

}  // namespace ugest
