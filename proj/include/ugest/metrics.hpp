#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ugest/error.hpp"

namespace ugest {

struct WindowPrediction {
  int end_frame = 0;
  int predicted_label = 0;
};

struct PredictionRecord {
  std::string video_id;
  int true_label = 0;
  double distance_m = 0;
  int predicted_label = 0;
  std::vector<double> confidence;
  std::vector<WindowPrediction> windows;

  bool correct() const { return predicted_label == true_label; }
};

inline nlohmann::ordered_json to_json(const PredictionRecord& r) {
  nlohmann::ordered_json j;
  j["video_id"] = r.video_id;
  j["true_label"] = r.true_label;
  j["distance_m"] = r.distance_m;
  j["predicted_label"] = r.predicted_label;
  j["confidence"] = r.confidence;
  auto w = nlohmann::ordered_json::array();
  for (const auto& x : r.windows) w.push_back({{"end_frame", x.end_frame}, {"predicted_label", x.predicted_label}});
  j["windows"] = w;
  return j;
}

inline PredictionRecord prediction_from_json(const nlohmann::json& j) {
  PredictionRecord r;
  r.video_id = j.at("video_id").get<std::string>();
  r.true_label = j.at("true_label").get<int>();
  r.distance_m = j.at("distance_m").get<double>();
  r.predicted_label = j.at("predicted_label").get<int>();
  r.confidence = j.at("confidence").get<std::vector<double>>();
  for (const auto& w : j.value("windows", nlohmann::json::array())) r.windows.push_back({w.at("end_frame").get<int>(), w.at("predicted_label").get<int>()});
  return r;
}

/// Record invariants: labels in range, confidences summing to 1, windows increasing.
inline std::vector<std::string> record_violations(const PredictionRecord& r, int num_classes = 13) {
  std::vector<std::string> v;
  auto in_range = [&](int c) { return c >= 0 && c < num_classes; };
  if (!in_range(r.true_label)) v.push_back(r.video_id + ": true_label out of range");
  if (!in_range(r.predicted_label)) v.push_back(r.video_id + ": predicted_label out of range");
  if (!r.confidence.empty()) {
    if (r.confidence.size() != std::size_t(num_classes)) v.push_back(r.video_id + ": confidence length != class count");
    const double s = std::accumulate(r.confidence.begin(), r.confidence.end(), 0.0);
    if (std::abs(s - 1.0) > 1e-5) v.push_back(r.video_id + ": confidence does not sum to 1");
  }
  for (std::size_t i = 1; i < r.windows.size(); ++i)
    if (r.windows[i].end_frame <= r.windows[i - 1].end_frame) v.push_back(r.video_id + ": window end frames not strictly increasing");
  return v;
}

namespace metrics_detail {
inline void require_nonempty(const std::vector<PredictionRecord>& r, const char* what) {
  if (r.empty()) throw InputError(std::string(what) + ": no records");
}
}  // namespace metrics_detail

inline double accuracy(const std::vector<PredictionRecord>& recs) {
  metrics_detail::require_nonempty(recs, "accuracy");
  std::size_t c = 0;
  for (const auto& r : recs) c += r.correct();
  return double(c) / double(recs.size());
}

struct DWAConfig {
  double beta = 1.6;
  double d_min = 2.0;
  double d_max = 28.0;
  bool normalized = true;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (!(d_min < d_max)) v.push_back("dwa.d_min must be < dwa.d_max");
    if (!(beta >= 0)) v.push_back("dwa.beta must be >= 0");
    return v;
  }
};

/// Normalized: sum I*w / sum w. Raw: (1/K) sum I*w (may exceed 1).
inline double dwa(const std::vector<PredictionRecord>& recs, const DWAConfig& cfg = {}) {
  metrics_detail::require_nonempty(recs, "dwa");
  if (auto v = cfg.violations(); !v.empty()) throw ConfigError(v.front());
  double num = 0, den = 0;
  for (const auto& r : recs) {
    if (!(r.distance_m >= cfg.d_min && r.distance_m <= cfg.d_max)) {
      std::ostringstream s;
      s << "dwa: distance " << r.distance_m << " of " << r.video_id << " outside [" << cfg.d_min << ", " << cfg.d_max << "]";
      throw InputError(s.str());
    }
    const double w = 1.0 + cfg.beta * (r.distance_m - cfg.d_min) / (cfg.d_max - cfg.d_min);
    if (r.correct()) num += w;
    den += w;
  }
  return cfg.normalized ? num / den : num / double(recs.size());
}

inline double dwa_raw(const std::vector<PredictionRecord>& recs, DWAConfig cfg = {}) {
  cfg.normalized = false;
  return dwa(recs, cfg);
}

namespace metrics_detail {
// Windows must end at n, n+1, ..., n_i with n_i the last end frame.
inline std::size_t check_windows(const PredictionRecord& r, int n) {
  if (r.windows.empty()) throw InputError("gss: " + r.video_id + " has no window predictions");
  const int n_i = r.windows.back().end_frame;
  if (n_i < n || r.windows.size() != std::size_t(n_i - n + 1)) throw InputError("gss: " + r.video_id + " windows do not cover n..n_i");
  for (std::size_t j = 0; j < r.windows.size(); ++j)
    if (r.windows[j].end_frame != n + int(j)) throw InputError("gss: " + r.video_id + " is missing window ending at " + std::to_string(n + int(j)));
  return std::size_t(n_i);
}
}  // namespace metrics_detail

/// Mean over videos of the fraction of windows predicting the true label,
/// normalised by the window count (raw = by n_i).
inline double gss(const std::vector<PredictionRecord>& recs, int n, bool raw = false) {
  metrics_detail::require_nonempty(recs, "gss");
  if (n < 1) throw InputError("gss: window length must be >= 1");
  double total = 0;
  for (const auto& r : recs) {
    const auto n_i = metrics_detail::check_windows(r, n);
    std::size_t ok = 0;
    for (const auto& w : r.windows) ok += w.predicted_label == r.true_label;
    total += double(ok) / (raw ? double(n_i) : double(r.windows.size()));
  }
  return total / double(recs.size());
}

inline double gss_raw(const std::vector<PredictionRecord>& recs, int n) { return gss(recs, n, true); }

/// Row = true class, column = predicted.
inline std::vector<std::vector<std::size_t>> confusion_matrix(const std::vector<PredictionRecord>& recs, int num_classes = 13) {
  std::vector<std::vector<std::size_t>> m(std::size_t(num_classes), std::vector<std::size_t>(std::size_t(num_classes), 0));
  for (const auto& r : recs) {
    if (r.true_label < 0 || r.true_label >= num_classes || r.predicted_label < 0 || r.predicted_label >= num_classes) {
      throw InputError("confusion_matrix: label out of range in " + r.video_id);
    }
    ++m[std::size_t(r.true_label)][std::size_t(r.predicted_label)];
  }
  return m;
}

/// Macro mean of per-class F1 over classes present in the truth.
inline double macro_f1(const std::vector<PredictionRecord>& recs, int num_classes = 13) {
  metrics_detail::require_nonempty(recs, "macro_f1");
  const auto cm = confusion_matrix(recs, num_classes);
  const std::size_t m = cm.size();
  double total = 0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < m; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < m; ++j) {
      row += cm[c][j];
      col += cm[j][c];
    }
    if (row == 0) continue;
    const double tp = double(cm[c][c]);
    const double p = col ? tp / double(col) : 0.0;
    const double r = tp / double(row);
    total += (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
    ++classes;
  }
  return total / double(classes);
}

/// Exact (non-interpolated) AP per class, ranking by confidence with video_id
/// breaking ties; macro mean over classes with at least one positive.
inline double mean_average_precision(const std::vector<PredictionRecord>& recs) {
  metrics_detail::require_nonempty(recs, "mean_average_precision");
  const std::size_t m = recs.front().confidence.size();
  for (const auto& r : recs)
    if (r.confidence.size() != m || m == 0) throw InputError("mean_average_precision: missing or ragged confidence vectors");
  std::vector<std::size_t> order(recs.size());
  double total = 0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < m; ++c) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (recs[a].confidence[c] != recs[b].confidence[c]) return recs[a].confidence[c] > recs[b].confidence[c];
      return recs[a].video_id < recs[b].video_id;
    });
    std::size_t hits = 0;
    double ap = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      if (recs[order[rank]].true_label != int(c)) continue;
      ++hits;
      ap += double(hits) / double(rank + 1);
    }
    if (hits == 0) continue;
    total += ap / double(hits);
    ++classes;
  }
  if (classes == 0) throw InputError("mean_average_precision: no class has positives");
  return total / double(classes);
}

struct CurveBin {
  double center = 0;
  std::optional<double> accuracy;
  std::size_t count = 0;
};

/// Accuracy per distance bin over [d_min, d_max]; the last bin is closed.
inline std::vector<CurveBin> distance_curve(const std::vector<PredictionRecord>& recs, double bin_width = 2.0, double d_min = 2.0,
                                            double d_max = 28.0) {
  if (!(bin_width > 0) || !(d_min < d_max)) throw ConfigError("distance_curve: bad bin layout");
  const auto nbins = std::size_t(std::ceil((d_max - d_min) / bin_width - 1e-9));
  std::vector<CurveBin> bins(nbins);
  std::vector<std::size_t> ok(nbins, 0);
  for (std::size_t b = 0; b < nbins; ++b) bins[b].center = d_min + (double(b) + 0.5) * bin_width;
  for (const auto& r : recs) {
    if (!(r.distance_m >= d_min && r.distance_m <= d_max)) throw InputError("distance_curve: distance out of range in " + r.video_id);
    const auto b = std::min(nbins - 1, std::size_t((r.distance_m - d_min) / bin_width));
    ++bins[b].count;
    ok[b] += r.correct();
  }
  for (std::size_t b = 0; b < nbins; ++b)
    if (bins[b].count) bins[b].accuracy = double(ok[b]) / double(bins[b].count);
  return bins;
}

inline std::string curve_csv(const std::vector<CurveBin>& bins) {
  std::ostringstream s;
  s << "bin_center,accuracy,count\n";
  for (const auto& b : bins) {
    s << b.center << ',';
    if (b.accuracy) s << *b.accuracy;
    s << ',' << b.count << '\n';
  }
  return s.str();
}

/// Fraction of sequences whose members are all correct.
inline double sequence_accuracy(const std::vector<std::vector<PredictionRecord>>& seqs) {
  if (seqs.empty()) throw InputError("sequence_accuracy: no sequences");
  std::size_t ok = 0;
  for (const auto& s : seqs) {
    if (s.empty()) throw InputError("sequence_accuracy: empty sequence");
    ok += std::all_of(s.begin(), s.end(), [](const auto& r) { return r.correct(); });
  }
  return double(ok) / double(seqs.size());
}

/// Metric report object; `window_frames` is the window length n used for GSS.
inline nlohmann::ordered_json metric_report(const std::vector<PredictionRecord>& recs, int window_frames, const DWAConfig& dwa_cfg = {},
                                            int num_classes = 13) {
  nlohmann::ordered_json j;
  j["count"] = recs.size();
  j["window_frames"] = window_frames;
  j["accuracy"] = accuracy(recs);
  DWAConfig norm = dwa_cfg;
  norm.normalized = true;
  j["dwa"] = dwa(recs, norm);
  j["dwa_raw"] = dwa_raw(recs, dwa_cfg);
  j["gss"] = gss(recs, window_frames);
  j["gss_raw"] = gss_raw(recs, window_frames);
  j["macro_f1"] = macro_f1(recs, num_classes);
  j["map"] = mean_average_precision(recs);
  j["confusion"] = confusion_matrix(recs, num_classes);
  auto curve = nlohmann::ordered_json::array();
  for (const auto& b : distance_curve(recs, 2.0, dwa_cfg.d_min, dwa_cfg.d_max)) {
    nlohmann::ordered_json row;
    row["bin_center"] = b.center;
    row["accuracy"] = b.accuracy ? nlohmann::ordered_json(*b.accuracy) : nlohmann::ordered_json(nullptr);
    row["count"] = b.count;
    curve.push_back(row);
  }
  j["distance_curve"] = curve;
  return j;
}

}  // namespace ugest
