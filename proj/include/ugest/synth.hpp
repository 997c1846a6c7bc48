#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ugest/geometry.hpp"
#include "ugest/rng.hpp"
#include "ugest/tensor.hpp"

namespace ugest {

// ============================================================ gesture classes

enum class GestureClass : int {
  go_back = 0,
  go_up,
  go_down,
  move_right,
  move_left,
  turn_around,
  beckoning,
  follow_me,
  pointing,
  thumbs_up,
  thumbs_down,
  stop,
  null_gesture,
};

inline constexpr int kNumClasses = 13;

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "go-back", "go-up",    "go-down",   "move-right",  "move-left", "turn-around", "beckoning",
    "follow-me", "pointing", "thumbs-up", "thumbs-down", "stop",      "null"};

inline std::string_view class_name(GestureClass c) { return kClassNames.at(static_cast<std::size_t>(c)); }

inline GestureClass class_from_index(int i) {
  if (i < 0 || i >= kNumClasses) throw InputError("gesture class index out of range: " + std::to_string(i));
  return static_cast<GestureClass>(i);
}

inline GestureClass class_from_name(std::string_view name) {
  for (int i = 0; i < kNumClasses; ++i)
    if (kClassNames[i] == name) return static_cast<GestureClass>(i);
  throw InputError("unknown gesture class: " + std::string(name));
}

inline bool is_static(GestureClass c) {
  return c == GestureClass::pointing || c == GestureClass::thumbs_up || c == GestureClass::thumbs_down ||
         c == GestureClass::stop;
}
inline bool is_dynamic(GestureClass c) { return !is_static(c) && c != GestureClass::null_gesture; }

/// Label after a horizontal flip: only the direction-bearing pair swaps.
inline GestureClass hflip_label(GestureClass c) {
  if (c == GestureClass::move_left) return GestureClass::move_right;
  if (c == GestureClass::move_right) return GestureClass::move_left;
  return c;
}

// ============================================================ configuration

struct SynthConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 1;
  std::size_t frames = 32;
  double fps = 8.0;
  /// Actor height in pixels at the reference distance.
  double base_size = 60.0;
  double ref_distance = 2.0;
  double min_distance = 2.0;
  double max_distance = 28.0;
  double noise_floor = 0.01;
  double noise_slope = 0.03;
  /// Gaussian blur sigma in pixels per metre beyond min_distance.
  double blur_slope = 0.01;
  double actor_intensity = 0.95;
  double background_level = 0.3;
  std::uint64_t seed = 0;

  double apparent_size(double d) const { return base_size * ref_distance / d; }
  double noise_sigma(double d) const {
    return noise_floor + noise_slope * (d - min_distance) / (max_distance - min_distance);
  }
  double blur_sigma(double d) const { return blur_slope * (d - min_distance); }

  /// Violations of the generator's invariants (empty when valid).
  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (height < 8 || width < 8) v.push_back("synth.height/synth.width must be >= 8");
    if (channels != 1 && channels != 3) v.push_back("synth.channels must be 1 or 3");
    if (frames < 1 || frames > 84) v.push_back("synth.frames must be in [1,84]");
    if (!(fps > 0)) v.push_back("synth.fps must be positive");
    if (!(min_distance < max_distance)) v.push_back("synth.min_distance must be < synth.max_distance");
    if (!(apparent_size(max_distance) >= 2.0)) v.push_back("synth.base_size too small: actor below 2 px at max distance");
    if (base_size * 0.95 > double(std::min(height, width))) v.push_back("synth.base_size does not fit the frame");
    if (noise_floor < 0 || noise_slope < 0 || blur_slope < 0) v.push_back("synth noise/blur parameters must be >= 0");
    return v;
  }
};

struct VideoSample {
  Tensor<float> frames;  // T x H x W x C, values in [0,1]
  double distance_m = 2.0;
  GestureClass label = GestureClass::null_gesture;
  std::string id;
  double fps = 8.0;
  std::vector<BoundingBox> boxes;  // ground-truth actor box per frame

  std::size_t num_frames() const { return frames.dim(0); }
  std::size_t height() const { return frames.dim(1); }
  std::size_t width() const { return frames.dim(2); }
  std::size_t channels() const { return frames.dim(3); }
};

// ============================================================ rendering

namespace synth_detail {

constexpr double kPi = 3.14159265358979323846;

// Capsule (segment with radius); a disk when a == b. Actor units, y down.
struct Capsule {
  double ax, ay, bx, by, r;
};

struct Pose {
  std::vector<Capsule> parts;
};

inline double seg_dist2(double px, double py, const Capsule& c) {
  const double dx = c.bx - c.ax, dy = c.by - c.ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - c.ax) * dx + (py - c.ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double qx = c.ax + t * dx - px, qy = c.ay + t * dy - py;
  return qx * qx + qy * qy;
}

inline double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

// Per-video motion parameters, drawn before anything distance dependent.
struct MotionParams {
  double side;             // +1: arm on the image-right side
  double t0, t1;           // gesture execution window in normalised time
  double freq, phase;      // periodic gestures
  double turn_dir, turn_start;
  double cx01, cy01;       // placement in [0,1]
  std::vector<double> jitter_a, jitter_l, sway_x, sway_y;  // per-frame smooth noise
  std::vector<double> walk_theta, walk_len;                // null-class random walk
};

inline std::vector<double> smooth_noise(Rng& rng, std::size_t n, double step) {
  std::vector<double> v(n);
  double x = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x = 0.8 * x + step * rng.normal();
    v[i] = x;
  }
  return v;
}

inline MotionParams draw_motion(Rng& rng, std::size_t frames) {
  MotionParams m;
  m.side = rng.bernoulli(0.5) ? 1.0 : -1.0;
  m.t0 = rng.uniform(0.0, 0.2);
  m.t1 = rng.uniform(0.8, 1.0);
  m.freq = rng.uniform(1.0, 1.5);
  m.phase = rng.uniform(0.0, 2.0 * kPi);
  m.turn_dir = rng.bernoulli(0.5) ? 1.0 : -1.0;
  m.turn_start = rng.uniform(0.0, 2.0 * kPi);
  m.cx01 = rng.uniform();
  m.cy01 = rng.uniform();
  m.jitter_a = smooth_noise(rng, frames, 1.0);
  m.jitter_l = smooth_noise(rng, frames, 1.0);
  m.sway_x = smooth_noise(rng, frames, 1.0);
  m.sway_y = smooth_noise(rng, frames, 1.0);
  m.walk_theta.resize(frames);
  m.walk_len.resize(frames);
  // idle arm: wanders below the shoulder
  double th = rng.uniform(-110.0, -60.0), len = rng.uniform(0.5, 1.0);
  for (std::size_t i = 0; i < frames; ++i) {
    th = std::clamp(th + 6.0 * rng.normal(), -120.0, -50.0);
    len = std::clamp(len + 0.05 * rng.normal(), 0.4, 1.0);
    m.walk_theta[i] = th;
    m.walk_len[i] = len;
  }
  return m;
}

// Actor geometry in units of the actor height, origin at the torso centre.
constexpr double kShoulderX = 0.07, kShoulderY = -0.2, kArm = 0.4;
constexpr double kHeadY = -0.36, kHeadR = 0.08, kTorsoR = 0.08, kArmR = 0.05, kHandR = 0.07;

inline Pose gesture_pose(GestureClass c, const MotionParams& m, std::size_t frame, std::size_t frames) {
  const double tau = frames > 1 ? double(frame) / double(frames - 1) : 0.0;
  const double phi = smoothstep((tau - m.t0) / (m.t1 - m.t0));
  const double sx = m.side * kShoulderX, sy = kShoulderY;
  const double wave = std::sin(2.0 * kPi * m.freq * tau + m.phase);
  double hx = 0, hy = 0, hand_r = kHandR;
  bool thumb = false, elbow = false;
  double thumb_dy = 0, ex = 0, ey = 0;
  auto at_angle = [&](double deg, double len) {
    const double a = deg * kPi / 180.0;
    hx = sx + len * m.side * std::cos(a);
    hy = sy - len * std::sin(a);
  };
  const double ja = 3.0 * m.jitter_a[frame], jl = 0.02 * m.jitter_l[frame];
  switch (c) {
    case GestureClass::go_up: at_angle(-60.0 + 130.0 * phi, kArm); break;
    case GestureClass::go_down: at_angle(70.0 - 130.0 * phi, kArm); break;
    case GestureClass::move_left:
      hx = 0.35 - 0.7 * phi;
      hy = -0.17;
      break;
    case GestureClass::move_right:
      hx = -0.35 + 0.7 * phi;
      hy = -0.17;
      break;
    case GestureClass::turn_around: {
      // index finger circling above the shoulder
      const double a = m.turn_start + m.turn_dir * 2.0 * kPi * 1.5 * phi;
      hx = sx + m.side * 0.15 + 0.13 * std::cos(a);
      hy = -0.48 - 0.13 * std::sin(a);
      hand_r = 0.05;
      break;
    }
    case GestureClass::go_back:
      at_angle(0.0 + ja, kArm * (0.6 + 0.35 * std::cos(2.0 * kPi * m.freq * tau + m.phase)));
      break;
    case GestureClass::beckoning:
      at_angle(-15.0 + 45.0 * std::sin(2.0 * kPi * (m.freq + 0.5) * tau + m.phase), 0.8 * kArm);
      hand_r = kHandR * (1.0 + 0.3 * wave);
      break;
    case GestureClass::follow_me:
      // tapping the side of the head
      hx = m.side * (0.12 + 0.12 * std::abs(wave));
      hy = kHeadY;
      break;
    case GestureClass::pointing:
      at_angle(0.0 + ja, kArm * (1.0 + jl));
      hand_r = 0.045;
      break;
    case GestureClass::thumbs_up:
      at_angle(45.0 + ja, 0.8 * kArm * (1.0 + jl));
      thumb = true;
      thumb_dy = -0.16;
      break;
    case GestureClass::thumbs_down:
      at_angle(-45.0 + ja, 0.8 * kArm * (1.0 + jl));
      thumb = true;
      thumb_dy = 0.16;
      break;
    case GestureClass::stop:
      // upper arm out to the side, forearm up, open palm
      ex = sx + m.side * 0.22 * (1.0 + jl);
      ey = sy + 0.01 * ja;
      hx = ex;
      hy = ey - 0.26;
      elbow = true;
      hand_r = 0.1;
      break;
    case GestureClass::null_gesture: at_angle(m.walk_theta[frame], kArm * m.walk_len[frame]); break;
  }
  const double bx = 0.01 * m.sway_x[frame], by = 0.005 * m.sway_y[frame];
  Pose p;
  p.parts.push_back({bx, -0.25 + by, bx, 0.2 + by, kTorsoR});
  p.parts.push_back({bx, kHeadY + by, bx, kHeadY + by, kHeadR});
  if (elbow) {
    p.parts.push_back({sx + bx, sy + by, ex + bx, ey + by, kArmR});
    p.parts.push_back({ex + bx, ey + by, hx + bx, hy + by, kArmR});
  } else {
    p.parts.push_back({sx + bx, sy + by, hx + bx, hy + by, kArmR});
  }
  p.parts.push_back({hx + bx, hy + by, hx + bx, hy + by, hand_r});
  if (thumb) p.parts.push_back({hx + bx, hy + by, hx + bx, hy + by + thumb_dy, 0.05});
  return p;
}

// Extent of any pose relative to the torso centre, in actor units.
constexpr double kReachX = 0.56, kReachUp = 0.73, kReachDown = 0.32;

inline BoundingBox pose_box(const Pose& p, double cx, double cy, double u) {
  BoundingBox b{1e300, 1e300, -1e300, -1e300};
  for (const auto& c : p.parts) {
    b.x0 = std::min(b.x0, std::min(c.ax, c.bx) - c.r);
    b.x1 = std::max(b.x1, std::max(c.ax, c.bx) + c.r);
    b.y0 = std::min(b.y0, std::min(c.ay, c.by) - c.r);
    b.y1 = std::max(b.y1, std::max(c.ay, c.by) + c.r);
  }
  return {cx + u * b.x0, cy + u * b.y0, cx + u * b.x1, cy + u * b.y1};
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double s = 0;
  for (int i = -r; i <= r; ++i) s += (k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v /= s;
  return k;
}

/// Separable Gaussian blur of an H x W plane with edge clamping.
inline void blur_plane(std::vector<double>& img, std::size_t H, std::size_t W, double sigma) {
  if (sigma < 1e-3) return;
  const auto k = gaussian_kernel(sigma);
  const int r = int(k.size() / 2);
  std::vector<double> tmp(img.size());
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * img[y * W + std::size_t(std::clamp<long>(long(x) + i, 0, long(W) - 1))];
      tmp[y * W + x] = acc;
    }
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[std::size_t(std::clamp<long>(long(y) + i, 0, long(H) - 1)) * W + x];
      img[y * W + x] = acc;
    }
}

}  // namespace synth_detail

/// Clean (blurred, noise-free) rendering plus the ground-truth boxes; the
/// stochastic noise is added by generate(). Exposed for measurement.
struct CleanRender {
  std::vector<std::vector<double>> actor;       // per frame, H*W
  std::vector<double> background;               // H*W, static
  std::vector<BoundingBox> boxes;
  std::vector<std::vector<double>> coverage;    // per frame, blurred actor coverage (only when requested)
};

inline CleanRender render_clean(const SynthConfig& cfg, GestureClass cls, double distance_m, std::uint64_t seed,
                                bool with_coverage = false) {
  using namespace synth_detail;
  Rng rng(seed);
  const std::size_t T = cfg.frames, H = cfg.height, W = cfg.width;
  MotionParams m = draw_motion(rng, T);
  std::array<double, 6> tex;
  for (auto& t : tex) t = rng.uniform();

  CleanRender out;
  out.background.resize(H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double fx = double(x) / double(W), fy = double(y) / double(H);
      out.background[y * W + x] = cfg.background_level + 0.04 * std::sin(2 * kPi * (2 + 3 * tex[0]) * fx + 6.28 * tex[1]) +
                                  0.04 * std::sin(2 * kPi * (2 + 3 * tex[2]) * fy + 6.28 * tex[3]) +
                                  0.03 * std::sin(2 * kPi * (3 + 4 * tex[4]) * (fx + fy) + 6.28 * tex[5]);
    }

  const double u = cfg.apparent_size(distance_m);
  const double cx = kReachX * u + m.cx01 * (double(W) - 2 * kReachX * u);
  const double cy = kReachUp * u + m.cy01 * (double(H) - (kReachUp + kReachDown) * u);
  // Supersampling grows as the actor shrinks so thin parts keep their area.
  const int ss = std::clamp(int(std::ceil(128.0 / u)), 4, 40);

  for (std::size_t f = 0; f < T; ++f) {
    const Pose pose = gesture_pose(cls, m, f, T);
    const BoundingBox box = pose_box(pose, cx, cy, u);
    out.boxes.push_back(box);
    std::vector<double> img = out.background;
    std::vector<double> cov_plane(with_coverage ? H * W : 0, 0.0);
    const long x0 = std::max(0L, long(std::floor(box.x0)) - 1), x1 = std::min(long(W) - 1, long(std::ceil(box.x1)) + 1);
    const long y0 = std::max(0L, long(std::floor(box.y0)) - 1), y1 = std::min(long(H) - 1, long(std::ceil(box.y1)) + 1);
    std::vector<Capsule> px_parts;
    for (const auto& c : pose.parts) px_parts.push_back({cx + u * c.ax, cy + u * c.ay, cx + u * c.bx, cy + u * c.by, u * c.r});
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) {
        int hits = 0;
        for (int sy = 0; sy < ss; ++sy)
          for (int sx = 0; sx < ss; ++sx) {
            const double px = double(x) + (sx + 0.5) / ss, py = double(y) + (sy + 0.5) / ss;
            for (const auto& c : px_parts)
              if (seg_dist2(px, py, c) <= c.r * c.r) {
                ++hits;
                break;
              }
          }
        const double cov = double(hits) / double(ss * ss);
        if (with_coverage) cov_plane[std::size_t(y) * W + std::size_t(x)] = cov;
        double& v = img[std::size_t(y) * W + std::size_t(x)];
        v = v + (cfg.actor_intensity - v) * cov;
      }
    blur_plane(img, H, W, cfg.blur_sigma(distance_m));
    out.actor.push_back(std::move(img));
    if (with_coverage) {
      blur_plane(cov_plane, H, W, cfg.blur_sigma(distance_m));
      out.coverage.push_back(std::move(cov_plane));
    }
  }
  blur_plane(out.background, H, W, cfg.blur_sigma(distance_m));
  return out;
}

/// Renders one gesture clip. A pure function of (cfg, cls, distance, seed).
inline VideoSample generate(const SynthConfig& cfg, GestureClass cls, double distance_m, std::uint64_t seed,
                            std::string id = {}) {
  if (!(distance_m >= cfg.min_distance && distance_m <= cfg.max_distance)) {
    throw InputError("distance " + std::to_string(distance_m) + " m outside [" + std::to_string(cfg.min_distance) + ", " +
                     std::to_string(cfg.max_distance) + "]");
  }
  if (int(cls) < 0 || int(cls) >= kNumClasses) throw InputError("invalid gesture class");
  const auto clean = render_clean(cfg, cls, distance_m, seed);
  Rng noise(Rng(seed).split("noise"));
  const std::size_t T = cfg.frames, H = cfg.height, W = cfg.width, C = cfg.channels;
  static constexpr std::array<double, 3> kTint = {1.0, 0.95, 0.9};
  const double sigma = cfg.noise_sigma(distance_m);

  VideoSample v;
  v.frames = Tensor<float>({T, H, W, C});
  for (std::size_t f = 0; f < T; ++f)
    for (std::size_t p = 0; p < H * W; ++p)
      for (std::size_t c = 0; c < C; ++c) {
        const double tint = C == 1 ? 1.0 : kTint[c];
        const double val = clean.actor[f][p] * tint + sigma * noise.normal();
        v.frames[(f * H * W + p) * C + c] = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
  v.distance_m = distance_m;
  v.label = cls;
  v.id = std::move(id);
  v.fps = cfg.fps;
  v.boxes = clean.boxes;
  return v;
}

/// Mean actor signal over its ground-truth box (nominal contrast times blurred
/// coverage) divided by the noise sigma, averaged over frames.
inline double actor_region_snr(const SynthConfig& cfg, GestureClass cls, double distance_m, std::uint64_t seed) {
  const auto clean = render_clean(cfg, cls, distance_m, seed, true);
  const double contrast = cfg.actor_intensity - cfg.background_level;
  double total = 0;
  for (std::size_t f = 0; f < clean.actor.size(); ++f) {
    const auto b = clean.boxes[f].clamped(double(cfg.width), double(cfg.height));
    // Coverage is zero outside the box before blurring, so every pixel touching
    // the box counts fully; the mean is over the box's exact area.
    double acc = 0;
    for (std::size_t y = std::size_t(b.y0); y < std::min<std::size_t>(cfg.height, std::size_t(std::ceil(b.y1))); ++y)
      for (std::size_t x = std::size_t(b.x0); x < std::min<std::size_t>(cfg.width, std::size_t(std::ceil(b.x1))); ++x)
        acc += contrast * clean.coverage[f][y * cfg.width + x];
    const double wsum = b.area();
    total += wsum > 0 ? acc / wsum : 0.0;
  }
  return total / double(clean.actor.size()) / std::max(1e-12, cfg.noise_sigma(distance_m));
}

// ============================================================ augmentation

enum class AugOp { crop, hflip, rotate, scale, brightness, contrast, noise };

using AugSet = std::set<AugOp>;

inline const std::vector<AugOp>& all_aug_ops() {
  static const std::vector<AugOp> ops = {AugOp::crop,       AugOp::hflip,    AugOp::rotate, AugOp::scale,
                                         AugOp::brightness, AugOp::contrast, AugOp::noise};
  return ops;
}

namespace synth_detail {

// Output position q maps to source position inv(q) = M q + t (continuous coords).
struct Affine {
  double m00 = 1, m01 = 0, m10 = 0, m11 = 1, tx = 0, ty = 0;
  std::pair<double, double> apply(double x, double y) const { return {m00 * x + m01 * y + tx, m10 * x + m11 * y + ty}; }
  Affine inverse() const {
    const double det = m00 * m11 - m01 * m10;
    Affine r{m11 / det, -m01 / det, -m10 / det, m00 / det, 0, 0};
    r.tx = -(r.m00 * tx + r.m01 * ty);
    r.ty = -(r.m10 * tx + r.m11 * ty);
    return r;
  }
};

inline BoundingBox map_box(const Affine& fwd, const BoundingBox& b) {
  BoundingBox r{1e300, 1e300, -1e300, -1e300};
  for (double x : {b.x0, b.x1})
    for (double y : {b.y0, b.y1}) {
      auto [qx, qy] = fwd.apply(x, y);
      r.x0 = std::min(r.x0, qx);
      r.x1 = std::max(r.x1, qx);
      r.y0 = std::min(r.y0, qy);
      r.y1 = std::max(r.y1, qy);
    }
  return r;
}

// Resamples every frame through `fwd` (source -> output) with bilinear filtering.
inline void warp(VideoSample& v, const Affine& fwd) {
  const Affine inv = fwd.inverse();
  const std::size_t T = v.num_frames(), H = v.height(), W = v.width(), C = v.channels();
  Tensor<float> out(v.frames.shape());
  for (std::size_t f = 0; f < T; ++f)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        auto [sx, sy] = inv.apply(double(x) + 0.5, double(y) + 0.5);
        sx = std::clamp(sx - 0.5, 0.0, double(W - 1));
        sy = std::clamp(sy - 0.5, 0.0, double(H - 1));
        const std::size_t ix = std::min<std::size_t>(std::size_t(sx), W - 1), iy = std::min<std::size_t>(std::size_t(sy), H - 1);
        const std::size_t jx = std::min(ix + 1, W - 1), jy = std::min(iy + 1, H - 1);
        const double ax = sx - double(ix), ay = sy - double(iy);
        for (std::size_t c = 0; c < C; ++c) {
          auto at = [&](std::size_t yy, std::size_t xx) { return double(v.frames[((f * H + yy) * W + xx) * C + c]); };
          const double val = (1 - ay) * ((1 - ax) * at(iy, ix) + ax * at(iy, jx)) + ay * ((1 - ax) * at(jy, ix) + ax * at(jy, jx));
          out[((f * H + y) * W + x) * C + c] = static_cast<float>(std::clamp(val, 0.0, 1.0));
        }
      }
  v.frames = std::move(out);
  for (auto& b : v.boxes) b = map_box(fwd, b);
}

}  // namespace synth_detail

/// Exact horizontal mirror; an involution on pixels and boxes.
inline VideoSample hflip(const VideoSample& v) {
  VideoSample out = v;
  const std::size_t T = v.num_frames(), H = v.height(), W = v.width(), C = v.channels();
  for (std::size_t f = 0; f < T; ++f)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < C; ++c)
          out.frames[((f * H + y) * W + x) * C + c] = v.frames[((f * H + y) * W + (W - 1 - x)) * C + c];
  for (auto& b : out.boxes) b = {double(W) - b.x1, b.y0, double(W) - b.x0, b.y1};
  out.label = hflip_label(v.label);
  return out;
}

/// Applies the requested augmentations in a fixed order. Geometric ops are
/// redrawn (at most 8 times) until the actor stays inside the frame, and
/// skipped if no draw fits. Pixel values are clamped to [0,1].
inline VideoSample augment(const VideoSample& v, const AugSet& ops, Rng& rng) {
  using namespace synth_detail;
  VideoSample out = v;
  if (ops.empty()) return out;
  const double W = double(v.width()), H = double(v.height());
  const double cx = W / 2, cy = H / 2;
  auto union_box = [](const std::vector<BoundingBox>& bs) {
    BoundingBox u = bs.front();
    for (const auto& b : bs) u = u.united(b);
    return u;
  };
  auto try_geometric = [&](auto make) {
    for (int attempt = 0; attempt < 8; ++attempt) {
      const Affine fwd = make(1.0 - attempt / 8.0);
      if (map_box(fwd, union_box(out.boxes)).inside(W, H)) {
        warp(out, fwd);
        return;
      }
    }
  };

  if (ops.count(AugOp::crop)) {
    const double f = rng.uniform(0.8, 0.95);
    const double ox = rng.uniform(), oy = rng.uniform();
    try_geometric([&](double shrink) {
      const double ff = 1.0 - (1.0 - f) * shrink;
      const double cw = ff * W, ch = ff * H;
      const double wx0 = ox * (W - cw), wy0 = oy * (H - ch);
      return Affine{W / cw, 0, 0, H / ch, -wx0 * W / cw, -wy0 * H / ch};
    });
  }
  if (ops.count(AugOp::hflip)) out = hflip(out);
  if (ops.count(AugOp::rotate)) {
    const double deg = rng.uniform(-10.0, 10.0);
    try_geometric([&](double shrink) {
      const double a = deg * shrink * synth_detail::kPi / 180.0;
      const double c = std::cos(a), s = std::sin(a);
      return Affine{c, -s, s, c, cx - c * cx + s * cy, cy - s * cx - c * cy};
    });
  }
  if (ops.count(AugOp::scale)) {
    const double z = rng.uniform(0.85, 1.15);
    try_geometric([&](double shrink) {
      const double zz = 1.0 + (z - 1.0) * shrink;
      return Affine{zz, 0, 0, zz, cx - zz * cx, cy - zz * cy};
    });
  }
  auto pointwise = [&](auto fn) {
    for (auto& p : out.frames.data()) p = static_cast<float>(std::clamp(fn(double(p)), 0.0, 1.0));
  };
  if (ops.count(AugOp::brightness)) {
    const double delta = rng.uniform(-0.1, 0.1);
    pointwise([&](double p) { return p + delta; });
  }
  if (ops.count(AugOp::contrast)) {
    const double k = rng.uniform(0.8, 1.2);
    double mean = 0;
    for (auto p : out.frames.data()) mean += p;
    mean /= double(out.frames.size());
    pointwise([&](double p) { return (p - mean) * k + mean; });
  }
  if (ops.count(AugOp::noise)) {
    pointwise([&](double p) { return p + 0.02 * rng.normal(); });
  }
  return out;
}

}  // namespace ugest
