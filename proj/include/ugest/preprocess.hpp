#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "ugest/geometry.hpp"
#include "ugest/kernels.hpp"
#include "ugest/rng.hpp"
#include "ugest/synth.hpp"

namespace ugest {

// ============================================================ grayscale helpers

/// Luminance plane [H x W] of frame f of a T x H x W x C stack.
inline std::vector<double> luminance(const Tensor<float>& frames, std::size_t f) {
  const std::size_t H = frames.dim(1), W = frames.dim(2), C = frames.dim(3);
  std::vector<double> out(H * W);
  const float* base = frames.data().data() + f * H * W * C;
  for (std::size_t p = 0; p < H * W; ++p) {
    out[p] = C == 1 ? double(base[p]) : 0.299 * base[p * C] + 0.587 * base[p * C + 1] + 0.114 * base[p * C + 2];
  }
  return out;
}

// ============================================================ frame embedding

using FrameEmbedding = std::vector<double>;

/// Fixed, untrained two-layer strided conv encoder with global average
/// pooling. Stands in for a pretrained backbone behind the same
/// frame -> R^d interface.
class FrameEncoder {
 public:
  explicit FrameEncoder(std::size_t dim = 32, std::uint64_t seed = 0x5eedf00dULL) : dim_(dim) {
    Rng rng(seed);
    auto init = [&](std::vector<float>& w, std::size_t out, std::size_t fan_in) {
      w.resize(out * fan_in);
      for (std::size_t o = 0; o < out; ++o) {
        double mean = 0;
        for (std::size_t i = 0; i < fan_in; ++i) mean += (w[o * fan_in + i] = float(rng.uniform(-1, 1) / std::sqrt(double(fan_in))));
        mean /= double(fan_in);
        for (std::size_t i = 0; i < fan_in; ++i) w[o * fan_in + i] -= float(mean);  // zero-mean: edge/texture detectors
      }
    };
    init(w1_, kHidden, 25);
    init(w2_, dim_, kHidden * 9);
  }

  std::size_t dim() const { return dim_; }

  std::vector<FrameEmbedding> embed(const Tensor<float>& frames) const {
    const std::size_t T = frames.dim(0), H = frames.dim(1), W = frames.dim(2);
    Tensor<float> x({T, 1, 1, H, W});
    for (std::size_t f = 0; f < T; ++f) {
      const auto lum = luminance(frames, f);
      std::copy(lum.begin(), lum.end(), x.data().begin() + f * H * W);
    }
    auto g1 = kernels::Conv3dGeom::make(x.shape(), {kHidden, 1, 1, 5, 5}, {1, 2, 2}, {0, 2, 2});
    std::vector<float> h1(T * kHidden * g1.out_plane());
    kernels::conv3d_gemm(g1, x.data().data(), w1_.data(), static_cast<const float*>(nullptr), h1.data());
    for (auto& v : h1) v = std::max(v, 0.0f);
    auto g2 = kernels::Conv3dGeom::make({T, kHidden, 1, g1.out[1], g1.out[2]}, {dim_, kHidden, 1, 3, 3}, {1, 2, 2}, {0, 1, 1});
    std::vector<float> h2(T * dim_ * g2.out_plane());
    kernels::conv3d_gemm(g2, h1.data(), w2_.data(), static_cast<const float*>(nullptr), h2.data());
    std::vector<FrameEmbedding> out(T, FrameEmbedding(dim_, 0.0));
    const std::size_t P = g2.out_plane();
    for (std::size_t f = 0; f < T; ++f)
      for (std::size_t d = 0; d < dim_; ++d) {
        double acc = 0;
        for (std::size_t p = 0; p < P; ++p) acc += std::max(0.0f, h2[(f * dim_ + d) * P + p]);
        out[f][d] = acc / double(P);
      }
    return out;
  }

 private:
  static constexpr std::size_t kHidden = 8;
  std::size_t dim_;
  std::vector<float> w1_, w2_;
};

inline std::vector<FrameEmbedding> embed_frames(const VideoSample& v, const FrameEncoder& enc = FrameEncoder()) {
  return enc.embed(v.frames);
}

// ============================================================ k-means

struct KMeansResult {
  std::vector<std::vector<double>> centroids;
  std::vector<std::size_t> assignment;
  /// Inertia after every assignment step (last entry is the final inertia).
  std::vector<double> inertia_history;
  std::size_t iterations = 0;

  double inertia() const { return inertia_history.empty() ? 0.0 : inertia_history.back(); }
};

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

namespace kmeans_detail {

// Nearest centroid per point (ties -> smallest centroid index); returns inertia.
inline double assign(const std::vector<std::vector<double>>& pts, const std::vector<std::vector<double>>& cents,
                     std::vector<std::size_t>& out) {
  double inertia = 0;
  out.resize(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cents.size(); ++c) {
      const double d = squared_distance(pts[i], cents[c]);
      if (d < best) {
        best = d;
        out[i] = c;
      }
    }
    inertia += best;
  }
  return inertia;
}

}  // namespace kmeans_detail

/// Lloyd's algorithm with k-means++ seeding. Stops when the largest centroid
/// shift drops below `tol` or after `max_iter` updates. A cluster that empties
/// is re-seeded at the point farthest from its centroid. The returned
/// assignment is recomputed against the returned centroids.
inline KMeansResult kmeans(const std::vector<std::vector<double>>& pts, std::size_t k, Rng& rng, std::size_t max_iter = 100,
                           double tol = 1e-6) {
  using kmeans_detail::assign;
  if (k == 0) throw InputError("kmeans: k must be positive");
  if (pts.size() < k) {
    throw InputError("kmeans: need at least k=" + std::to_string(k) + " points, got " + std::to_string(pts.size()));
  }
  const std::size_t n = pts.size();
  KMeansResult r;
  // k-means++ seeding.
  std::vector<bool> chosen(n, false);
  std::size_t first = rng.below(n);
  r.centroids.push_back(pts[first]);
  chosen[first] = true;
  std::vector<double> d2(n);
  while (r.centroids.size() < k) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : r.centroids) best = std::min(best, squared_distance(pts[i], c));
      d2[i] = chosen[i] ? 0.0 : best;
      total += d2[i];
    }
    std::size_t pick = n;
    if (total > 0) {
      double u = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0) continue;
        pick = i;
        if ((u -= d2[i]) < 0) break;
      }
    } else {
      for (std::size_t i = 0; i < n && pick == n; ++i)
        if (!chosen[i]) pick = i;
    }
    chosen[pick] = true;
    r.centroids.push_back(pts[pick]);
  }

  const std::size_t dim = pts.front().size();
  for (r.iterations = 0; r.iterations < max_iter; ++r.iterations) {
    r.inertia_history.push_back(assign(pts, r.centroids, r.assignment));
    std::vector<std::vector<double>> next(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[r.assignment[i]];
      for (std::size_t d = 0; d < dim; ++d) next[r.assignment[i]][d] += pts[i][d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        std::size_t far = 0;
        double fd = -1;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = squared_distance(pts[i], r.centroids[r.assignment[i]]);
          if (d > fd) {
            fd = d;
            far = i;
          }
        }
        next[c] = pts[far];
      } else {
        for (auto& v : next[c]) v /= double(counts[c]);
      }
    }
    double shift = 0;
    for (std::size_t c = 0; c < k; ++c) shift = std::max(shift, std::sqrt(squared_distance(next[c], r.centroids[c])));
    r.centroids = std::move(next);
    if (shift < tol) {
      ++r.iterations;
      break;
    }
  }
  r.inertia_history.push_back(assign(pts, r.centroids, r.assignment));
  return r;
}

/// Per cluster, the member closest to its centroid (smallest index on ties),
/// returned in ascending frame order. A cluster left without members takes the
/// closest frame not already selected.
inline std::vector<std::size_t> select_representatives(const std::vector<FrameEmbedding>& emb, const KMeansResult& km) {
  const std::size_t k = km.centroids.size();
  std::vector<std::size_t> rep(k, emb.size());
  std::vector<double> best(k, std::numeric_limits<double>::infinity());
  for (std::size_t j = 0; j < emb.size(); ++j) {
    const auto c = km.assignment[j];
    const double d = std::sqrt(squared_distance(emb[j], km.centroids[c]));
    if (d < best[c]) {
      best[c] = d;
      rep[c] = j;
    }
  }
  std::vector<bool> used(emb.size(), false);
  for (auto r : rep)
    if (r < emb.size()) used[r] = true;
  for (std::size_t c = 0; c < k; ++c) {
    if (rep[c] < emb.size()) continue;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < emb.size(); ++j) {
      const double d = std::sqrt(squared_distance(emb[j], km.centroids[c]));
      if (!used[j] && d < bd) {
        bd = d;
        rep[c] = j;
      }
    }
    used[rep[c]] = true;
  }
  std::sort(rep.begin(), rep.end());
  return rep;
}

/// k representative frame indices of a clip, ascending in time.
inline std::vector<std::size_t> representative_frames(const std::vector<FrameEmbedding>& emb, std::size_t k, Rng& rng) {
  if (emb.size() < k) {
    throw InputError("representative_frames: clip has " + std::to_string(emb.size()) + " frames, fewer than k=" + std::to_string(k));
  }
  if (emb.size() == k) {
    std::vector<std::size_t> all(k);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  return select_representatives(emb, kmeans(emb, k, rng));
}

// ============================================================ detection

/// Pluggable user detector.
class UserDetector {
 public:
  virtual ~UserDetector() = default;
  /// Throws DetectionMiss when no user is found.
  virtual BoundingBox detect(const VideoSample& v, std::size_t frame) const = 0;
};

/// Returns the generator's ground-truth box.
class GroundTruthDetector : public UserDetector {
 public:
  BoundingBox detect(const VideoSample& v, std::size_t frame) const override {
    if (frame >= v.boxes.size()) throw DetectionMiss("no ground-truth box for frame " + std::to_string(frame) + " of " + v.id);
    return v.boxes[frame];
  }
};

/// Thresholds luminance at mean + 2 sigma and returns the tight box of the
/// largest 4-connected component.
class ThresholdDetector : public UserDetector {
 public:
  BoundingBox detect(const VideoSample& v, std::size_t frame) const override {
    return detect_plane(luminance(v.frames, frame), v.height(), v.width());
  }

  static BoundingBox detect_plane(const std::vector<double>& img, std::size_t H, std::size_t W) {
    double mean = 0, var = 0;
    for (double p : img) mean += p;
    mean /= double(img.size());
    for (double p : img) var += (p - mean) * (p - mean);
    var /= double(img.size());
    const double thr = mean + 2.0 * std::sqrt(var);
    std::vector<int> label(img.size(), -1);
    std::size_t best_size = 0;
    BoundingBox best{};
    std::vector<std::size_t> stack;
    int next = 0;
    for (std::size_t s = 0; s < img.size(); ++s) {
      if (label[s] >= 0 || !(img[s] > thr) || var <= 0) continue;
      std::size_t size = 0;
      std::size_t minx = W, miny = H, maxx = 0, maxy = 0;
      stack.assign(1, s);
      label[s] = next;
      while (!stack.empty()) {
        const std::size_t p = stack.back();
        stack.pop_back();
        ++size;
        const std::size_t x = p % W, y = p / W;
        minx = std::min(minx, x), maxx = std::max(maxx, x), miny = std::min(miny, y), maxy = std::max(maxy, y);
        auto visit = [&](std::size_t q) {
          if (label[q] < 0 && img[q] > thr) {
            label[q] = next;
            stack.push_back(q);
          }
        };
        if (x > 0) visit(p - 1);
        if (x + 1 < W) visit(p + 1);
        if (y > 0) visit(p - W);
        if (y + 1 < H) visit(p + W);
      }
      ++next;
      if (size > best_size) {
        best_size = size;
        best = {double(minx), double(miny), double(maxx + 1), double(maxy + 1)};
      }
    }
    if (best_size == 0) throw DetectionMiss("no bright component found");
    return best;
  }
};

// ============================================================ crop

/// Pixels added on every side: box diagonal / a.
inline double extension_pixels(const BoundingBox& box, double a) {
  if (!(a > 0)) throw InputError("extend_and_crop: ratio a must be positive");
  return box.diagonal() / a;
}

/// Extends the box by diagonal/a on all sides (clamped to the frame), pads the
/// region to a square by edge replication and resizes it to S x S bilinearly.
/// `frame` is H x W x C.
inline Tensor<float> extend_and_crop(const Tensor<float>& frame, const BoundingBox& box, double a, std::size_t S) {
  if (frame.ndim() != 3) throw DimensionError("extend_and_crop expects H x W x C, got " + shape_str(frame.shape()));
  if (!box.valid() || box.area() <= 0) throw InputError("extend_and_crop: degenerate bounding box");
  const std::size_t H = frame.dim(0), W = frame.dim(1), C = frame.dim(2);
  const double e = extension_pixels(box, a);
  const BoundingBox ext = BoundingBox{box.x0 - e, box.y0 - e, box.x1 + e, box.y1 + e}.clamped(double(W), double(H));
  if (!ext.valid()) throw InputError("extend_and_crop: box lies outside the frame");
  const double side = std::max(ext.width(), ext.height());
  const double sx0 = 0.5 * (ext.x0 + ext.x1) - 0.5 * side, sy0 = 0.5 * (ext.y0 + ext.y1) - 0.5 * side;
  const double step = side / double(S);
  Tensor<float> out({S, S, C});
  // Sample positions are clamped to the extended region (edge replication),
  // then bilinearly interpolated between pixel centres.
  auto coord = [](double p, double lo, double hi, std::size_t n, std::size_t& i0, std::size_t& i1, double& a) {
    p = std::clamp(p, lo, hi) - 0.5;
    p = std::clamp(p, 0.0, double(n - 1));
    i0 = std::min<std::size_t>(std::size_t(p), n - 1);
    i1 = std::min(i0 + 1, n - 1);
    a = p - double(i0);
  };
  for (std::size_t i = 0; i < S; ++i) {
    std::size_t y0, y1;
    double ay;
    coord(sy0 + (double(i) + 0.5) * step, ext.y0 + 0.5, ext.y1 - 0.5, H, y0, y1, ay);
    for (std::size_t j = 0; j < S; ++j) {
      std::size_t x0, x1;
      double ax;
      coord(sx0 + (double(j) + 0.5) * step, ext.x0 + 0.5, ext.x1 - 0.5, W, x0, x1, ax);
      for (std::size_t c = 0; c < C; ++c) {
        auto at = [&](std::size_t y, std::size_t x) { return double(frame[(y * W + x) * C + c]); };
        const double v = (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x1)) + ay * ((1 - ax) * at(y1, x0) + ax * at(y1, x1));
        out[(i * S + j) * C + c] = static_cast<float>(v);
      }
    }
  }
  return out;
}

/// Frame f of a T x H x W x C stack as an H x W x C tensor.
inline Tensor<float> frame_at(const Tensor<float>& frames, std::size_t f) {
  const std::size_t H = frames.dim(1), W = frames.dim(2), C = frames.dim(3);
  std::vector<float> d(frames.data().begin() + f * H * W * C, frames.data().begin() + (f + 1) * H * W * C);
  return Tensor<float>({H, W, C}, std::move(d));
}

// ============================================================ normalisation

/// Per-clip, per-channel standardisation of the first `image_channels`
/// channels of a k x S x S x C' stack; remaining channels are left raw.
/// A (near-)constant channel becomes all zeros.
inline void normalize_clip(Tensor<float>& frames, std::size_t image_channels) {
  const std::size_t C = frames.shape().back();
  const std::size_t n = frames.size() / C;
  for (std::size_t c = 0; c < std::min(image_channels, C); ++c) {
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += frames[i * C + c];
    mean /= double(n);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (frames[i * C + c] - mean) * (frames[i * C + c] - mean);
    var /= double(n);
    const double inv = var < 1e-8 ? 0.0 : 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < n; ++i) frames[i * C + c] = static_cast<float>((frames[i * C + c] - mean) * inv);
  }
}

// ============================================================ optical flow

struct FlowOptions {
  std::size_t window = 5;
  double min_eigen = 1e-4;
  /// Gauss-Newton refinements per pixel (each re-samples the second frame).
  std::size_t iterations = 5;
  /// Pyramid levels (coarse-to-fine, factor 2); levels stop once a side drops below 16 px.
  std::size_t levels = 2;
  /// Largest accepted displacement in full-resolution pixels; steps beyond it are rejected.
  double max_displacement = 8.0;
};

namespace flow_detail {

inline void gradients(const std::vector<double>& img, std::size_t H, std::size_t W, std::vector<double>& gx, std::vector<double>& gy) {
  gx.resize(H * W);
  gy.resize(H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t xm = x ? x - 1 : 0, xp = std::min(x + 1, W - 1);
      const std::size_t ym = y ? y - 1 : 0, yp = std::min(y + 1, H - 1);
      gx[y * W + x] = xp > xm ? (img[y * W + xp] - img[y * W + xm]) / double(xp - xm) : 0.0;
      gy[y * W + x] = yp > ym ? (img[yp * W + x] - img[ym * W + x]) / double(yp - ym) : 0.0;
    }
}

inline double sample(const std::vector<double>& img, std::size_t H, std::size_t W, double x, double y) {
  x = std::clamp(x, 0.0, double(W - 1));
  y = std::clamp(y, 0.0, double(H - 1));
  const std::size_t x0 = std::min<std::size_t>(std::size_t(x), W - 1), y0 = std::min<std::size_t>(std::size_t(y), H - 1);
  const std::size_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const double ax = x - double(x0), ay = y - double(y0);
  return (1 - ay) * ((1 - ax) * img[y0 * W + x0] + ax * img[y0 * W + x1]) + ay * ((1 - ax) * img[y1 * W + x0] + ax * img[y1 * W + x1]);
}

inline std::vector<double> downsample(const std::vector<double>& img, std::size_t H, std::size_t W) {
  const std::size_t h = H / 2, w = W / 2;
  std::vector<double> out(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      out[y * w + x] = 0.25 * (img[2 * y * W + 2 * x] + img[2 * y * W + 2 * x + 1] + img[(2 * y + 1) * W + 2 * x] + img[(2 * y + 1) * W + 2 * x + 1]);
  return out;
}

// Refines (u, v) in place at one scale. Pixels whose window is ill-conditioned
// get zero flow when `zero_ill` is set, otherwise keep their initial guess.
inline void refine(const std::vector<double>& prev, const std::vector<double>& next, std::size_t H, std::size_t W,
                   const FlowOptions& opt, std::vector<double>& u, std::vector<double>& v, bool zero_ill, double limit) {
  std::vector<double> gx1, gy1, gx2, gy2;
  gradients(prev, H, W, gx1, gy1);
  gradients(next, H, W, gx2, gy2);
  const long r = long(opt.window / 2);
  for (long y = 0; y < long(H); ++y)
    for (long x = 0; x < long(W); ++x) {
      const std::size_t p = std::size_t(y) * W + std::size_t(x);
      double pu = u[p], pv = v[p];
      auto residual = [&](double cu, double cv) {
        double e = 0;
        for (long yy = std::max(0L, y - r); yy <= std::min(long(H) - 1, y + r); ++yy)
          for (long xx = std::max(0L, x - r); xx <= std::min(long(W) - 1, x + r); ++xx) {
            const double d = sample(next, H, W, double(xx) + cu, double(yy) + cv) - prev[std::size_t(yy) * W + std::size_t(xx)];
            e += d * d;
          }
        return e;
      };
      double err = residual(pu, pv);
      for (std::size_t iter = 0; iter < std::max<std::size_t>(1, opt.iterations); ++iter) {
        double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0;
        for (long yy = std::max(0L, y - r); yy <= std::min(long(H) - 1, y + r); ++yy)
          for (long xx = std::max(0L, x - r); xx <= std::min(long(W) - 1, x + r); ++xx) {
            const std::size_t q = std::size_t(yy) * W + std::size_t(xx);
            const double px = double(xx) + pu, py = double(yy) + pv;
            const double ix = 0.5 * (gx1[q] + sample(gx2, H, W, px, py));
            const double iy = 0.5 * (gy1[q] + sample(gy2, H, W, px, py));
            const double it = sample(next, H, W, px, py) - prev[q];
            a11 += ix * ix;
            a12 += ix * iy;
            a22 += iy * iy;
            b1 -= ix * it;
            b2 -= iy * it;
          }
        const double tr = a11 + a22, det = a11 * a22 - a12 * a12;
        const double min_eig = 0.5 * (tr - std::sqrt(std::max(0.0, tr * tr - 4.0 * det)));
        if (min_eig < opt.min_eigen) {
          if (iter == 0 && zero_ill) pu = pv = 0.0;
          break;
        }
        double du = (a22 * b1 - a12 * b2) / det, dv = (a11 * b2 - a12 * b1) / det;
        // Backtrack until the window residual drops; stop if it never does.
        bool improved = false;
        for (int half = 0; half < 4 && !improved; ++half, du *= 0.5, dv *= 0.5) {
          if (std::abs(pu + du) > limit || std::abs(pv + dv) > limit) continue;
          const double e = residual(pu + du, pv + dv);
          if (e < err) {
            err = e;
            pu += du;
            pv += dv;
            improved = true;
          }
        }
        if (!improved || std::abs(du) + std::abs(dv) < 1e-4) break;
      }
      u[p] = pu;
      v[p] = pv;
    }
}

inline void pyramid_flow(const std::vector<double>& prev, const std::vector<double>& next, std::size_t H, std::size_t W,
                         const FlowOptions& opt, std::size_t level, std::vector<double>& u, std::vector<double>& v) {
  u.assign(H * W, 0.0);
  v.assign(H * W, 0.0);
  if (level + 1 < opt.levels && H / 2 >= 16 && W / 2 >= 16) {
    const std::size_t h = H / 2, w = W / 2;
    std::vector<double> cu, cv;
    pyramid_flow(downsample(prev, H, W), downsample(next, H, W), h, w, opt, level + 1, cu, cv);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double cx = (double(x) + 0.5) / 2.0 - 0.5, cy = (double(y) + 0.5) / 2.0 - 0.5;
        u[y * W + x] = 2.0 * sample(cu, h, w, cx, cy);
        v[y * W + x] = 2.0 * sample(cv, h, w, cx, cy);
      }
  }
  refine(prev, next, H, W, opt, u, v, level == 0, opt.max_displacement / double(1u << level));
}

}  // namespace flow_detail

/// Dense Lucas-Kanade flow between two grayscale H x W planes; returns H x W x 2
/// (u = x displacement, v = y displacement, in pixels). Per pixel, the flow is
/// the least-squares solution over a window, using central-difference
/// gradients averaged over both frames, refined coarse-to-fine. Windows whose
/// structure tensor has min eigenvalue below `min_eigen` get zero flow.
inline Tensor<float> optical_flow(const std::vector<double>& prev, const std::vector<double>& next, std::size_t H, std::size_t W,
                                  const FlowOptions& opt = {}) {
  if (prev.size() != H * W || next.size() != H * W) throw DimensionError("optical_flow: frame shape mismatch");
  std::vector<double> u, v;
  flow_detail::pyramid_flow(prev, next, H, W, opt, 0, u, v);
  Tensor<float> out({H, W, 2});
  for (std::size_t p = 0; p < H * W; ++p) {
    out[2 * p] = static_cast<float>(u[p]);
    out[2 * p + 1] = static_cast<float>(v[p]);
  }
  return out;
}

/// Flow between two H x W x C frames (converted by luminance).
inline Tensor<float> optical_flow(const Tensor<float>& prev, const Tensor<float>& next, const FlowOptions& opt = {}) {
  if (prev.shape() != next.shape() || prev.ndim() != 3) {
    throw DimensionError("optical_flow: frame shape mismatch " + shape_str(prev.shape()) + " vs " + shape_str(next.shape()));
  }
  const std::size_t H = prev.dim(0), W = prev.dim(1);
  auto lum = [&](const Tensor<float>& f) {
    return luminance(f.reshaped({1, H, W, f.dim(2)}), 0);
  };
  return optical_flow(lum(prev), lum(next), H, W, opt);
}

// ============================================================ full chain

enum class DetectorKind { ground_truth, threshold };

struct PreprocessConfig {
  std::size_t k = 8;
  std::size_t target_size = 64;
  double ratio_a = 8.0;
  DetectorKind detector = DetectorKind::ground_truth;
  /// On a detection miss: true = crop the full frame, false = propagate the error.
  bool full_frame_on_miss = true;
  std::size_t embed_dim = 32;
  FlowOptions flow;
  std::uint64_t seed = 0;

  std::vector<std::string> violations(std::size_t source_frames = 0) const {
    std::vector<std::string> v;
    if (k == 0) v.push_back("preprocess.k must be positive");
    if (source_frames && k > source_frames) v.push_back("preprocess.k exceeds the source frame count");
    if (target_size < 4) v.push_back("preprocess.target_size must be >= 4");
    if (!(ratio_a > 0)) v.push_back("preprocess.ratio_a must be positive");
    if (embed_dim == 0) v.push_back("preprocess.embed_dim must be positive");
    if (!(flow.max_displacement > 0)) v.push_back("preprocess.flow.max_displacement must be positive");
    return v;
  }
};

struct ProcessedClip {
  Tensor<float> frames;  // k x S x S x (C + 2)
  std::vector<std::size_t> source_indices;
  double distance_m = 0;
  GestureClass label = GestureClass::null_gesture;
  std::string source_id;
};

/// Per-video memo for the chain: embeddings, crops and flows are computed
/// once and reused across sliding windows.
class ClipPreprocessor {
 public:
  ClipPreprocessor(const VideoSample& v, const PreprocessConfig& cfg, const FrameEncoder& enc)
      : v_(v), cfg_(cfg), emb_(enc.embed(v.frames)), boxes_(v.num_frames()), crops_(v.num_frames()) {
    if (cfg.detector == DetectorKind::threshold) det_ = std::make_unique<ThresholdDetector>();
    else det_ = std::make_unique<GroundTruthDetector>();
  }

  const std::vector<FrameEmbedding>& embeddings() const { return emb_; }

  /// Window of the n frames ending at frame `end` (1-based, inclusive).
  /// Windows shorter than k repeat their representative frames in time order.
  ProcessedClip window(std::size_t end, std::size_t n) {
    if (n == 0 || end < n || end > v_.num_frames()) throw InputError("invalid preprocessing window");
    const std::size_t start = end - n;
    std::vector<FrameEmbedding> sub(emb_.begin() + long(start), emb_.begin() + long(end));
    const std::size_t k_eff = std::min(cfg_.k, n);
    Rng rng(Rng(cfg_.seed).split(v_.id + "#" + std::to_string(start) + ":" + std::to_string(end)));
    auto local = representative_frames(sub, k_eff, rng);
    std::vector<std::size_t> idx(cfg_.k);
    for (std::size_t i = 0; i < cfg_.k; ++i) idx[i] = start + local[i * k_eff / cfg_.k];
    return assemble(idx);
  }

  ProcessedClip full() {
    if (v_.num_frames() < cfg_.k) {
      throw InputError("preprocess: clip " + v_.id + " has fewer frames than k=" + std::to_string(cfg_.k));
    }
    return window(v_.num_frames(), v_.num_frames());
  }

 private:
  const BoundingBox& box(std::size_t f) {
    if (!boxes_[f]) {
      try {
        boxes_[f] = det_->detect(v_, f);
      } catch (const DetectionMiss&) {
        if (!cfg_.full_frame_on_miss) throw;
        boxes_[f] = BoundingBox{0, 0, double(v_.width()), double(v_.height())};
      }
    }
    return *boxes_[f];
  }

  const Tensor<float>& crop(std::size_t f) {
    if (!crops_[f]) crops_[f] = extend_and_crop(frame_at(v_.frames, f), box(f), cfg_.ratio_a, cfg_.target_size);
    return *crops_[f];
  }

  const Tensor<float>& flow(std::size_t a, std::size_t b) {
    auto key = std::make_pair(a, b);
    auto it = flows_.find(key);
    if (it != flows_.end()) return it->second;
    return flows_.emplace(key, optical_flow(crop(a), crop(b), cfg_.flow)).first->second;
  }

  ProcessedClip assemble(const std::vector<std::size_t>& idx) {
    const std::size_t S = cfg_.target_size, C = v_.channels(), Cp = C + 2;
    ProcessedClip out;
    out.frames = Tensor<float>({idx.size(), S, S, Cp});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& cr = crop(idx[i]);
      for (std::size_t p = 0; p < S * S; ++p)
        for (std::size_t c = 0; c < C; ++c) out.frames[(i * S * S + p) * Cp + c] = cr[p * C + c];
      if (i == 0 || idx[i] == idx[i - 1]) continue;  // zero flow for the first / repeated frame
      const auto& fl = flow(idx[i - 1], idx[i]);
      for (std::size_t p = 0; p < S * S; ++p) {
        out.frames[(i * S * S + p) * Cp + C] = fl[2 * p];
        out.frames[(i * S * S + p) * Cp + C + 1] = fl[2 * p + 1];
      }
    }
    normalize_clip(out.frames, C);
    out.source_indices = idx;
    out.distance_m = v_.distance_m;
    out.label = v_.label;
    out.source_id = v_.id;
    return out;
  }

  const VideoSample& v_;
  PreprocessConfig cfg_;
  std::vector<FrameEmbedding> emb_;
  std::vector<std::optional<BoundingBox>> boxes_;
  std::vector<std::optional<Tensor<float>>> crops_;
  std::map<std::pair<std::size_t, std::size_t>, Tensor<float>> flows_;
  std::unique_ptr<UserDetector> det_;
};

/// embed -> k-means -> representative frames -> detect/extend/crop/resize ->
/// flow between consecutive representatives -> normalise.
inline ProcessedClip preprocess_clip(const VideoSample& v, const PreprocessConfig& cfg, const FrameEncoder& enc) {
  ClipPreprocessor p(v, cfg, enc);
  return p.full();
}

inline ProcessedClip preprocess_clip(const VideoSample& v, const PreprocessConfig& cfg) {
  return preprocess_clip(v, cfg, FrameEncoder(cfg.embed_dim));
}

}  // namespace ugest
