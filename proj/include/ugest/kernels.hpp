#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <vector>

#include "ugest/tensor.hpp"

// Raw numeric kernels shared by the autodiff ops and the fixed (non-trained)
// encoders. Every routine accumulates in a fixed order, so results are
// bit-reproducible for a given build.
namespace ugest::kernels {

// C[M x N] += A[M x K] * B[K x N]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T a = A[i * K + k];
      if (a == T{0}) continue;
      const T* b = B + k * N;
#pragma omp simd
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

// C[M x N] += A^T * B with A stored [K x M].
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T a = A[k * M + i];
      if (a == T{0}) continue;
      T* c = C + i * N;
#pragma omp simd
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

// C[M x N] += A * B^T with B stored [N x K].
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const T* b = B + j * K;
      // Eight fixed lanes: the summation order must not depend on pointer alignment.
      T lane[8] = {};
      std::size_t k = 0;
      for (; k + 8 <= K; k += 8)
        for (std::size_t l = 0; l < 8; ++l) lane[l] += a[k + l] * b[k + l];
      T acc = ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
      for (; k < K; ++k) acc += a[k] * b[k];
      C[i * N + j] += acc;
    }
  }
}

using Triple = std::array<std::size_t, 3>;

/// Geometry of a 3-D convolution over B x C x T x H x W.
struct Conv3dGeom {
  std::size_t batch, in_ch, out_ch;
  Triple in, kernel, stride, pad, out;

  std::size_t in_plane() const { return in[0] * in[1] * in[2]; }
  std::size_t out_plane() const { return out[0] * out[1] * out[2]; }
  std::size_t patch() const { return in_ch * kernel[0] * kernel[1] * kernel[2]; }

  static Conv3dGeom make(const Shape& x, const Shape& w, Triple stride, Triple pad) {
    if (x.size() != 5 || w.size() != 5) {
      throw DimensionError("conv3d expects 5-D input and kernel, got " + shape_str(x) + " and " + shape_str(w));
    }
    if (w[1] != x[1]) {
      throw DimensionError("conv3d channel mismatch: input " + shape_str(x) + " kernel " + shape_str(w));
    }
    Conv3dGeom g{x[0], x[1], w[0], {x[2], x[3], x[4]}, {w[2], w[3], w[4]}, stride, pad, {}};
    for (int a = 0; a < 3; ++a) {
      if (stride[a] == 0) throw DimensionError("conv3d stride must be positive");
      const std::size_t padded = g.in[a] + 2 * pad[a];
      if (g.kernel[a] > padded) {
        throw DimensionError("conv3d kernel " + shape_str(w) + " larger than padded input " + shape_str(x));
      }
      g.out[a] = (padded - g.kernel[a]) / stride[a] + 1;
    }
    return g;
  }
};

/// Direct convolution; the reference every faster path must match.
template <class T>
void conv3d_naive(const Conv3dGeom& g, const T* x, const T* w, const T* bias, T* y) {
  const auto [T_, H, W] = g.in;
  const auto [kt, kh, kw] = g.kernel;
  const auto [To, Ho, Wo] = g.out;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_ch; ++o)
      for (std::size_t t = 0; t < To; ++t)
        for (std::size_t h = 0; h < Ho; ++h)
          for (std::size_t ww = 0; ww < Wo; ++ww) {
            T acc = bias ? bias[o] : T{0};
            for (std::size_t c = 0; c < g.in_ch; ++c)
              for (std::size_t dt = 0; dt < kt; ++dt)
                for (std::size_t dh = 0; dh < kh; ++dh)
                  for (std::size_t dw = 0; dw < kw; ++dw) {
                    const long it = long(t * g.stride[0] + dt) - long(g.pad[0]);
                    const long ih = long(h * g.stride[1] + dh) - long(g.pad[1]);
                    const long iw = long(ww * g.stride[2] + dw) - long(g.pad[2]);
                    if (it < 0 || ih < 0 || iw < 0 || it >= long(T_) || ih >= long(H) || iw >= long(W)) continue;
                    acc += w[(((o * g.in_ch + c) * kt + dt) * kh + dh) * kw + dw] *
                           x[(((b * g.in_ch + c) * T_ + it) * H + ih) * W + iw];
                  }
            y[(((b * g.out_ch + o) * To + t) * Ho + h) * Wo + ww] = acc;
          }
}

/// Unfolds one batch element [C x T x H x W] into columns [patch x out_plane].
template <class T>
void im2col(const Conv3dGeom& g, const T* x, T* cols) {
  const auto [T_, H, W] = g.in;
  const auto [kt, kh, kw] = g.kernel;
  const auto [To, Ho, Wo] = g.out;
  const std::size_t P = g.out_plane();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t dt = 0; dt < kt; ++dt)
      for (std::size_t dh = 0; dh < kh; ++dh)
        for (std::size_t dw = 0; dw < kw; ++dw, ++row) {
          T* dst = cols + row * P;
          std::size_t p = 0;
          for (std::size_t t = 0; t < To; ++t) {
            const long it = long(t * g.stride[0] + dt) - long(g.pad[0]);
            for (std::size_t h = 0; h < Ho; ++h) {
              const long ih = long(h * g.stride[1] + dh) - long(g.pad[1]);
              const bool row_ok = it >= 0 && it < long(T_) && ih >= 0 && ih < long(H);
              const T* src = row_ok ? x + ((c * T_ + std::size_t(it)) * H + std::size_t(ih)) * W : nullptr;
              for (std::size_t ww = 0; ww < Wo; ++ww, ++p) {
                const long iw = long(ww * g.stride[2] + dw) - long(g.pad[2]);
                dst[p] = (row_ok && iw >= 0 && iw < long(W)) ? src[iw] : T{0};
              }
            }
          }
        }
}

/// Adjoint of im2col: scatters columns back into dx (accumulating).
template <class T>
void col2im(const Conv3dGeom& g, const T* cols, T* dx) {
  const auto [T_, H, W] = g.in;
  const auto [kt, kh, kw] = g.kernel;
  const auto [To, Ho, Wo] = g.out;
  const std::size_t P = g.out_plane();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t dt = 0; dt < kt; ++dt)
      for (std::size_t dh = 0; dh < kh; ++dh)
        for (std::size_t dw = 0; dw < kw; ++dw, ++row) {
          const T* src = cols + row * P;
          std::size_t p = 0;
          for (std::size_t t = 0; t < To; ++t) {
            const long it = long(t * g.stride[0] + dt) - long(g.pad[0]);
            for (std::size_t h = 0; h < Ho; ++h) {
              const long ih = long(h * g.stride[1] + dh) - long(g.pad[1]);
              const bool row_ok = it >= 0 && it < long(T_) && ih >= 0 && ih < long(H);
              T* dst = row_ok ? dx + ((c * T_ + std::size_t(it)) * H + std::size_t(ih)) * W : nullptr;
              for (std::size_t ww = 0; ww < Wo; ++ww, ++p) {
                const long iw = long(ww * g.stride[2] + dw) - long(g.pad[2]);
                if (row_ok && iw >= 0 && iw < long(W)) dst[iw] += src[p];
              }
            }
          }
        }
}

/// im2col + GEMM convolution (the fast path).
template <class T>
void conv3d_gemm(const Conv3dGeom& g, const T* x, const T* w, const T* bias, T* y) {
  const std::size_t P = g.out_plane(), K = g.patch();
  std::vector<T> cols(K * P);
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(g, x + b * g.in_ch * g.in_plane(), cols.data());
    T* yb = y + b * g.out_ch * P;
    for (std::size_t o = 0; o < g.out_ch; ++o) std::fill(yb + o * P, yb + (o + 1) * P, bias ? bias[o] : T{0});
    gemm_nn(g.out_ch, P, K, w, cols.data(), yb);
  }
}

/// Gradients of conv3d_gemm. Any of dx/dw/dbias may be null.
template <class T>
void conv3d_gemm_backward(const Conv3dGeom& g, const T* x, const T* w, const T* dy, T* dx, T* dw, T* dbias) {
  const std::size_t P = g.out_plane(), K = g.patch();
  std::vector<T> cols(K * P);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* dyb = dy + b * g.out_ch * P;
    if (dbias) {
      for (std::size_t o = 0; o < g.out_ch; ++o) {
        T acc{0};
        for (std::size_t p = 0; p < P; ++p) acc += dyb[o * P + p];
        dbias[o] += acc;
      }
    }
    if (dw) {
      im2col(g, x + b * g.in_ch * g.in_plane(), cols.data());
      gemm_nt(g.out_ch, K, P, dyb, cols.data(), dw);
    }
    if (dx) {
      std::fill(cols.begin(), cols.end(), T{0});
      gemm_tn(K, P, g.out_ch, w, dyb, cols.data());
      col2im(g, cols.data(), dx + b * g.in_ch * g.in_plane());
    }
  }
}

}  // namespace ugest::kernels
