#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ugest/autodiff.hpp"
#include "ugest/kernels.hpp"

// Differentiable ops recorded on a Tape. No implicit broadcasting: binary
// elementwise ops need equal shapes; `scale` is the only scalar broadcast.
namespace ugest {

namespace detail {

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// outer x n x inner split around one axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Var add(Tape<T>& tp, Var a, Var b) {
  detail::require_same(tp.shape(a), tp.shape(b), "add");
  Tensor<T> out = tp.value(a);
  const auto& bv = tp.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tp.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::span<const T> g) {
    for (Var v : {a, b}) {
      auto d = t.grad_accumulator(v);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
  });
}

template <class T>
Var sub(Tape<T>& tp, Var a, Var b) {
  detail::require_same(tp.shape(a), tp.shape(b), "sub");
  Tensor<T> out = tp.value(a);
  const auto& bv = tp.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tp.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::span<const T> g) {
    auto da = t.grad_accumulator(a);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i];
    auto db = t.grad_accumulator(b);
    for (std::size_t i = 0; i < db.size(); ++i) db[i] -= g[i];
  });
}

template <class T>
Var mul(Tape<T>& tp, Var a, Var b) {
  detail::require_same(tp.shape(a), tp.shape(b), "mul");
  Tensor<T> out = tp.value(a);
  const auto& bv = tp.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tp.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::span<const T> g) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    auto da = t.grad_accumulator(a);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * bv[i];
    auto db = t.grad_accumulator(b);
    for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * av[i];
  });
}

template <class T>
Var scale(Tape<T>& tp, Var x, T c) {
  Tensor<T> out = tp.value(x);
  for (auto& v : out.data()) v *= c;
  return tp.record(std::move(out), {x}, [x, c](Tape<T>& t, std::span<const T> g) {
    auto d = t.grad_accumulator(x);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += c * g[i];
  });
}

template <class T>
Var relu(Tape<T>& tp, Var x) {
  Tensor<T> out = tp.value(x);
  for (auto& v : out.data()) v = v < T{0} ? T{0} : v;  // NaN passes through
  if (tp.tracking_branches())
    for (std::size_t i = 0; i < out.size(); ++i) tp.note_branch(i * 2 + (out[i] > T{0}));
  return tp.record(std::move(out), {x}, [x](Tape<T>& t, std::span<const T> g) {
    const auto& xv = t.value(x);
    auto d = t.grad_accumulator(x);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (xv[i] > T{0}) d[i] += g[i];
  });
}

template <class T>
Var exp(Tape<T>& tp, Var x) {
  Tensor<T> out = tp.value(x);
  for (auto& v : out.data()) v = std::exp(v);
  const Var self{tp.size()};
  return tp.record(std::move(out), {x}, [x, self](Tape<T>& t, std::span<const T> g) {
    const auto& y = t.value(self);
    auto d = t.grad_accumulator(x);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i];
  });
}

template <class T>
Var log(Tape<T>& tp, Var x) {
  Tensor<T> out = tp.value(x);
  for (auto& v : out.data()) {
    if (!(v > T{0})) throw DomainError("log of non-positive value");
    v = std::log(v);
  }
  return tp.record(std::move(out), {x}, [x](Tape<T>& t, std::span<const T> g) {
    const auto& xv = t.value(x);
    auto d = t.grad_accumulator(x);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] / xv[i];
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
Var sum(Tape<T>& tp, Var x) {
  T acc{0};
  for (auto v : tp.value(x).data()) acc += v;
  return tp.record(Tensor<T>::scalar(acc), {x}, [x](Tape<T>& t, std::span<const T> g) {
    auto d = t.grad_accumulator(x);
    for (auto& v : d) v += g[0];
  });
}

template <class T>
Var mean(Tape<T>& tp, Var x) {
  const T n = static_cast<T>(tp.value(x).size());
  return scale(tp, sum(tp, x), T{1} / n);
}

/// Σ x², used for the L2 penalty.
template <class T>
Var sum_squares(Tape<T>& tp, Var x) {
  T acc{0};
  for (auto v : tp.value(x).data()) acc += v * v;
  return tp.record(Tensor<T>::scalar(acc), {x}, [x](Tape<T>& t, std::span<const T> g) {
    const auto& xv = t.value(x);
    auto d = t.grad_accumulator(x);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += T{2} * xv[i] * g[0];
  });
}

/// (1/n) Σ w_i x_i over a 1-D x with constant weights.
template <class T>
Var weighted_mean(Tape<T>& tp, Var x, std::vector<T> w) {
  const auto& xv = tp.value(x);
  if (xv.size() != w.size()) throw DimensionError("weighted_mean: weight count does not match " + shape_str(xv.shape()));
  T acc{0};
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * xv[i];
  const T n = static_cast<T>(w.size());
  return tp.record(Tensor<T>::scalar(acc / n), {x}, [x, w = std::move(w), n](Tape<T>& t, std::span<const T> g) {
    auto d = t.grad_accumulator(x);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0] * w[i] / n;
  });
}

namespace detail {

// Maps each flat index of `s` to its flat index after dropping `axes`.
inline std::vector<std::size_t> reduce_index_map(const Shape& s, const std::vector<std::size_t>& axes, Shape& out_shape) {
  std::vector<bool> drop(s.size(), false);
  for (auto a : axes) {
    if (a >= s.size()) throw DimensionError("reduction axis " + std::to_string(a) + " out of range for " + shape_str(s));
    drop[a] = true;
  }
  out_shape.clear();
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!drop[i]) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  const std::size_t n = shape_size(s);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t f = 0; f < n; ++f) {
    std::size_t o = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (!drop[i]) o = o * s[i] + idx[i];
    map[f] = o;
    for (std::size_t i = s.size(); i-- > 0;) {
      if (++idx[i] < s[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}

}  // namespace detail

/// Mean over the given axes (dropped from the output shape).
template <class T>
Var reduce_mean(Tape<T>& tp, Var x, std::vector<std::size_t> axes) {
  const auto& xv = tp.value(x);
  Shape os;
  auto map = detail::reduce_index_map(xv.shape(), axes, os);
  Tensor<T> out(os);
  const T count = static_cast<T>(xv.size() / out.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[map[i]] += xv[i];
  for (auto& v : out.data()) v /= count;
  return tp.record(std::move(out), {x}, [x, map = std::move(map), count](Tape<T>& t, std::span<const T> g) {
    auto d = t.grad_accumulator(x);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[map[i]] / count;
  });
}

/// Max over the given axes; gradient flows to the first maximal element.
template <class T>
Var reduce_max(Tape<T>& tp, Var x, std::vector<std::size_t> axes) {
  const auto& xv = tp.value(x);
  Shape os;
  auto map = detail::reduce_index_map(xv.shape(), axes, os);
  Tensor<T> out(os, -std::numeric_limits<T>::infinity());
  std::vector<std::size_t> arg(out.size(), 0);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (xv[i] > out[map[i]]) {
      out[map[i]] = xv[i];
      arg[map[i]] = i;
    }
  }
  if (tp.tracking_branches())
    for (auto a : arg) tp.note_branch(a);
  return tp.record(std::move(out), {x}, [x, arg = std::move(arg)](Tape<T>& t, std::span<const T> g) {
    auto d = t.grad_accumulator(x);
    for (std::size_t o = 0; o < arg.size(); ++o) d[arg[o]] += g[o];
  });
}

// ---------------------------------------------------------------- layout

template <class T>
Var reshape(Tape<T>& tp, Var x, Shape s) {
  Tensor<T> out = tp.value(x).reshaped(std::move(s));
  return tp.record(std::move(out), {x}, [x](Tape<T>& t, std::span<const T> g) {
    auto d = t.grad_accumulator(x);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
  });
}

/// Axis permutation: output axis i is input axis perm[i].
template <class T>
Var permute(Tape<T>& tp, Var x, std::vector<std::size_t> perm) {
  const auto& xv = tp.value(x);
  const Shape& s = xv.shape();
  if (perm.size() != s.size()) throw DimensionError("permute: rank mismatch for " + shape_str(s));
  Shape os(s.size());
  std::vector<std::size_t> in_stride(s.size(), 1);
  for (std::size_t i = s.size() - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * s[i + 1];
  std::vector<bool> seen(s.size(), false);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= s.size() || seen[perm[i]]) throw DimensionError("permute: invalid permutation");
    seen[perm[i]] = true;
    os[i] = s[perm[i]];
  }
  // src[f_out] = flat input index for output position f_out.
  std::vector<std::size_t> src(xv.size());
  std::vector<std::size_t> idx(os.size(), 0);
  for (std::size_t f = 0; f < src.size(); ++f) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < os.size(); ++i) off += idx[i] * in_stride[perm[i]];
    src[f] = off;
    for (std::size_t i = os.size(); i-- > 0;) {
      if (++idx[i] < os[i]) break;
      idx[i] = 0;
    }
  }
  Tensor<T> out(os);
  for (std::size_t f = 0; f < src.size(); ++f) out[f] = xv[src[f]];
  return tp.record(std::move(out), {x}, [x, src = std::move(src)](Tape<T>& t, std::span<const T> g) {
    auto d = t.grad_accumulator(x);
    for (std::size_t f = 0; f < src.size(); ++f) d[src[f]] += g[f];
  });
}

/// Concatenation along `axis`; every other dimension must agree.
template <class T>
Var concat(Tape<T>& tp, Var a, Var b, std::size_t axis) {
  const auto& av = tp.value(a);
  const auto& bv = tp.value(b);
  if (av.ndim() != bv.ndim()) throw DimensionError("concat: rank mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  for (std::size_t i = 0; i < av.ndim(); ++i) {
    if (i != axis && av.dim(i) != bv.dim(i)) {
      throw DimensionError("concat: axis " + std::to_string(i) + " differs (" + std::to_string(av.dim(i)) + " vs " +
                           std::to_string(bv.dim(i)) + ")");
    }
  }
  auto sa = detail::split_axis(av.shape(), axis);
  auto sb = detail::split_axis(bv.shape(), axis);
  Shape os = av.shape();
  os[axis] += bv.dim(axis);
  Tensor<T> out(os);
  const std::size_t ra = sa.n * sa.inner, rb = sb.n * sb.inner;
  for (std::size_t o = 0; o < sa.outer; ++o) {
    std::copy_n(av.data().begin() + o * ra, ra, out.data().begin() + o * (ra + rb));
    std::copy_n(bv.data().begin() + o * rb, rb, out.data().begin() + o * (ra + rb) + ra);
  }
  return tp.record(std::move(out), {a, b}, [a, b, ra, rb, outer = sa.outer](Tape<T>& t, std::span<const T> g) {
    auto da = t.grad_accumulator(a);
    auto db = t.grad_accumulator(b);
    for (std::size_t o = 0; o < outer; ++o) {
      if (!da.empty())
        for (std::size_t i = 0; i < ra; ++i) da[o * ra + i] += g[o * (ra + rb) + i];
      if (!db.empty())
        for (std::size_t i = 0; i < rb; ++i) db[o * rb + i] += g[o * (ra + rb) + ra + i];
    }
  });
}

/// Keeps every `step`-th slice along `axis`, starting at index 0.
template <class T>
Var subsample(Tape<T>& tp, Var x, std::size_t axis, std::size_t step) {
  const auto& xv = tp.value(x);
  auto s = detail::split_axis(xv.shape(), axis);
  if (step == 0) throw DimensionError("subsample: step must be positive");
  Shape os = xv.shape();
  os[axis] = (s.n + step - 1) / step;
  Tensor<T> out(os);
  const std::size_t m = os[axis];
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < m; ++j)
      std::copy_n(xv.data().begin() + (o * s.n + j * step) * s.inner, s.inner, out.data().begin() + (o * m + j) * s.inner);
  return tp.record(std::move(out), {x}, [x, s, m, step](Tape<T>& t, std::span<const T> g) {
    auto d = t.grad_accumulator(x);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < s.inner; ++i) d[(o * s.n + j * step) * s.inner + i] += g[(o * m + j) * s.inner + i];
  });
}

// ---------------------------------------------------------------- linear algebra

template <class T>
Var matmul(Tape<T>& tp, Var a, Var b) {
  const auto& av = tp.value(a);
  const auto& bv = tp.value(b);
  if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const std::size_t M = av.dim(0), K = av.dim(1), N = bv.dim(1);
  Tensor<T> out(Shape{M, N});
  kernels::gemm_nn(M, N, K, av.data().data(), bv.data().data(), out.data().data());
  return tp.record(std::move(out), {a, b}, [a, b, M, N, K](Tape<T>& t, std::span<const T> g) {
    auto da = t.grad_accumulator(a);
    if (!da.empty()) kernels::gemm_nt(M, K, N, g.data(), t.value(b).data().data(), da.data());
    auto db = t.grad_accumulator(b);
    if (!db.empty()) kernels::gemm_tn(K, N, M, t.value(a).data().data(), g.data(), db.data());
  });
}

/// Batched product over a leading group axis: [G x M x K] * [G x K x N],
/// or [G x M x K] * [G x N x K]^T when transpose_b is set.
template <class T>
Var bmm(Tape<T>& tp, Var a, Var b, bool transpose_b = false) {
  const auto& av = tp.value(a);
  const auto& bv = tp.value(b);
  if (av.ndim() != 3 || bv.ndim() != 3 || av.dim(0) != bv.dim(0) ||
      av.dim(2) != (transpose_b ? bv.dim(2) : bv.dim(1))) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const std::size_t G = av.dim(0), M = av.dim(1), K = av.dim(2), N = transpose_b ? bv.dim(1) : bv.dim(2);
  Tensor<T> out(Shape{G, M, N});
  for (std::size_t gi = 0; gi < G; ++gi) {
    const T* A = av.data().data() + gi * M * K;
    const T* B = bv.data().data() + gi * K * N;
    T* C = out.data().data() + gi * M * N;
    if (transpose_b) kernels::gemm_nt(M, N, K, A, B, C);
    else kernels::gemm_nn(M, N, K, A, B, C);
  }
  return tp.record(std::move(out), {a, b}, [a, b, G, M, N, K, transpose_b](Tape<T>& t, std::span<const T> g) {
    auto da = t.grad_accumulator(a);
    auto db = t.grad_accumulator(b);
    const T* Av = t.value(a).data().data();
    const T* Bv = t.value(b).data().data();
    for (std::size_t gi = 0; gi < G; ++gi) {
      const T* G_ = g.data() + gi * M * N;
      const T* A = Av + gi * M * K;
      const T* B = Bv + gi * K * N;
      if (transpose_b) {
        if (!da.empty()) kernels::gemm_nn(M, K, N, G_, B, da.data() + gi * M * K);
        if (!db.empty()) kernels::gemm_tn(N, K, M, G_, A, db.data() + gi * K * N);
      } else {
        if (!da.empty()) kernels::gemm_nt(M, K, N, G_, B, da.data() + gi * M * K);
        if (!db.empty()) kernels::gemm_tn(K, N, M, A, G_, db.data() + gi * K * N);
      }
    }
  });
}

/// x[... x Din] * W[Din x Dout] + b[Dout].
template <class T>
Var linear(Tape<T>& tp, Var x, Var W, Var b) {
  const auto& xv = tp.value(x);
  const auto& wv = tp.value(W);
  const auto& bv = tp.value(b);
  if (wv.ndim() != 2 || xv.shape().back() != wv.dim(0) || bv.ndim() != 1 || bv.dim(0) != wv.dim(1)) {
    throw DimensionError("linear: incompatible shapes x" + shape_str(xv.shape()) + " W" + shape_str(wv.shape()) +
                         " b" + shape_str(bv.shape()));
  }
  const std::size_t Din = wv.dim(0), Dout = wv.dim(1), N = xv.size() / Din;
  Shape os = xv.shape();
  os.back() = Dout;
  Tensor<T> out(os);
  for (std::size_t r = 0; r < N; ++r) std::copy(bv.data().begin(), bv.data().end(), out.data().begin() + r * Dout);
  kernels::gemm_nn(N, Dout, Din, xv.data().data(), wv.data().data(), out.data().data());
  return tp.record(std::move(out), {x, W, b}, [x, W, b, N, Din, Dout](Tape<T>& t, std::span<const T> g) {
    auto dx = t.grad_accumulator(x);
    if (!dx.empty()) kernels::gemm_nt(N, Din, Dout, g.data(), t.value(W).data().data(), dx.data());
    auto dW = t.grad_accumulator(W);
    if (!dW.empty()) kernels::gemm_tn(Din, Dout, N, t.value(x).data().data(), g.data(), dW.data());
    auto db = t.grad_accumulator(b);
    for (std::size_t r = 0; r < N && !db.empty(); ++r)
      for (std::size_t j = 0; j < Dout; ++j) db[j] += g[r * Dout + j];
  });
}

// ---------------------------------------------------------------- normalisation

/// Softmax along `axis`, stabilised by max subtraction.
template <class T>
Var softmax(Tape<T>& tp, Var x, std::size_t axis) {
  const auto& xv = tp.value(x);
  const auto s = detail::split_axis(xv.shape(), axis);
  Tensor<T> out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      T z{0};
      for (std::size_t j = 0; j < s.n; ++j) z += (out[base + j * s.inner] = std::exp(xv[base + j * s.inner] - mx));
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= z;
    }
  const Var self{tp.size()};
  return tp.record(std::move(out), {x}, [x, s, self](Tape<T>& t, std::span<const T> g) {
    const auto& p = t.value(self);
    auto d = t.grad_accumulator(x);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        T dot{0};
        for (std::size_t j = 0; j < s.n; ++j) dot += g[base + j * s.inner] * p[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) d[base + j * s.inner] += p[base + j * s.inner] * (g[base + j * s.inner] - dot);
      }
  });
}

/// Per-row standardisation over the last axis followed by gain/bias.
template <class T>
Var layer_norm(Tape<T>& tp, Var x, Var gain, Var bias, T eps = T(1e-5)) {
  const auto& xv = tp.value(x);
  const std::size_t D = xv.shape().back();
  if (tp.value(gain).size() != D || tp.value(bias).size() != D) {
    throw DimensionError("layer_norm: gain/bias length must equal last dim of " + shape_str(xv.shape()));
  }
  const std::size_t R = xv.size() / D;
  Tensor<T> out(xv.shape());
  std::vector<T> xhat(xv.size()), inv_std(R);
  const auto& gv = tp.value(gain);
  const auto& bv = tp.value(bias);
  for (std::size_t r = 0; r < R; ++r) {
    T mu{0};
    for (std::size_t j = 0; j < D; ++j) mu += xv[r * D + j];
    mu /= T(D);
    T var{0};
    for (std::size_t j = 0; j < D; ++j) var += (xv[r * D + j] - mu) * (xv[r * D + j] - mu);
    var /= T(D);
    inv_std[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < D; ++j) {
      xhat[r * D + j] = (xv[r * D + j] - mu) * inv_std[r];
      out[r * D + j] = gv[j] * xhat[r * D + j] + bv[j];
    }
  }
  return tp.record(std::move(out), {x, gain, bias},
                   [x, gain, bias, R, D, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, std::span<const T> g) {
                     const auto& gv = t.value(gain);
                     auto dx = t.grad_accumulator(x);
                     auto dg = t.grad_accumulator(gain);
                     auto db = t.grad_accumulator(bias);
                     for (std::size_t r = 0; r < R; ++r) {
                       T m1{0}, m2{0};
                       for (std::size_t j = 0; j < D; ++j) {
                         const T dxh = g[r * D + j] * gv[j];
                         m1 += dxh;
                         m2 += dxh * xhat[r * D + j];
                         if (!dg.empty()) dg[j] += g[r * D + j] * xhat[r * D + j];
                         if (!db.empty()) db[j] += g[r * D + j];
                       }
                       m1 /= T(D);
                       m2 /= T(D);
                       if (dx.empty()) continue;
                       for (std::size_t j = 0; j < D; ++j) {
                         const T dxh = g[r * D + j] * gv[j];
                         dx[r * D + j] += inv_std[r] * (dxh - m1 - xhat[r * D + j] * m2);
                       }
                     }
                   });
}

// ---------------------------------------------------------------- losses

/// Per-sample cross-entropy from logits [B x C] (log-sum-exp internally).
template <class T>
Var cross_entropy_logits(Tape<T>& tp, Var logits, const std::vector<int>& targets) {
  const auto& lv = tp.value(logits);
  if (lv.ndim() != 2 || lv.dim(0) != targets.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(lv.shape()) + " vs " + std::to_string(targets.size()) + " targets");
  }
  const std::size_t B = lv.dim(0), C = lv.dim(1);
  Tensor<T> out(Shape{B});
  std::vector<T> probs(B * C);
  for (std::size_t i = 0; i < B; ++i) {
    if (targets[i] < 0 || std::size_t(targets[i]) >= C) throw InputError("cross_entropy: target index out of range");
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < C; ++j) mx = std::max(mx, lv[i * C + j]);
    T z{0};
    for (std::size_t j = 0; j < C; ++j) z += (probs[i * C + j] = std::exp(lv[i * C + j] - mx));
    for (std::size_t j = 0; j < C; ++j) probs[i * C + j] /= z;
    out[i] = -(lv[i * C + std::size_t(targets[i])] - mx - std::log(z));
  }
  return tp.record(std::move(out), {logits}, [logits, targets, probs = std::move(probs), B, C](Tape<T>& t, std::span<const T> g) {
    auto d = t.grad_accumulator(logits);
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < C; ++j)
        d[i * C + j] += g[i] * (probs[i * C + j] - (int(j) == targets[i] ? T{1} : T{0}));
  });
}

// ---------------------------------------------------------------- convolution

/// 3-D convolution over B x C x T x H x W with kernel C' x C x kt x kh x kw
/// and per-output-channel bias.
template <class T>
Var conv3d(Tape<T>& tp, Var x, Var w, Var bias, kernels::Triple stride, kernels::Triple pad) {
  const auto g = kernels::Conv3dGeom::make(tp.shape(x), tp.shape(w), stride, pad);
  if (tp.value(bias).size() != g.out_ch) throw DimensionError("conv3d: bias length must equal output channels");
  Tensor<T> out(Shape{g.batch, g.out_ch, g.out[0], g.out[1], g.out[2]});
  kernels::conv3d_gemm(g, tp.value(x).data().data(), tp.value(w).data().data(), tp.value(bias).data().data(),
                       out.data().data());
  return tp.record(std::move(out), {x, w, bias}, [x, w, bias, g](Tape<T>& t, std::span<const T> gr) {
    auto dx = t.grad_accumulator(x);
    auto dw = t.grad_accumulator(w);
    auto db = t.grad_accumulator(bias);
    kernels::conv3d_gemm_backward(g, t.value(x).data().data(), t.value(w).data().data(), gr.data(),
                                  dx.empty() ? nullptr : dx.data(), dw.empty() ? nullptr : dw.data(),
                                  db.empty() ? nullptr : db.data());
  });
}

}  // namespace ugest
