#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

#include "ugest/autodiff.hpp"
#include "ugest/rng.hpp"

namespace ugest {

using LossFn = std::function<Var(Tape<double>&)>;

struct GradCheckOptions {
  double eps = 1e-4;
  /// Check at most this many coordinates (seeded subsample); 0 = all.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose +-eps probes changed a relu/max branch: the central
  /// difference straddles a kink there and says nothing about the gradient.
  std::size_t skipped_kinks = 0;
};

/// Max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
/// for d loss / d target, with the numeric side from central differences.
/// `loss` must bind `target` on the tape it is given (Tape::param).
inline GradCheckReport gradient_check_report(const LossFn& loss, Tensor<double>& target, const GradCheckOptions& opt = {}) {
  const bool had_rg = target.requires_grad;
  target.requires_grad = true;
  target.grad.reset();
  std::uint64_t base_sig = 0;
  {
    Tape<double> tape;
    tape.track_branches(true);
    Var l = loss(tape);
    base_sig = tape.branch_signature();
    tape.backward(l);
  }
  std::vector<double> analytic = target.grad ? *target.grad : std::vector<double>(target.size(), 0.0);
  target.grad.reset();
  target.requires_grad = had_rg;

  std::vector<std::size_t> coords(target.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (opt.max_coords && coords.size() > opt.max_coords) {
    Rng rng(opt.seed);
    rng.shuffle(coords.begin(), coords.end());
    coords.resize(opt.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  auto eval = [&](bool& same_branches) {
    Tape<double> tape;
    tape.track_branches(true);
    const double v = tape.value(loss(tape))[0];
    same_branches = same_branches && tape.branch_signature() == base_sig;
    return v;
  };
  GradCheckReport rep;
  for (auto i : coords) {
    const double orig = target[i];
    bool smooth = true;
    target[i] = orig + opt.eps;
    const double fp = eval(smooth);
    target[i] = orig - opt.eps;
    const double fm = eval(smooth);
    target[i] = orig;
    if (!smooth) {
      ++rep.skipped_kinks;
      continue;
    }
    ++rep.checked;
    const double numeric = (fp - fm) / (2.0 * opt.eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    rep.max_rel_error = std::max(rep.max_rel_error, err);
  }
  return rep;
}

inline double gradient_check(const LossFn& loss, Tensor<double>& target, const GradCheckOptions& opt = {}) {
  return gradient_check_report(loss, target, opt).max_rel_error;
}

/// Convenience form for a function of a single input tensor x.
inline GradCheckReport gradient_check_report(const std::function<Var(Tape<double>&, Var)>& f, Tensor<double> x,
                                             const GradCheckOptions& opt = {}) {
  return gradient_check_report([&](Tape<double>& tp) { return f(tp, tp.param(x)); }, x, opt);
}

inline double gradient_check(const std::function<Var(Tape<double>&, Var)>& f, Tensor<double> x, const GradCheckOptions& opt = {}) {
  return gradient_check_report(f, std::move(x), opt).max_rel_error;
}

}  // namespace ugest
