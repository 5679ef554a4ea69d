#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fracergo/coupling.hpp"
#include "fracergo/parallel.hpp"
#include "fracergo/stats.hpp"

namespace fracergo::metrics {

// ---------------------------------------------------------------------------
// Decay curves: d(t) = E |X_t - Y_t|^2 for a synchronous pair with Y drawn by
// the stationary warm start sharing the Wiener past.

struct DecayCurve {
  std::vector<double> ts;
  std::vector<double> mean_sq;
  std::vector<double> ci_lo, ci_hi;
  std::size_t n = 0;
  std::string drift_name, kernel_name;
};

struct X0Law {
  bool stationary = false;       // second warm-started leg instead of a point
  std::vector<double> point;     // used when !stationary
  double stationary_offset = 1.0;  // initial offset of the second burn-in leg
};

struct DecayOptions {
  double t_burn = 50.0;
  double step = 1e-2;
  int n_threads = 0;
  uint64_t bootstrap_seed = 10101;
};

inline DecayCurve decay_curve(const dynamics::DriftSpec& drift, const dynamics::Sigma& sigma,
                              const kernels::KernelSpec& kernel, const X0Law& x0_law,
                              const std::vector<double>& t_grid, std::size_t n, uint64_t seed,
                              const DecayOptions& opt = {}) {
  if (t_grid.empty() || n == 0) throw std::invalid_argument("decay_curve: empty grid or n == 0");
  const int dim = drift.dim;
  const double T = *std::max_element(t_grid.begin(), t_grid.end());
  const noise::SynthPlan plan = noise::make_synth_plan(kernel, opt.t_burn + T + opt.step, opt.step);
  const std::size_t i_burn = static_cast<std::size_t>(std::llround(opt.t_burn / opt.step));

  std::vector<std::vector<double>> sq(t_grid.size(), std::vector<double>(n, 0.0));
  parallel::parallel_for(
      n,
      [&](std::size_t r) {
        const auto path = noise::synthesize_noise(plan, rng::mix3(seed, 71, r), dim);
        std::vector<double> y0(dim, 0.0);
        const auto ty = dynamics::integrate(drift, sigma, y0, path);
        dynamics::Trajectory tx;
        if (x0_law.stationary) {
          std::vector<double> x_init(dim, 0.0);
          x_init[0] = x0_law.stationary_offset;
          tx = dynamics::integrate(drift, sigma, x_init, path);
        } else {
          dynamics::IntegrateOptions iopt;
          iopt.start_index = i_burn;
          tx = dynamics::integrate(drift, sigma, x0_law.point, path, iopt);
        }
        const std::size_t x_off = x0_law.stationary ? i_burn : 0;
        for (std::size_t j = 0; j < t_grid.size(); ++j) {
          const std::size_t i = static_cast<std::size_t>(std::llround(t_grid[j] / opt.step));
          double g2 = 0.0;
          for (int d = 0; d < dim; ++d) {
            const double diff = tx.at(x_off + i)[d] - ty.at(i_burn + i)[d];
            g2 += diff * diff;
          }
          sq[j][r] = g2;
        }
      },
      opt.n_threads);

  DecayCurve curve;
  curve.ts = t_grid;
  curve.n = n;
  curve.drift_name = drift.name;
  for (std::size_t j = 0; j < t_grid.size(); ++j) {
    const auto ci = stats::bootstrap_mean_ci(sq[j], rng::mix3(opt.bootstrap_seed, 1, j));
    curve.mean_sq.push_back(ci.mean);
    curve.ci_lo.push_back(ci.lo);
    curve.ci_hi.push_back(ci.hi);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Sub-exponential rate fit: log d(t) = log c - t^gamma / c by nonlinear least
// squares with a grid-seeded gamma and golden-section refinement. The fit is
// deterministic given the curve.

struct RateFit {
  double gamma = 0.0;
  double c = 1.0;
  double r2 = 0.0;
  double t_min = 0.0, t_max = 0.0;
};

namespace detail {

inline double fit_sse(std::span<const double> ts, std::span<const double> logd, double gamma,
                      double c) {
  double s = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double model = std::log(c) - std::pow(ts[i], gamma) / c;
    s += (logd[i] - model) * (logd[i] - model);
  }
  return s;
}

inline double golden_c(std::span<const double> ts, std::span<const double> logd, double gamma) {
  double lo = std::log(1e-4), hi = std::log(1e4);
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
  double fa = fit_sse(ts, logd, gamma, std::exp(a));
  double fb = fit_sse(ts, logd, gamma, std::exp(b));
  for (int it = 0; it < 80; ++it) {
    if (fa < fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - gr * (hi - lo);
      fa = fit_sse(ts, logd, gamma, std::exp(a));
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + gr * (hi - lo);
      fb = fit_sse(ts, logd, gamma, std::exp(b));
    }
  }
  return std::exp(0.5 * (lo + hi));
}

}  // namespace detail

inline RateFit fit_subexponential_xy(std::span<const double> ts, std::span<const double> values) {
  if (ts.size() < 3) throw std::invalid_argument("fit: need at least 3 points");
  std::vector<double> logd(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0))
      throw std::invalid_argument("fit: non-positive values in window; shrink the window");
    logd[i] = std::log(values[i]);
  }
  double best_g = 0.5, best_c = 1.0, best_sse = std::numeric_limits<double>::infinity();
  for (double g = 0.05; g <= 1.0001; g += 0.05) {
    const double c = detail::golden_c(ts, logd, g);
    const double sse = detail::fit_sse(ts, logd, g, c);
    if (sse < best_sse) {
      best_sse = sse;
      best_g = g;
      best_c = c;
    }
  }
  // local refinement of gamma on a shrinking bracket
  double lo = std::max(0.01, best_g - 0.05), hi = std::min(1.0, best_g + 0.05);
  for (int it = 0; it < 60; ++it) {
    const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
    const double f1 = detail::fit_sse(ts, logd, m1, detail::golden_c(ts, logd, m1));
    const double f2 = detail::fit_sse(ts, logd, m2, detail::golden_c(ts, logd, m2));
    if (f1 < f2)
      hi = m2;
    else
      lo = m1;
  }
  RateFit fit;
  fit.gamma = 0.5 * (lo + hi);
  fit.c = detail::golden_c(ts, logd, fit.gamma);
  fit.t_min = ts.front();
  fit.t_max = ts.back();
  // R^2 on the log scale
  double sm = 0.0;
  for (double v : logd) sm += v;
  sm /= static_cast<double>(logd.size());
  double ss_tot = 0.0;
  for (double v : logd) ss_tot += (v - sm) * (v - sm);
  const double ss_res = detail::fit_sse(ts, logd, fit.gamma, fit.c);
  fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

struct FitWindow {
  double t_min = 2.0;  // excludes the pre-asymptotic regime
  double floor_sigmas = 3.0;
};

inline RateFit fit_subexponential(const DecayCurve& curve, const FitWindow& window = {}) {
  std::vector<double> ts, vs;
  for (std::size_t i = 0; i < curve.ts.size(); ++i) {
    if (curve.ts[i] < window.t_min) continue;
    const double floor = window.floor_sigmas * 0.5 * (curve.ci_hi[i] - curve.ci_lo[i]);
    if (!(curve.mean_sq[i] > floor)) break;  // stop before the Monte Carlo floor
    ts.push_back(curve.ts[i]);
    vs.push_back(curve.mean_sq[i]);
  }
  return fit_subexponential_xy(ts, vs);
}

// Bootstrap CI for the fitted gamma: refit on replica-resampled curves.
struct GammaCi {
  double gamma = 0.0;
  double lo = 0.0, hi = 0.0;
};

// ---------------------------------------------------------------------------
// The closed-form rate exponent gamma = 2 ae / (1 + 1/upsilon + 2 ae) with
// ae = alpha + 1/2 - eps; upsilon = +inf is allowed.

inline double gamma_exponent(double alpha, double eps, double upsilon) {
  if (!(eps > 0.0 && eps < alpha + 0.5))
    throw std::domain_error("gamma_exponent: eps must lie in (0, alpha + 1/2)");
  if (!(upsilon > 0.0)) throw std::domain_error("gamma_exponent: upsilon must be > 0");
  const double ae = alpha + 0.5 - eps;
  const double inv_ups = std::isinf(upsilon) ? 0.0 : 1.0 / upsilon;
  return 2.0 * ae / (1.0 + inv_ups + 2.0 * ae);
}

// ---------------------------------------------------------------------------
// One-dimensional W2 via sorted pairing (exact optimal transport on the line).

inline double wasserstein2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein2_1d: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  if (a.size() == b.size()) {
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
  }
  // quantile interpolation for unequal sizes
  const std::size_t m = std::max(a.size(), b.size());
  auto quant = [](const std::vector<double>& v, double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t i = static_cast<std::size_t>(pos);
    const double f = pos - static_cast<double>(i);
    return i + 1 < v.size() ? v[i] * (1.0 - f) + v[i + 1] * f : v.back();
  };
  for (std::size_t i = 0; i < m; ++i) {
    const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
    const double d = quant(a, q) - quant(b, q);
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(m));
}

// ---------------------------------------------------------------------------
// TV estimate from coupling-success indicators (failure frequency).

struct TvEstimate {
  double estimate = 0.0;
  double lo = 0.0, hi = 0.0;
  std::size_t n = 0;
};

inline TvEstimate tv_from_coupling(std::span<const char> success) {
  if (success.empty()) throw std::invalid_argument("tv_from_coupling: empty indicators");
  std::size_t failures = 0;
  for (char s : success)
    if (!s) ++failures;
  const auto ci = stats::wilson_ci(failures, success.size());
  return {ci.p_hat, ci.lo, ci.hi, success.size()};
}

}  // namespace fracergo::metrics
