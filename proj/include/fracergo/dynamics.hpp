#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fracergo/noise.hpp"
#include "fracergo/rng.hpp"
#include "fracergo/stats.hpp"

namespace fracergo::dynamics {

using DriftFn = std::function<void(std::span<const double>, std::span<double>)>;

// Drift field with its contraction certificate. (rbar, kbar) are filled by
// verify_c1; kappa/R describe the construction parameters of the built-ins.
struct DriftSpec {
  std::string name = "custom";
  int dim = 1;
  DriftFn b;
  double kappa = 0.0;
  double R = 0.0;
  int growth_N = 1;
  double lip = 0.0;  // Lipschitz constant on the sampling range (slack budgets)
  bool c1_i = false, c1_ii = false, c1_iii = false;
  double rbar = std::numeric_limits<double>::quiet_NaN();
  double kbar = std::numeric_limits<double>::quiet_NaN();

  void eval(std::span<const double> x, std::span<double> out) const { b(x, out); }
};

// b(x) = -kappa (|x| - R)_+ x/|x|, the negative gradient of the flat-bottomed
// potential U(x) = kappa (|x| - R)_+^2 / 2: monotone everywhere, strictly
// contractive outside a ball. R = 0 is the everywhere-contractive case.
inline DriftSpec make_flatbottom_drift(double R, double kappa, int dim = 1) {
  if (!(R >= 0.0)) throw std::invalid_argument("flat-bottom drift: R must be >= 0");
  if (!(kappa > 0.0)) throw std::invalid_argument("flat-bottom drift: kappa must be > 0");
  DriftSpec d;
  d.name = R == 0.0 ? "linear" : "flatbottom";
  d.dim = dim;
  d.kappa = kappa;
  d.R = R;
  d.growth_N = 1;
  d.lip = kappa;
  d.b = [R, kappa](std::span<const double> x, std::span<double> out) {
    double r2 = 0.0;
    for (double v : x) r2 += v * v;
    const double r = std::sqrt(r2);
    if (r <= R || r == 0.0) {
      for (auto& o : out) o = 0.0;
      return;
    }
    const double scale = -kappa * (r - R) / r;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = scale * x[i];
  };
  return d;
}

inline DriftSpec make_linear_drift(double kappa, int dim = 1) {
  return make_flatbottom_drift(0.0, kappa, dim);
}

// b(x) = x - x^3 componentwise: the negative control, violating (C1_i) near
// the origin.
inline DriftSpec make_doublewell_drift(int dim = 1) {
  DriftSpec d;
  d.name = "doublewell";
  d.dim = dim;
  d.growth_N = 3;
  d.lip = 26.0;  // sup |1 - 3x^2| on |x| <= 3
  d.b = [](std::span<const double> x, std::span<double> out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - x[i] * x[i] * x[i];
  };
  return d;
}

struct DriftParams {
  std::string family;  // "flatbottom" | "linear" | "doublewell"
  double R = 1.0;
  double kappa = 1.0;
  int dim = 1;
};

inline DriftSpec make_drift(const DriftParams& p) {
  if (p.family == "flatbottom") return make_flatbottom_drift(p.R, p.kappa, p.dim);
  if (p.family == "linear") return make_linear_drift(p.kappa, p.dim);
  if (p.family == "doublewell") return make_doublewell_drift(p.dim);
  throw std::domain_error("unknown drift family: " + p.family);
}

// Invertible diagonal diffusion matrix.
struct Sigma {
  std::vector<double> diag;

  static Sigma scalar(double s, int dim) {
    if (s == 0.0) throw std::invalid_argument("sigma must be invertible");
    return Sigma{std::vector<double>(dim, s)};
  }
  bool is_scalar() const {
    for (double v : diag)
      if (v != diag.front()) return false;
    return true;
  }
  double scalar_value() const {
    if (!is_scalar()) throw std::logic_error("sigma is not a scalar multiple of the identity");
    return diag.front();
  }
  void validate() const {
    for (double v : diag)
      if (v == 0.0 || !std::isfinite(v)) throw std::invalid_argument("sigma must be invertible");
  }
};

// ---------------------------------------------------------------------------
// verify_c1: pair-sampled certification of monotonicity and estimation of the
// (rbar, kbar) constants (smallest grid radius such that |x| >= rbar forces
// <x-y, b(x)-b(y)> <= -kbar |x-y|^2 over all sampled pairs).

struct WitnessPair {
  std::vector<double> x, y;
  double value = 0.0;
};

struct C1Report {
  bool c1_i_pass = false;
  WitnessPair worst;  // maximiser of <x-y, b(x)-b(y)>
  double rbar = std::numeric_limits<double>::quiet_NaN();
  double kbar = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_pairs = 0;
};

namespace detail {

inline std::vector<double> sample_in_ball(int dim, double radius, uint64_t seed, uint64_t idx) {
  std::vector<double> x(dim);
  double n2 = 0.0;
  for (int d = 0; d < dim; ++d) {
    x[d] = rng::normal(seed, 11, idx * dim + d);
    n2 += x[d] * x[d];
  }
  const double u = rng::uniform01(seed, 12, idx);
  const double r = radius * std::pow(u, 1.0 / dim);
  const double scale = n2 > 0.0 ? r / std::sqrt(n2) : 0.0;
  for (auto& v : x) v *= scale;
  return x;
}

inline double pair_form(const DriftSpec& drift, std::span<const double> x,
                        std::span<const double> y, std::vector<double>& bx,
                        std::vector<double>& by) {
  drift.eval(x, bx);
  drift.eval(y, by);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (bx[i] - by[i]);
  return s;
}

inline double norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

}  // namespace detail

inline C1Report verify_c1(const DriftSpec& drift, std::size_t n_pairs, double radius,
                          uint64_t seed = 1234, double tol = 1e-9) {
  C1Report rep;
  rep.n_pairs = n_pairs;
  const int dim = drift.dim;
  std::vector<std::vector<double>> xs, ys;
  xs.reserve(n_pairs + 8);
  ys.reserve(n_pairs + 8);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    xs.push_back(detail::sample_in_ball(dim, radius, seed, 2 * i));
    ys.push_back(detail::sample_in_ball(dim, radius, seed, 2 * i + 1));
  }
  // boundary-stratified pairs around the flat region and the deterministic
  // probe used by the multi-well negative control
  if (drift.R > 0.0) {
    for (double f : {0.5, 0.9, 1.1, 2.0}) {
      std::vector<double> x(dim, 0.0), y(dim, 0.0);
      x[0] = f * drift.R;
      y[0] = -f * drift.R;
      xs.push_back(x);
      ys.push_back(y);
    }
  }
  {
    std::vector<double> x(dim, 0.0), y(dim, 0.0);
    x[0] = 0.5;
    y[0] = -0.5;
    xs.push_back(x);
    ys.push_back(y);
  }

  std::vector<double> bx(dim), by(dim);
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double v = detail::pair_form(drift, xs[i], ys[i], bx, by);
    if (v > worst) {
      worst = v;
      rep.worst = {xs[i], ys[i], v};
    }
  }
  rep.c1_i_pass = worst <= tol;

  // (rbar, kbar): scan a radius grid; kappa-bar at a radius is the infimum of
  // -<x-y,b(x)-b(y)>/|x-y|^2 over oriented sampled pairs with |x| >= rbar.
  const int n_grid = 20;
  for (int gi = 0; gi < n_grid; ++gi) {
    const double rb = radius * static_cast<double>(gi) / n_grid;
    double kb = std::numeric_limits<double>::infinity();
    std::size_t used = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      for (int orient = 0; orient < 2; ++orient) {
        const auto& x = orient == 0 ? xs[i] : ys[i];
        const auto& y = orient == 0 ? ys[i] : xs[i];
        if (detail::norm(x) < rb) continue;
        double gap2 = 0.0;
        for (int d = 0; d < dim; ++d) gap2 += (x[d] - y[d]) * (x[d] - y[d]);
        if (gap2 < 1e-16) continue;
        kb = std::min(kb, -detail::pair_form(drift, x, y, bx, by) / gap2);
        ++used;
      }
    }
    if (used >= 20 && kb > 1e-6 && std::isfinite(kb)) {
      rep.rbar = rb;
      rep.kbar = kb;
      break;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Trajectories: explicit first-order scheme
//   X_{n+1} = X_n + b(X_n) dt + sigma (G_{n+1} - G_n) + extra(t_n) dt.

struct Trajectory {
  std::vector<double> times;
  std::vector<double> states;  // time-major: states[n*dim + d]
  int dim = 1;

  std::span<const double> at(std::size_t n) const {
    return std::span<const double>(states.data() + n * dim, dim);
  }
  std::size_t n_points() const { return times.size(); }
};

struct IntegrateOptions {
  std::function<void(double, std::span<double>)> extra_rate;  // additive drift rate(t)
  std::size_t start_index = 0;  // noise grid index at which the state starts
  std::size_t n_steps = 0;      // 0: run to the end of the noise grid
};

inline Trajectory integrate(const DriftSpec& drift, const Sigma& sigma,
                            std::span<const double> x0, const noise::NoisePath& path,
                            const IntegrateOptions& opt = {}) {
  sigma.validate();
  const int dim = drift.dim;
  if (static_cast<int>(sigma.diag.size()) != dim || static_cast<int>(x0.size()) != dim ||
      path.dim != dim)
    throw std::invalid_argument("integrate: dimension mismatch");
  const std::size_t last = path.steps();
  if (opt.start_index >= last) throw std::invalid_argument("integrate: start beyond noise grid");
  const std::size_t n_steps =
      opt.n_steps == 0 ? last - opt.start_index
                       : std::min(opt.n_steps, last - opt.start_index);

  Trajectory traj;
  traj.dim = dim;
  traj.times.resize(n_steps + 1);
  traj.states.resize((n_steps + 1) * dim);
  std::vector<double> x(x0.begin(), x0.end()), bx(dim), extra(dim, 0.0);
  traj.times[0] = path.grid[opt.start_index];
  std::copy(x.begin(), x.end(), traj.states.begin());
  for (std::size_t s = 0; s < n_steps; ++s) {
    const std::size_t gi = opt.start_index + s;
    const double t = path.grid[gi];
    const double dt = path.grid[gi + 1] - path.grid[gi];
    drift.eval(x, bx);
    if (opt.extra_rate) opt.extra_rate(t, extra);
    for (int d = 0; d < dim; ++d) {
      x[d] += bx[d] * dt + sigma.diag[d] * path.increment(d, gi) +
              (opt.extra_rate ? extra[d] * dt : 0.0);
      if (!std::isfinite(x[d]))
        throw std::runtime_error("integrate: state blew up at t = " + std::to_string(t + dt));
    }
    traj.times[s + 1] = path.grid[gi + 1];
    std::copy(x.begin(), x.end(), traj.states.begin() + (s + 1) * dim);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Comparison probe against the unit Ornstein-Uhlenbeck solution driven by the
// same noise: sup_t |x(t)-y(t)|^2 must be dominated by the exponentially
// weighted moment functional of y, with a constant fitted on an independent
// batch and zero violations on the check batch.

struct OuReport {
  double fitted_c = 0.0;
  std::size_t violations = 0;
  std::size_t n_fit = 0, n_check = 0;
  double max_ratio_check = 0.0;
};

inline OuReport ou_comparison_probe(const DriftSpec& drift, const kernels::KernelSpec& kernel,
                                    std::span<const double> x0, double T, std::size_t n,
                                    uint64_t seed, double step = 1e-2) {
  const int dim = drift.dim;
  const DriftSpec ou = make_linear_drift(1.0, dim);
  const Sigma sig = Sigma::scalar(1.0, dim);
  const noise::SynthPlan plan = noise::make_synth_plan(kernel, T, step);
  const int twoN = 2 * drift.growth_N;

  auto ratio_for = [&](uint64_t rep_seed) {
    const noise::NoisePath path = noise::synthesize_noise(plan, rep_seed, dim);
    const Trajectory tx = integrate(drift, sig, x0, path);
    const Trajectory ty = integrate(ou, sig, x0, path);
    // F(t) = int_0^t e^{(s-t)/2} (1 + |y(s)|^{2N}) ds, rolled forward
    double f = 0.0, worst = 0.0;
    for (std::size_t i = 1; i < tx.n_points(); ++i) {
      const double dt = tx.times[i] - tx.times[i - 1];
      double y2 = 0.0, d2 = 0.0;
      for (int d = 0; d < dim; ++d) {
        y2 += ty.at(i)[d] * ty.at(i)[d];
        const double diff = tx.at(i)[d] - ty.at(i)[d];
        d2 += diff * diff;
      }
      f = std::exp(-0.5 * dt) * f + dt * (1.0 + std::pow(y2, twoN / 2.0));
      if (f > 0.0) worst = std::max(worst, d2 / f);
    }
    return worst;
  };

  OuReport rep;
  rep.n_fit = n;
  rep.n_check = n;
  double cmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) cmax = std::max(cmax, ratio_for(rng::mix3(seed, 21, i)));
  rep.fitted_c = 1.5 * cmax;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ratio_for(rng::mix3(seed, 22, i));
    rep.max_ratio_check = std::max(rep.max_ratio_check, r);
    if (r > rep.fitted_c) ++rep.violations;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Stationary warm start: integrate from the remote past so the state at time
// 0 is (approximately) stationary *and* carries the Wiener past needed to
// continue the same path.

struct BurnInResult {
  std::vector<double> states;        // n_batch x dim, state at T_burn
  std::vector<double> states_late;   // state at 2 T_burn (stabilisation check)
  double m2 = 0.0, m2_late = 0.0;    // E|X|^2 at the two probes
  double m4 = 0.0, m4_late = 0.0;
  bool stabilized = false;  // relative drift of m2 < 5%
  int dim = 1;
};

inline BurnInResult burn_in_stationary(const DriftSpec& drift, const Sigma& sigma,
                                       const kernels::KernelSpec& kernel, double T_burn,
                                       std::size_t n_batch, uint64_t seed, double step = 1e-2) {
  const int dim = drift.dim;
  const noise::SynthPlan plan = noise::make_synth_plan(kernel, 2.0 * T_burn, step);
  BurnInResult out;
  out.dim = dim;
  out.states.resize(n_batch * dim);
  out.states_late.resize(n_batch * dim);
  const std::size_t i_mid = static_cast<std::size_t>(std::llround(T_burn / step));
  std::vector<double> x0(dim, 0.0);
  double m2 = 0.0, m2l = 0.0, m4 = 0.0, m4l = 0.0;
  for (std::size_t r = 0; r < n_batch; ++r) {
    const noise::NoisePath path =
        noise::synthesize_noise(plan, rng::mix3(seed, 31, r), dim);
    const Trajectory traj = integrate(drift, sigma, x0, path);
    double a2 = 0.0, b2 = 0.0;
    for (int d = 0; d < dim; ++d) {
      out.states[r * dim + d] = traj.at(i_mid)[d];
      out.states_late[r * dim + d] = traj.at(traj.n_points() - 1)[d];
      a2 += traj.at(i_mid)[d] * traj.at(i_mid)[d];
      b2 += traj.at(traj.n_points() - 1)[d] * traj.at(traj.n_points() - 1)[d];
    }
    m2 += a2;
    m2l += b2;
    m4 += a2 * a2;
    m4l += b2 * b2;
  }
  out.m2 = m2 / n_batch;
  out.m2_late = m2l / n_batch;
  out.m4 = m4 / n_batch;
  out.m4_late = m4l / n_batch;
  out.stabilized = std::abs(out.m2_late - out.m2) <= 0.05 * std::max(out.m2, out.m2_late) +
                   3.0 * std::sqrt(out.m4 / n_batch);
  return out;
}

}  // namespace fracergo::dynamics
