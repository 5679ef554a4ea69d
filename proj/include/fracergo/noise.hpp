#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "fracergo/kernels.hpp"
#include "fracergo/rng.hpp"
#include "fracergo/stats.hpp"

namespace fracergo::noise {

// ---------------------------------------------------------------------------
// Two-sided Wiener record.
//
// Increments are keyed by (seed, stream, index): bit-identical for identical
// (seed, grid), regardless of thread layout. Past cells are indexed from the
// cell adjacent to 0 going backwards, so extending the past horizon does not
// perturb near-past increments; future cells are indexed from 0, so extending
// the horizon appends without perturbing.

inline uint64_t future_stream(int d) { return 2 * static_cast<uint64_t>(d); }
inline uint64_t past_stream(int d) { return 2 * static_cast<uint64_t>(d) + 1; }

struct PastSpec {
  double total = 0.0;        // past horizon T_past (>= 0)
  double fine_window = 0.0;  // uniform fine cells on [-fine_window, 0]
  double growth = 1.07;      // geometric growth of coarse cells beyond
};

struct WienerRecord {
  uint64_t seed = 0;
  int dim = 1;
  std::vector<double> past_edges;    // ascending, last element == 0 (size >= 1)
  std::vector<double> future_edges;  // ascending, first element == 0
  std::vector<double> past_inc;      // dim * (past_edges.size()-1), cell-major per dim
  std::vector<double> fut_inc;       // dim * (future_edges.size()-1)
  std::vector<double> past_w;        // W at past edges per dim (W(0) = 0)
  std::vector<double> fut_w;         // W at future edges per dim

  std::size_t past_cells() const { return past_edges.size() - 1; }
  std::size_t future_cells() const { return future_edges.size() - 1; }
  double t_past() const { return -past_edges.front(); }
  double horizon() const { return future_edges.back(); }

  double past_increment(int d, std::size_t cell) const {
    return past_inc[d * past_cells() + cell];
  }
  double future_increment(int d, std::size_t cell) const {
    return fut_inc[d * future_cells() + cell];
  }
  double w_past(int d, std::size_t edge) const { return past_w[d * past_edges.size() + edge]; }
  double w_future(int d, std::size_t edge) const { return fut_w[d * future_edges.size() + edge]; }
};

namespace detail {

inline void fill_cumulative(WienerRecord& rec) {
  const std::size_t mp = rec.past_cells(), nf = rec.future_cells();
  rec.past_w.assign(rec.dim * (mp + 1), 0.0);
  rec.fut_w.assign(rec.dim * (nf + 1), 0.0);
  for (int d = 0; d < rec.dim; ++d) {
    // W(0) = 0; walk backwards into the past
    for (std::size_t i = mp; i-- > 0;)
      rec.past_w[d * (mp + 1) + i] = rec.past_w[d * (mp + 1) + i + 1] - rec.past_inc[d * mp + i];
    for (std::size_t i = 0; i < nf; ++i)
      rec.fut_w[d * (nf + 1) + i + 1] = rec.fut_w[d * (nf + 1) + i] + rec.fut_inc[d * nf + i];
  }
}

inline std::vector<double> past_edges_for(const PastSpec& ps, double step) {
  std::vector<double> edges;
  if (ps.total <= 0.0) {
    edges.push_back(0.0);
    return edges;
  }
  const double fine = std::min(std::max(ps.fine_window, 0.0), ps.total);
  const std::size_t n_fine = static_cast<std::size_t>(std::llround(fine / step));
  // coarse part, built backwards from -fine
  std::vector<double> rev;
  double pos = -static_cast<double>(n_fine) * step;
  double w = step * ps.growth;
  while (pos > -ps.total + 1e-12) {
    pos -= w;
    if (pos < -ps.total) pos = -ps.total;
    rev.push_back(pos);
    w *= ps.growth;
  }
  for (auto it = rev.rbegin(); it != rev.rend(); ++it) edges.push_back(*it);
  for (std::size_t i = n_fine; i-- > 0;) edges.push_back(-static_cast<double>(i + 1) * step);
  edges.push_back(0.0);
  return edges;
}

}  // namespace detail

inline WienerRecord sample_wiener(const PastSpec& past, double T, double step, uint64_t seed,
                                  int dim = 1) {
  if (!(step > 0.0)) throw std::invalid_argument("sample_wiener: step must be > 0");
  if (!(T > 0.0)) throw std::invalid_argument("sample_wiener: T must be > 0");
  if (step > T) throw std::invalid_argument("sample_wiener: step larger than horizon T");
  WienerRecord rec;
  rec.seed = seed;
  rec.dim = dim;
  rec.past_edges = detail::past_edges_for(past, step);
  const std::size_t nf = static_cast<std::size_t>(std::ceil(T / step - 1e-9));
  rec.future_edges.resize(nf + 1);
  for (std::size_t i = 0; i <= nf; ++i) rec.future_edges[i] = static_cast<double>(i) * step;
  const std::size_t mp = rec.past_cells();
  rec.past_inc.resize(dim * mp);
  rec.fut_inc.resize(dim * nf);
  for (int d = 0; d < dim; ++d) {
    for (std::size_t i = 0; i < mp; ++i) {
      const double width = rec.past_edges[i + 1] - rec.past_edges[i];
      const uint64_t index_from_zero = mp - 1 - i;
      rec.past_inc[d * mp + i] = std::sqrt(width) * rng::normal(seed, past_stream(d), index_from_zero);
    }
    for (std::size_t i = 0; i < nf; ++i) {
      const double width = rec.future_edges[i + 1] - rec.future_edges[i];
      rec.fut_inc[d * nf + i] = std::sqrt(width) * rng::normal(seed, future_stream(d), i);
    }
  }
  detail::fill_cumulative(rec);
  return rec;
}

inline WienerRecord sample_wiener(double t_past, double T, double step, uint64_t seed,
                                  int dim = 1) {
  return sample_wiener(PastSpec{t_past, t_past, 1.0}, T, step, seed, dim);
}

// Appends future cells (same step) until the horizon reaches at least T_new.
// Existing increments are untouched: indices continue from the current end.
inline void extend_future(WienerRecord& rec, double T_new) {
  const double step = rec.future_edges[1] - rec.future_edges[0];
  std::size_t nf = rec.future_cells();
  const std::size_t target = static_cast<std::size_t>(std::ceil(T_new / step - 1e-9));
  if (target <= nf) return;
  std::vector<double> new_inc(rec.dim * target);
  for (int d = 0; d < rec.dim; ++d) {
    std::copy_n(rec.fut_inc.begin() + d * nf, nf, new_inc.begin() + d * target);
    for (std::size_t i = nf; i < target; ++i)
      new_inc[d * target + i] = std::sqrt(step) * rng::normal(rec.seed, future_stream(d), i);
  }
  rec.fut_inc = std::move(new_inc);
  rec.future_edges.resize(target + 1);
  for (std::size_t i = 0; i <= target; ++i) rec.future_edges[i] = static_cast<double>(i) * step;
  detail::fill_cumulative(rec);
}

// ---------------------------------------------------------------------------
// Past-horizon selection. The discarded variance of the (-inf, -X] tail is
// bounded through |g(u-t) - g(u)| <= t c1/(alpha+1) (-u)^{-(alpha+1)}:
//   trunc_var(X) <= (T c1/(alpha+1))^2 / (2 alpha + 1) * X^{-(2 alpha+1)}.

inline double truncation_variance_bound(const kernels::KernelSpec& k, double T, double X) {
  if (k.c1 == 0.0) return 0.0;
  const double ct = T * k.c1 / (k.alpha + 1.0);
  return ct * ct / (2.0 * k.alpha + 1.0) * std::pow(X, -(2.0 * k.alpha + 1.0));
}

inline double min_past_horizon(const kernels::KernelSpec& k, double T, double tol_rel,
                               double var_T) {
  if (k.c1 == 0.0) return 0.0;
  const double ct = T * k.c1 / (k.alpha + 1.0);
  const double x = std::pow(ct * ct / ((2.0 * k.alpha + 1.0) * tol_rel * var_T),
                            1.0 / (2.0 * k.alpha + 1.0));
  return std::max(x, 1.0);
}

// ---------------------------------------------------------------------------
// Synthesis plan: cell-average weights of the kernel on a uniform grid,
// cached FFT spectrum for the convolution/correlation fast path, plus the
// coarse geometric tail handled directly.

struct NoisePath {
  std::vector<double> grid;    // future edges, starting at 0
  std::vector<double> values;  // dim * grid.size(), component-major
  int dim = 1;
  double t_past = 0.0;
  double trunc_var_bound = 0.0;
  std::shared_ptr<const WienerRecord> wiener;

  double value(int d, std::size_t i) const { return values[d * grid.size() + i]; }
  double increment(int d, std::size_t i) const { return value(d, i + 1) - value(d, i); }
  std::size_t steps() const { return grid.size() - 1; }
};

struct SynthPlan {
  kernels::KernelSpec kernel;
  double step = 1e-3;
  std::size_t n_future = 0;   // N
  std::size_t n_fine_past = 0;  // M (uniform cells, same step)
  PastSpec past;
  double tol_rel = 1e-4;
  double var_horizon = 0.0;       // quadrature Var(G_T)
  double trunc_var_bound = 0.0;   // analytic bound for the discarded tail
  std::vector<double> w;          // w[m], m = 1..N+M; w[0] unused
  std::size_t fft_size = 0;
  std::vector<std::complex<double>> w_spectrum;   // innovation convolution
  std::vector<std::complex<double>> dw_spectrum;  // differenced past weights
  std::vector<double> coarse_edges;  // ascending, from -total to -fine_window

  WienerRecord make_record(uint64_t seed, int dim = 1) const {
    return sample_wiener(past, static_cast<double>(n_future) * step, step, seed, dim);
  }
};

struct SynthOptions {
  double tol_rel = 1e-4;        // discarded past variance relative to Var(G_T)
  double fine_window = -1.0;    // <0: choose automatically
  double growth = 1.07;
  double total_past = -1.0;     // <0: choose from tol_rel; else user-pinned
};

inline SynthPlan make_synth_plan(const kernels::KernelSpec& k, double T, double step,
                                 const SynthOptions& opt = {}) {
  if (!(step > 0.0) || !(T >= step)) throw std::invalid_argument("make_synth_plan: bad T/step");
  SynthPlan plan;
  plan.kernel = k;
  plan.step = step;
  plan.n_future = static_cast<std::size_t>(std::ceil(T / step - 1e-9));
  plan.tol_rel = opt.tol_rel;
  plan.var_horizon = kernels::increment_variance(k, T).value;
  const double needed = min_past_horizon(k, T, opt.tol_rel, plan.var_horizon);
  double total = needed;
  if (opt.total_past >= 0.0) {
    if (opt.total_past + 1e-9 < needed)
      throw std::invalid_argument(
          "make_synth_plan: past horizon " + std::to_string(opt.total_past) +
          " too short for tolerance; minimal admissible T_past = " + std::to_string(needed));
    total = opt.total_past;
  }
  double fine = opt.fine_window >= 0.0 ? opt.fine_window : std::min(total, std::max(2.0, 200.0 * step));
  fine = std::min(fine, total);
  // snap the fine window to whole cells; absorb a sub-cell coarse remainder
  std::size_t n_fine = static_cast<std::size_t>(std::ceil(fine / step - 1e-9));
  if (static_cast<double>(n_fine) * step >= total - 0.5 * step) {
    n_fine = static_cast<std::size_t>(std::ceil(total / step - 1e-9));
    total = static_cast<double>(n_fine) * step;
  }
  fine = static_cast<double>(n_fine) * step;
  plan.past = PastSpec{total, fine, opt.growth};
  plan.trunc_var_bound = truncation_variance_bound(k, T, std::max(total, 1.0));
  plan.n_fine_past = n_fine;

  const std::size_t n = plan.n_future, m = plan.n_fine_past;
  plan.w.assign(n + m + 1, 0.0);
  for (std::size_t j = 1; j <= n + m; ++j)
    plan.w[j] = k.cell_avg(-static_cast<double>(j) * step, -static_cast<double>(j - 1) * step);

  // coarse tail edges replicate the record's geometry beyond the fine window
  const auto edges = detail::past_edges_for(plan.past, step);
  plan.coarse_edges.assign(edges.begin(), edges.end() - static_cast<long>(m));

  std::size_t L = 1;
  while (L < 2 * (n + m) + 2) L <<= 1;
  plan.fft_size = L;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> a(L, 0.0);
  for (std::size_t i = 0; i + 1 <= n + m; ++i) a[i] = plan.w[i + 1];
  plan.w_spectrum.resize(L);
  fft.fwd(plan.w_spectrum, a);
  // differenced weights delta_m = w_m - w_{m-1} feed the past term in its
  // telescoped form sum_l sum_j delta_{j+l} dP_j: algebraically identical to
  // A_n - A_0 but free of the cancellation of two large correlations
  if (m > 0) {
    std::fill(a.begin(), a.end(), std::complex<double>(0.0, 0.0));
    for (std::size_t i = 1; i + 1 <= n + m; ++i) a[i] = plan.w[i + 1] - plan.w[i];
    plan.dw_spectrum.resize(L);
    fft.fwd(plan.dw_spectrum, a);
  }
  return plan;
}

inline SynthPlan make_innovation_plan(const kernels::KernelSpec& k, double T, double step) {
  SynthOptions opt;
  opt.fine_window = 0.0;
  SynthPlan plan;
  plan.kernel = k;
  plan.step = step;
  plan.n_future = static_cast<std::size_t>(std::ceil(T / step - 1e-9));
  plan.tol_rel = 0.0;
  plan.past = PastSpec{0.0, 0.0, opt.growth};
  plan.n_fine_past = 0;
  const std::size_t n = plan.n_future;
  plan.w.assign(n + 1, 0.0);
  for (std::size_t j = 1; j <= n; ++j)
    plan.w[j] = k.cell_avg(-static_cast<double>(j) * step, -static_cast<double>(j - 1) * step);
  std::size_t L = 1;
  while (L < 2 * n + 2) L <<= 1;
  plan.fft_size = L;
  std::vector<std::complex<double>> a(L, 0.0);
  for (std::size_t i = 0; i + 1 <= n; ++i) a[i] = plan.w[i + 1];
  Eigen::FFT<double> fft;
  plan.w_spectrum.resize(L);
  fft.fwd(plan.w_spectrum, a);
  return plan;
}

namespace detail {

// Direct evaluation of the coarse-tail contribution
//   sum_j { avg g(cell_j - t) - avg g(cell_j) } dW_j
// on a sparse time subgrid, then linear interpolation: the tail term varies
// slowly in t so a coarse subgrid suffices.
inline void add_coarse_tail(const SynthPlan& plan, const WienerRecord& rec, int d,
                            std::span<double> g_values) {
  const std::size_t n_coarse = plan.coarse_edges.size() > 0 ? plan.coarse_edges.size() - 1 : 0;
  if (n_coarse == 0) return;
  const std::size_t n = plan.n_future;
  const double h = plan.step;
  const std::size_t sub_stride = std::max<std::size_t>(1, static_cast<std::size_t>(0.25 / h));
  std::vector<std::size_t> sub;
  for (std::size_t i = 0; i <= n; i += sub_stride) sub.push_back(i);
  if (sub.back() != n) sub.push_back(n);

  std::vector<double> base(n_coarse);
  for (std::size_t c = 0; c < n_coarse; ++c)
    base[c] = plan.kernel.cell_avg(plan.coarse_edges[c], plan.coarse_edges[c + 1]);

  std::vector<double> tail_sub(sub.size(), 0.0);
  for (std::size_t si = 0; si < sub.size(); ++si) {
    const double t = static_cast<double>(sub[si]) * h;
    if (t == 0.0) continue;
    double s = 0.0;
    for (std::size_t c = 0; c < n_coarse; ++c) {
      const double shifted =
          plan.kernel.cell_avg(plan.coarse_edges[c] - t, plan.coarse_edges[c + 1] - t);
      s += (shifted - base[c]) * rec.past_increment(d, c);
    }
    tail_sub[si] = s;
  }
  for (std::size_t si = 0; si + 1 < sub.size(); ++si) {
    const std::size_t i0 = sub[si], i1 = sub[si + 1];
    for (std::size_t i = i0; i <= i1; ++i) {
      const double frac = i1 > i0 ? static_cast<double>(i - i0) / static_cast<double>(i1 - i0) : 0.0;
      g_values[i] += (1.0 - frac) * tail_sub[si] + frac * tail_sub[si + 1];
    }
  }
}

}  // namespace detail

// Moving-average synthesis on the plan's uniform grid. The fine past and the
// innovation integral are assembled as one FFT convolution/correlation pass
// against the cached weight spectrum; the coarse geometric tail is added
// directly. Kernel singularities at 0- live entirely in the exact
// cell-average weights.
inline NoisePath synthesize_noise(const SynthPlan& plan,
                                  std::shared_ptr<const WienerRecord> rec) {
  const std::size_t n = plan.n_future, m = plan.n_fine_past;
  if (rec->future_cells() < n)
    throw std::invalid_argument("synthesize_noise: record horizon too short");
  const std::size_t rec_past = rec->past_cells();
  const std::size_t n_coarse = plan.coarse_edges.size() > 0 ? plan.coarse_edges.size() - 1 : 0;
  if (rec_past != m + n_coarse)
    throw std::invalid_argument("synthesize_noise: record past does not match plan");

  NoisePath path;
  path.dim = rec->dim;
  path.grid.assign(rec->future_edges.begin(), rec->future_edges.begin() + n + 1);
  path.values.assign(rec->dim * (n + 1), 0.0);
  path.t_past = rec->t_past();
  path.trunc_var_bound = plan.trunc_var_bound;

  const std::size_t L = plan.fft_size;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> z(L), zspec(L), spec(L), out(L), out2(L);
  for (int d = 0; d < rec->dim; ++d) {
    std::fill(z.begin(), z.end(), std::complex<double>(0.0, 0.0));
    // real part: future increments dF_j; imag part: fine-past increments in
    // reversed lag order, so one forward transform feeds both the innovation
    // convolution and the past correlation
    for (std::size_t j = 0; j < n; ++j) z[j].real(rec->future_increment(d, j));
    for (std::size_t j = 0; j < m; ++j)
      z[j].imag(rec->past_increment(d, rec_past - m + j));
    fft.fwd(zspec, z);
    for (std::size_t i = 0; i < L; ++i) spec[i] = zspec[i] * plan.w_spectrum[i];
    fft.inv(out, spec);
    if (m > 0) {
      for (std::size_t i = 0; i < L; ++i) spec[i] = zspec[i] * plan.dw_spectrum[i];
      fft.inv(out2, spec);
    }
    // conv_n = sum_{k=1..n} w_k dF_{n-k} = Re(out)[n-1]
    // B_l    = sum_{j=1..m} delta_{j+l} dP_j = Im(out2)[l+m-1]; past_n = sum_{l<=n} B_l
    double* g = path.values.data() + d * (n + 1);
    g[0] = 0.0;
    double past_acc = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
      const double conv = out[i - 1].real();
      if (m > 0) past_acc += out2[i + m - 1].imag();
      g[i] = conv + past_acc;
    }
    detail::add_coarse_tail(plan, *rec, d, std::span<double>(g, n + 1));
  }
  path.wiener = std::move(rec);
  return path;
}

inline NoisePath synthesize_noise(const SynthPlan& plan, uint64_t seed, int dim = 1) {
  auto rec = std::make_shared<WienerRecord>(plan.make_record(seed, dim));
  return synthesize_noise(plan, std::move(rec));
}

// Convenience: choose the past horizon for the requested tolerance, or throw
// with the minimal admissible horizon when the caller pinned one too short.
inline NoisePath synthesize_noise(const kernels::KernelSpec& k, double T, double step,
                                  uint64_t seed, int dim = 1, const SynthOptions& opt = {}) {
  const SynthPlan plan = make_synth_plan(k, T, step, opt);
  return synthesize_noise(plan, seed, dim);
}

// ---------------------------------------------------------------------------
// Merged cell view (past + future) for direct integrals.

struct MergedCells {
  std::vector<double> edges;  // ascending, spanning [-T_past, horizon]
  std::vector<double> inc;    // dim * n_cells
  int dim = 1;
  std::size_t zero_edge = 0;  // index of edge at time 0

  std::size_t n_cells() const { return edges.size() - 1; }
  double increment(int d, std::size_t cell) const { return inc[d * n_cells() + cell]; }
};

inline MergedCells merge_cells(const WienerRecord& rec) {
  MergedCells mc;
  mc.dim = rec.dim;
  const std::size_t mp = rec.past_cells(), nf = rec.future_cells();
  mc.edges.reserve(mp + nf + 1);
  mc.edges.insert(mc.edges.end(), rec.past_edges.begin(), rec.past_edges.end());
  mc.zero_edge = mc.edges.size() - 1;
  mc.edges.insert(mc.edges.end(), rec.future_edges.begin() + 1, rec.future_edges.end());
  mc.inc.resize(rec.dim * (mp + nf));
  for (int d = 0; d < rec.dim; ++d) {
    for (std::size_t i = 0; i < mp; ++i) mc.inc[d * (mp + nf) + i] = rec.past_increment(d, i);
    for (std::size_t i = 0; i < nf; ++i)
      mc.inc[d * (mp + nf) + mp + i] = rec.future_increment(d, i);
  }
  return mc;
}

inline std::size_t nearest_edge(const std::vector<double>& edges, double t) {
  const auto it = std::lower_bound(edges.begin(), edges.end(), t - 1e-12);
  std::size_t i = static_cast<std::size_t>(it - edges.begin());
  if (i >= edges.size()) i = edges.size() - 1;
  if (i > 0 && std::abs(edges[i - 1] - t) < std::abs(edges[i] - t)) --i;
  return i;
}

// Integral over cells in [edges[c0], edges[c1]) of {g(u - a) - g(u - b)} dW
// (the b-part dropped when b is +inf sentinel), evaluated by cell averages.
namespace detail {

inline double cell_shift_avg(const kernels::KernelSpec& k, double a, double b, double shift) {
  // mean of g(u - shift) over [a, b]; zero where u - shift >= 0
  const double lo = a - shift, hi = b - shift;
  if (lo >= 0.0) return 0.0;
  if (hi <= 0.0) return k.cell_avg(lo, hi);
  return k.cell_avg(lo, 0.0) * (-lo) / (hi - lo);  // partial cell
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Past / innovation decomposition at (theta, tau):
//   G_{t+tau} - G_tau = D^Delta_t(theta) + D_t(theta, tau) + Z_t(tau),
// sampled on a uniform t-grid in [0, 1].

struct NoiseDecomposition {
  std::vector<double> t_grid;
  std::vector<double> remote;      // dim * n
  std::vector<double> recent;      // dim * n
  std::vector<double> innovation;  // dim * n
  double theta = 0.0, tau = 0.0, delta = 0.0;
  int dim = 1;

  double remote_at(int d, std::size_t i) const { return remote[d * t_grid.size() + i]; }
  double recent_at(int d, std::size_t i) const { return recent[d * t_grid.size() + i]; }
  double innovation_at(int d, std::size_t i) const { return innovation[d * t_grid.size() + i]; }
  double sum_at(int d, std::size_t i) const {
    return remote_at(d, i) + recent_at(d, i) + innovation_at(d, i);
  }
};

inline NoiseDecomposition decompose_noise(const kernels::KernelSpec& k, const WienerRecord& rec,
                                          double theta, double tau, std::size_t n_t = 0) {
  if (theta > tau) throw std::invalid_argument("decompose_noise: need theta <= tau");
  const MergedCells mc = merge_cells(rec);
  const double step = rec.future_edges[1] - rec.future_edges[0];
  if (n_t == 0) n_t = static_cast<std::size_t>(std::llround(1.0 / step));
  if (rec.horizon() + 1e-9 < tau + 1.0)
    throw std::invalid_argument("decompose_noise: record must reach tau + 1");

  const std::size_t e_theta = nearest_edge(mc.edges, theta);
  const std::size_t e_tau = nearest_edge(mc.edges, tau);
  const double th = mc.edges[e_theta], ta = mc.edges[e_tau];
  if (th > ta) throw std::invalid_argument("decompose_noise: theta > tau after snapping");

  NoiseDecomposition dec;
  dec.theta = th;
  dec.tau = ta;
  dec.delta = ta - th;
  dec.dim = rec.dim;
  dec.t_grid.resize(n_t + 1);
  for (std::size_t i = 0; i <= n_t; ++i) dec.t_grid[i] = static_cast<double>(i) * step;
  dec.remote.assign(rec.dim * (n_t + 1), 0.0);
  dec.recent.assign(rec.dim * (n_t + 1), 0.0);
  dec.innovation.assign(rec.dim * (n_t + 1), 0.0);

  for (int d = 0; d < rec.dim; ++d) {
    for (std::size_t ti = 0; ti <= n_t; ++ti) {
      const double t = dec.t_grid[ti];
      double rem = 0.0, rec_sum = 0.0, inn = 0.0;
      for (std::size_t c = 0; c < e_theta; ++c) {
        const double a = mc.edges[c], b = mc.edges[c + 1];
        rem += (detail::cell_shift_avg(k, a, b, t + ta) - detail::cell_shift_avg(k, a, b, ta)) *
               mc.increment(d, c);
      }
      for (std::size_t c = e_theta; c < e_tau; ++c) {
        const double a = mc.edges[c], b = mc.edges[c + 1];
        rec_sum += (detail::cell_shift_avg(k, a, b, t + ta) - detail::cell_shift_avg(k, a, b, ta)) *
                   mc.increment(d, c);
      }
      const std::size_t e_end = nearest_edge(mc.edges, ta + t);
      for (std::size_t c = e_tau; c < e_end; ++c) {
        const double a = mc.edges[c], b = mc.edges[c + 1];
        inn += detail::cell_shift_avg(k, a, b, t + ta) * mc.increment(d, c);
      }
      dec.remote[d * (n_t + 1) + ti] = rem;
      dec.recent[d * (n_t + 1) + ti] = rec_sum;
      dec.innovation[d * (n_t + 1) + ti] = inn;
    }
  }
  return dec;
}

// ---------------------------------------------------------------------------
// Exact fBm oracle (unit normalisation: E[B_s B_t] = (s^2H + t^2H - |t-s|^2H)/2).

inline double fbm_cov(double H, double s, double t) {
  return 0.5 * (std::pow(s, 2.0 * H) + std::pow(t, 2.0 * H) - std::pow(std::abs(t - s), 2.0 * H));
}

class FbmSampler {
 public:
  // Exact-in-distribution sampling at the given times via covariance
  // factorisation of the increments. A failed factorisation falls back to a
  // jittered dense factorisation.
  FbmSampler(double H, std::vector<double> times) : H_(H), times_(std::move(times)) {
    if (!(H > 0.0 && H < 1.0)) throw std::domain_error("FbmSampler: H must lie in (0,1)");
    if (times_.empty() || times_.front() <= 0.0)
      throw std::invalid_argument("FbmSampler: times must be positive ascending (excluding 0)");
    const std::size_t n = times_.size();
    Eigen::MatrixXd cov(n, n);
    auto edge = [&](std::size_t i) { return i == 0 ? 0.0 : times_[i - 1]; };
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        cov(i, j) = fbm_cov(H, times_[i], times_[j]) - fbm_cov(H, times_[i], edge(j)) -
                    fbm_cov(H, edge(i), times_[j]) + fbm_cov(H, edge(i), edge(j));
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
      fallback_used_ = true;
      const double jitter = 1e-12 * cov.diagonal().maxCoeff();
      llt.compute(cov + jitter * Eigen::MatrixXd::Identity(n, n));
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("FbmSampler: covariance factorisation failed");
    }
    L_ = llt.matrixL();
  }

  static FbmSampler uniform(double H, std::size_t n, double step) {
    std::vector<double> ts(n);
    for (std::size_t i = 0; i < n; ++i) ts[i] = static_cast<double>(i + 1) * step;
    return FbmSampler(H, std::move(ts));
  }

  // Path values at the constructor times (B(0) = 0 is implicit).
  std::vector<double> sample(uint64_t seed, uint64_t stream) const {
    const std::size_t n = times_.size();
    Eigen::VectorXd z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = rng::normal(seed, stream, i);
    Eigen::VectorXd inc = L_ * z;
    std::vector<double> path(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += inc[i];
      path[i] = acc;
    }
    return path;
  }

  const std::vector<double>& times() const { return times_; }
  bool fallback_used() const { return fallback_used_; }

 private:
  double H_;
  std::vector<double> times_;
  Eigen::MatrixXd L_;
  bool fallback_used_ = false;
};

// ---------------------------------------------------------------------------
// Weighted sup norm ||w||_{beta,inf} = sup_s |w_s| / (1+s)^beta on a grid.

struct WeightedNorm {
  double value = 0.0;
  bool warned = false;  // beta <= 1/2: the norm of a Wiener path diverges
};

inline WeightedNorm weighted_holder_norm(std::span<const double> values,
                                         std::span<const double> times, double beta) {
  if (values.size() != times.size() || values.empty())
    throw std::invalid_argument("weighted_holder_norm: bad sizes");
  WeightedNorm out;
  out.warned = beta <= 0.5;
  for (std::size_t i = 0; i < values.size(); ++i)
    out.value = std::max(out.value, std::abs(values[i]) / std::pow(1.0 + times[i], beta));
  return out;
}

// S-statistic of the stopping-time construction: the weighted sup of the
// Wiener path looking backwards from ref_time,
//   sup_{s <= ref} |W_s - W_ref| / (1 + (ref - s))^{1/2 + eps},
// taken over all recorded edges (truncated at the synthesized past horizon).
inline double weighted_sup_to_ref(const WienerRecord& rec, double ref_time, double eps) {
  const double beta = 0.5 + eps;
  const std::size_t ref_edge = nearest_edge(rec.future_edges, ref_time);
  std::vector<double> wr(rec.dim);
  for (int d = 0; d < rec.dim; ++d) wr[d] = rec.w_future(d, ref_edge);
  double sup = 0.0;
  for (std::size_t i = 0; i <= ref_edge; ++i) {
    double n2 = 0.0;
    for (int d = 0; d < rec.dim; ++d) {
      const double diff = rec.w_future(d, i) - wr[d];
      n2 += diff * diff;
    }
    const double dt = rec.future_edges[ref_edge] - rec.future_edges[i];
    sup = std::max(sup, std::sqrt(n2) / std::pow(1.0 + dt, beta));
  }
  for (std::size_t i = 0; i + 1 < rec.past_edges.size(); ++i) {
    double n2 = 0.0;
    for (int d = 0; d < rec.dim; ++d) {
      const double diff = rec.w_past(d, i) - wr[d];
      n2 += diff * diff;
    }
    const double dt = rec.future_edges[ref_edge] - rec.past_edges[i];
    sup = std::max(sup, std::sqrt(n2) / std::pow(1.0 + dt, beta));
  }
  return sup;
}

// ---------------------------------------------------------------------------
// Small-ball estimate: fraction of innovation paths Z with sup norm <= eps.

struct SmallBallEstimate {
  double p_hat = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t hits = 0;
  std::size_t n = 0;
};

inline SmallBallEstimate small_ball_estimate(const kernels::KernelSpec& k, double eps,
                                             std::size_t n_paths, uint64_t seed,
                                             double step = 2e-3) {
  if (!(eps > 0.0)) throw std::invalid_argument("small_ball_estimate: eps must be > 0");
  const SynthPlan plan = make_innovation_plan(k, 1.0, step);
  const std::size_t n = plan.n_future, L = plan.fft_size;
  std::size_t hits = 0;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> z(L), spec(L), out(L);
  const double sq = std::sqrt(step);
  for (std::size_t path = 0; path < n_paths; ++path) {
    std::fill(z.begin(), z.end(), std::complex<double>(0.0, 0.0));
    for (std::size_t j = 0; j < n; ++j)
      z[j].real(sq * rng::normal(seed, future_stream(0), path * n + j));
    fft.fwd(spec, z);
    for (std::size_t i = 0; i < L; ++i) spec[i] *= plan.w_spectrum[i];
    fft.inv(out, spec);
    bool inside = true;
    for (std::size_t i = 0; i < n && inside; ++i) inside = std::abs(out[i].real()) <= eps;
    if (inside) ++hits;
  }
  const auto ci = stats::wilson_ci(hits, n_paths);
  return {ci.p_hat, ci.lo, ci.hi, hits, n_paths};
}

// ---------------------------------------------------------------------------
// Marginal machinery shared by the fidelity checks: the synthesized G_t is the
// dot product of the plan's cell weights against the Wiener increments, so the
// weight vector at a grid time is both a fast marginal sampler and an exact
// description of the discrete covariance.

struct MarginalWeights {
  std::vector<double> edges;    // merged cell edges
  std::vector<double> weights;  // per target time: |ts| x n_cells (row-major)
  std::vector<double> ts;
};

inline MarginalWeights marginal_weights(const kernels::KernelSpec& k,
                                        const std::vector<double>& ts, double step,
                                        const SynthOptions& opt = {}) {
  const double T = *std::max_element(ts.begin(), ts.end());
  const SynthPlan plan = make_synth_plan(k, T, step, opt);
  const WienerRecord rec = plan.make_record(0, 1);
  const MergedCells mc = merge_cells(rec);
  MarginalWeights mw;
  mw.edges = mc.edges;
  mw.ts = ts;
  const std::size_t nc = mc.n_cells();
  mw.weights.assign(ts.size() * nc, 0.0);
  for (std::size_t ti = 0; ti < ts.size(); ++ti) {
    const double t = ts[ti];
    for (std::size_t c = 0; c < nc; ++c) {
      const double a = mc.edges[c], b = mc.edges[c + 1];
      if (a >= t) break;
      double w = detail::cell_shift_avg(k, a, b, t);
      if (b <= 0.0) w -= k.cell_avg(a, b);
      mw.weights[ti * nc + c] = w;
    }
  }
  return mw;
}

// Exact covariance of the *discretised* G at two target times.
inline double discrete_cov(const MarginalWeights& mw, std::size_t i, std::size_t j) {
  const std::size_t nc = mw.edges.size() - 1;
  double s = 0.0;
  for (std::size_t c = 0; c < nc; ++c) {
    const double width = mw.edges[c + 1] - mw.edges[c];
    s += mw.weights[i * nc + c] * mw.weights[j * nc + c] * width;
  }
  return s;
}

// Samples of the synthesized marginals (one path per row of draws).
inline std::vector<double> sample_marginal(const MarginalWeights& mw, std::size_t which,
                                           std::size_t n_paths, uint64_t seed) {
  const std::size_t nc = mw.edges.size() - 1;
  std::vector<double> out(n_paths);
  for (std::size_t p = 0; p < n_paths; ++p) {
    double s = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
      const double width = mw.edges[c + 1] - mw.edges[c];
      if (mw.weights[which * nc + c] == 0.0) continue;
      s += mw.weights[which * nc + c] * std::sqrt(width) * rng::normal(seed, 7, p * nc + c);
    }
    out[p] = s;
  }
  return out;
}

}  // namespace fracergo::noise
