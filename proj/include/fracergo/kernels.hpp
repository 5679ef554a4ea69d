#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace fracergo::kernels {

using Fn = std::function<double(double)>;

enum class Family { fractional, mixed, custom };

// A one-dimensional moving-average kernel g, supported on u < 0, together
// with its first two derivatives and the certificate constants
//   |g''(u)| <= c1 (-u)^{-alpha-2}   for u <= -1,
//   |g''(u)| <= c2 (-u)^{-zeta-2}    for u in [-2, 0),
// with alpha > -1/2 and zeta < 1/2. Immutable after construction; safe to
// share read-only across parallel workers.
struct KernelSpec {
  Fn g;   // u < 0
  Fn g1;  // first derivative on u < 0
  Fn g2;  // second derivative on u < 0
  double alpha = 0.0;
  double zeta = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  Family family = Family::custom;
  double H = 0.5;   // fractional / mixed short-time index
  double Hp = 0.5;  // mixed long-range index
  // Exact integral of g over [a, b] with a < b <= 0 when available
  // (fractional and mixed families). Empty for custom kernels.
  std::function<double(double, double)> g_integral;

  double eval(double u) const { return u >= 0.0 ? 0.0 : g(u); }

  // Mean value of g over a cell [a, b], b <= 0. The last cell before 0 is
  // handled by product integration: where no exact antiderivative exists the
  // local power-law model (-u)^{-zeta} anchored at the outer edge is
  // integrated exactly, so the (possibly singular) behaviour near 0- does
  // not blow up the quadrature.
  double cell_avg(double a, double b) const {
    if (b > 0.0) throw std::invalid_argument("cell_avg: cell must satisfy b <= 0");
    if (!(a < b)) throw std::invalid_argument("cell_avg: need a < b");
    if (g_integral) return g_integral(a, b) / (b - a);
    if (b > -1e-300) {
      // terminal cell [a, 0): integrate g(a) * (u/a)^{-zeta} exactly
      if (zeta >= 1.0) throw std::domain_error("cell_avg: zeta >= 1 not integrable");
      return g(a) / (1.0 - zeta);
    }
    // interior cell: 5-point Gauss-Legendre
    static constexpr double xi[5] = {-0.9061798459386640, -0.5384693101056831, 0.0,
                                     0.5384693101056831, 0.9061798459386640};
    static constexpr double wi[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                                     0.4786286704993665, 0.2369268850561891};
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    double s = 0.0;
    for (int i = 0; i < 5; ++i) s += wi[i] * g(c + h * xi[i]);
    return 0.5 * s;
  }
};

namespace detail {

inline void require_h(double H, const char* what) {
  if (!(H > 0.0 && H < 1.0)) throw std::domain_error(std::string(what) + " must lie in (0,1)");
}

// |(H-1/2)(H-3/2)|, the coefficient of (-u)^{H-5/2} in g''.
inline double frac_c(double H) { return std::abs((H - 0.5) * (H - 1.5)); }

// Antiderivative-based integral of (-u)^p over [a, b], a < b <= 0, p > -1.
inline double power_integral(double a, double b, double p) {
  return (std::pow(-a, p + 1.0) - std::pow(-b, p + 1.0)) / (p + 1.0);
}

}  // namespace detail

// g(u) = (-u)_+^{H-1/2}. Remark: alpha = zeta = 1/2 - H and the (C2)
// inequalities hold with equality, so c1 = c2 = |(H-1/2)(H-3/2)|.
inline KernelSpec make_fractional(double H) {
  detail::require_h(H, "fractional H");
  KernelSpec k;
  const double p = H - 0.5;
  k.g = [p](double u) { return std::pow(-u, p); };
  k.g1 = [p](double u) { return -p * std::pow(-u, p - 1.0); };
  k.g2 = [p](double u) { return p * (p - 1.0) * std::pow(-u, p - 2.0); };
  k.alpha = 0.5 - H;
  k.zeta = 0.5 - H;
  k.c1 = detail::frac_c(H);
  k.c2 = detail::frac_c(H);
  k.family = Family::fractional;
  k.H = H;
  k.Hp = H;
  k.g_integral = [p](double a, double b) { return detail::power_integral(a, b, p); };
  return k;
}

// g(u) = (-u)_+^{H-1/2} + (-u)_+^{H'-1/2}, H < H': local regularity of an
// H-fBm with the long-range dependence of an H'-fBm. The tail is governed by
// the slower-decaying H' term (alpha = 1/2 - H'), the origin by the more
// singular H term (zeta = 1/2 - H).
inline KernelSpec make_mixed(double H, double Hp) {
  detail::require_h(H, "mixed H");
  detail::require_h(Hp, "mixed H'");
  if (!(H < Hp)) throw std::domain_error("mixed kernel requires H < H'");
  KernelSpec k;
  const double p = H - 0.5, q = Hp - 0.5;
  k.g = [p, q](double u) { return std::pow(-u, p) + std::pow(-u, q); };
  k.g1 = [p, q](double u) { return -p * std::pow(-u, p - 1.0) - q * std::pow(-u, q - 1.0); };
  k.g2 = [p, q](double u) {
    return p * (p - 1.0) * std::pow(-u, p - 2.0) + q * (q - 1.0) * std::pow(-u, q - 2.0);
  };
  k.alpha = 0.5 - Hp;
  k.zeta = 0.5 - H;
  // |g''| <= (cH + cH') (-u)^{H'-5/2} on u <= -1, and
  // |g''| <= (cH + 2^{H'-H} cH') (-u)^{H-5/2} on [-2, 0).
  k.c1 = detail::frac_c(H) + detail::frac_c(Hp);
  k.c2 = detail::frac_c(H) + std::pow(2.0, Hp - H) * detail::frac_c(Hp);
  k.family = Family::mixed;
  k.H = H;
  k.Hp = Hp;
  k.g_integral = [p, q](double a, double b) {
    return detail::power_integral(a, b, p) + detail::power_integral(a, b, q);
  };
  return k;
}

// Custom kernels: the caller supplies g, g', g'' and candidate certificate
// constants; verify_c2 certifies rather than infers them (inferring
// exponents from samples is ill-posed).
inline KernelSpec make_custom(Fn g, Fn g1, Fn g2, double alpha, double zeta, double c1, double c2,
                              std::function<double(double, double)> g_integral = nullptr) {
  if (!(alpha > -0.5)) throw std::domain_error("custom kernel requires alpha > -1/2");
  if (!(zeta < 0.5)) throw std::domain_error("custom kernel requires zeta < 1/2");
  if (!(c1 > 0.0 && c2 > 0.0)) throw std::domain_error("custom kernel requires c1, c2 > 0");
  KernelSpec k;
  k.g = std::move(g);
  k.g1 = std::move(g1);
  k.g2 = std::move(g2);
  k.alpha = alpha;
  k.zeta = zeta;
  k.c1 = c1;
  k.c2 = c2;
  k.family = Family::custom;
  k.g_integral = std::move(g_integral);
  return k;
}

struct KernelParams {
  std::string family;  // "fractional" | "mixed"
  double H = 0.5;
  double Hp = 0.5;
};

inline KernelSpec make_kernel(const KernelParams& p) {
  if (p.family == "fractional") return make_fractional(p.H);
  if (p.family == "mixed") return make_mixed(p.H, p.Hp);
  throw std::domain_error("unknown kernel family: " + p.family);
}

// ---------------------------------------------------------------------------
// Certificate bounds on g' and g derived from the (C2) constants.

// |g'(r)| <= c1/(alpha+1) (-r)^{-(alpha+1)} for r <= -1.
inline double bound_tail_g1(const KernelSpec& k, double r) {
  return k.c1 / (k.alpha + 1.0) * std::pow(-r, -(k.alpha + 1.0));
}

// Tail bound on |g| for r <= -1, with the explicit constants obtained from
// integrating bound_tail_g1 (g(-inf) = 0 when alpha > 0; anchored at g(-1)
// otherwise).
inline double bound_tail_g(const KernelSpec& k, double r) {
  const double a = k.alpha;
  const double c = k.c1 / (a + 1.0);
  if (a > 0.0) return c / a * std::pow(-r, -a);
  if (a == 0.0) return std::abs(k.g(-1.0)) + c * std::log(-r);
  return std::abs(k.g(-1.0)) + c / (-a) * (std::pow(-r, -a) - 1.0);
}

// Short-time bound on |g'| for r in [-2, 0); constants from integrating the
// (C2_iii) inequality (anchored at g'(-2) when zeta >= -1).
inline double bound_origin_g1(const KernelSpec& k, double r) {
  const double z = k.zeta;
  if (z < -1.0) return k.c2 / (-z - 1.0) * std::pow(-r, -z - 1.0);
  if (std::abs(z + 1.0) < 1e-12)
    return std::abs(k.g1(-2.0)) + k.c2 * std::log(2.0 / (-r));
  return std::abs(k.g1(-2.0)) + k.c2 / (z + 1.0) * (std::pow(-r, -z - 1.0) - std::pow(2.0, -z - 1.0));
}

// Short-time bound on |g| for r in [-2, 0): |g(-2)| plus the integral of
// bound_origin_g1 from -2 to r (closed form).
inline double bound_origin_g(const KernelSpec& k, double r) {
  const double z = k.zeta;
  const double anchor = std::abs(k.g(-2.0));
  auto int_pow = [&](double expnt) {
    // integral of (-u)^{expnt} du over [-2, r], r in (-2, 0)
    if (std::abs(expnt + 1.0) < 1e-12) return std::log(2.0 / (-r));
    return (std::pow(2.0, expnt + 1.0) - std::pow(-r, expnt + 1.0)) / (expnt + 1.0);
  };
  if (z < -1.0) return anchor + k.c2 / (-z - 1.0) * int_pow(-z - 1.0);
  if (std::abs(z + 1.0) < 1e-12) {
    // bound_origin_g1 = |g'(-2)| + c2 log(2/(-u)); integrate in closed form
    const double len = 2.0 - (-r);
    const double int_log = 2.0 * std::log(2.0) - (-r) * std::log(-r) - len;  // int log(-u) du
    return anchor + std::abs(k.g1(-2.0)) * len + k.c2 * (std::log(2.0) * len - int_log);
  }
  const double ca = std::abs(k.g1(-2.0)) - k.c2 / (z + 1.0) * std::pow(2.0, -z - 1.0);
  return anchor + std::abs(ca) * (2.0 + r) + k.c2 / (z + 1.0) * int_pow(-z - 1.0);
}

// ---------------------------------------------------------------------------
// verify_c2: grid certification of the (C2) inequalities and the derived
// g'/g bounds. Ratios |lhs|/rhs are maximised over the grid; the certificate
// passes iff every ratio is <= 1 + tol and no evaluation failed.

struct C2Check {
  std::string name;
  double max_ratio = 0.0;
  double argmax_u = 0.0;
  int failed_points = 0;  // NaN / overflow evaluations, reported not thrown
};

struct C2Report {
  std::vector<C2Check> checks;
  double tolerance = 1e-6;
  bool pass = false;
};

struct C2Grid {
  std::vector<double> tail;    // u <= -1, log-spaced out to tail_limit
  std::vector<double> origin;  // [-2, 0), geometrically refined toward 0-
};

inline C2Grid default_c2_grid(double tail_limit = 1e6, int n_tail = 400, int n_origin = 400,
                              double origin_eps = 1e-8) {
  C2Grid g;
  g.tail.reserve(n_tail);
  for (int i = 0; i < n_tail; ++i) {
    const double t = static_cast<double>(i) / (n_tail - 1);
    g.tail.push_back(-std::pow(tail_limit, t));  // -1 down to -tail_limit
  }
  g.origin.reserve(n_origin);
  for (int i = 0; i < n_origin; ++i) {
    const double t = static_cast<double>(i) / (n_origin - 1);
    g.origin.push_back(-2.0 * std::pow(origin_eps / 2.0, t));  // -2 up to -2*eps/2
  }
  return g;
}

namespace detail {

inline void accumulate_ratio(C2Check& chk, double u, double lhs, double rhs) {
  if (!std::isfinite(lhs) || !std::isfinite(rhs)) {
    ++chk.failed_points;
    return;
  }
  double ratio;
  if (rhs == 0.0)
    ratio = (lhs == 0.0) ? 0.0 : std::numeric_limits<double>::infinity();
  else
    ratio = std::abs(lhs) / rhs;
  if (ratio > chk.max_ratio) {
    chk.max_ratio = ratio;
    chk.argmax_u = u;
  }
}

}  // namespace detail

inline C2Report verify_c2(const KernelSpec& k, const C2Grid& grid = default_c2_grid(),
                          double tol = 1e-6) {
  C2Report rep;
  rep.tolerance = tol;
  C2Check c2ii{"C2_ii: |g''(u)| <= c1 (-u)^{-alpha-2}, u <= -1"};
  C2Check c2iii{"C2_iii: |g''(u)| <= c2 (-u)^{-zeta-2}, u in [-2,0)"};
  C2Check lemc1{"derived: |g'(r)| <= c1/(alpha+1) (-r)^{-(alpha+1)}, r <= -1"};
  C2Check lemcg{"derived: tail bound on |g(r)|, r <= -1"};
  C2Check lemd1{"derived: short-time bound on |g'(r)|, r in [-2,0)"};
  C2Check lemdg{"derived: short-time bound on |g(r)|, r in [-2,0)"};

  for (double u : grid.tail) {
    detail::accumulate_ratio(c2ii, u, k.g2(u), k.c1 * std::pow(-u, -k.alpha - 2.0));
    detail::accumulate_ratio(lemc1, u, k.g1(u), bound_tail_g1(k, u));
    detail::accumulate_ratio(lemcg, u, k.g(u), bound_tail_g(k, u));
  }
  for (double u : grid.origin) {
    detail::accumulate_ratio(c2iii, u, k.g2(u), k.c2 * std::pow(-u, -k.zeta - 2.0));
    detail::accumulate_ratio(lemd1, u, k.g1(u), bound_origin_g1(k, u));
    detail::accumulate_ratio(lemdg, u, k.g(u), bound_origin_g(k, u));
  }
  rep.checks = {c2ii, c2iii, lemc1, lemcg, lemd1, lemdg};
  rep.pass = true;
  for (const auto& c : rep.checks)
    if (c.max_ratio > 1.0 + tol || c.failed_points > 0) rep.pass = false;
  return rep;
}

// ---------------------------------------------------------------------------
// Square-integrability of increments: int_R |g(u-t) - g(u)|^2 du, which is
// also the variance of G_t in the unit-constant normalisation. The integral
// is split into a far tail (bounded analytically via bound_tail_g1), a
// mid-range quadrature, and product-integrated panels toward the
// singularities of g at 0- and (u-t) -> 0-.

namespace detail {

// Gauss-Legendre 7 on [a, b].
inline double gl7(const std::function<double(double)>& f, double a, double b) {
  static constexpr double xi[7] = {-0.9491079123427585, -0.7415311855993945, -0.4058451513773972,
                                   0.0, 0.4058451513773972, 0.7415311855993945, 0.9491079123427585};
  static constexpr double wi[7] = {0.1294849661688697, 0.2797053914892766, 0.3818300505051189,
                                   0.4179591836734694, 0.3818300505051189, 0.2797053914892766,
                                   0.1294849661688697};
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  double s = 0.0;
  for (int i = 0; i < 7; ++i) s += wi[i] * f(c + h * xi[i]);
  return s * h;
}

// Quadrature over (lo, hi) with geometric refinement of panels toward hi
// (where the integrand may have an integrable singularity). The final sliver
// of relative width ~1e-16 is left out rather than evaluated at the
// singularity; for integrable power singularities t^{-a}, a < 1, the missed
// mass is O(1e-16^{1-a}).
inline double singular_panels_toward(const std::function<double(double)>& f, double lo, double hi,
                                     int n_panels = 64, double ratio = 0.5) {
  double s = 0.0;
  double right = lo;
  double width = (hi - lo) * (1.0 - ratio);
  const double min_width = (hi - lo) * 1e-16;
  for (int i = 0; i < n_panels && width > min_width; ++i) {
    const double next = std::min(right + width, hi);
    if (next <= right) break;
    s += gl7(f, right, next);
    right = next;
    width *= ratio;
    if (right >= hi) break;
  }
  return s;
}

inline double singular_panels_from(const std::function<double(double)>& f, double lo, double hi,
                                   int n_panels = 60, double ratio = 0.5) {
  // refinement toward lo
  return singular_panels_toward([&](double x) { return f(lo + hi - x); }, lo, hi, n_panels, ratio);
}

}  // namespace detail

struct IncrementVariance {
  double value = 0.0;
  double tail_bound = 0.0;  // analytic bound on the truncated (-inf, -X] part
  bool finite = false;
};

inline IncrementVariance increment_variance(const KernelSpec& k, double t, double rel_tol = 1e-6) {
  if (!(t > 0.0)) throw std::invalid_argument("increment_variance: t must be > 0");
  IncrementVariance out;
  auto diff2 = [&](double u) {
    const double d = k.eval(u - t) - k.eval(u);
    return d * d;
  };
  // innovation part: int_0^t g(u-t)^2 du, singular at u -> t-
  const double inn = detail::singular_panels_toward([&](double u) { return std::pow(k.g(u - t), 2); },
                                                    0.0, t);
  // past near 0-: int_{-t}^{0} (g(u-t)-g(u))^2 du, singular at u -> 0-
  const double near = detail::singular_panels_toward(diff2, -t, 0.0);
  // mid-range: int_{-X}^{-t}, with X extended until the analytic tail bound
  //   |g(u-t)-g(u)| <= t c1/(alpha+1) (-u)^{-(alpha+1)}  (u <= -X)
  // is a negligible fraction of the accumulated value
  const double twoa1 = 2.0 * k.alpha + 1.0;
  const double ct = t * k.c1 / (k.alpha + 1.0);
  auto tail_at = [&](double X) { return ct * ct / twoa1 * std::pow(X, -twoa1); };
  double X = std::max(4.0 * t, 16.0);
  double mid = 0.0;
  {
    double a = -X;
    while (a < -t) {
      double b = std::max(a / 2.0, -t);
      if (b - a < 1e-12) break;
      mid += detail::gl7(diff2, a, b);
      a = b;
    }
    double partial = inn + near + mid;
    // the tail decays like X^{-(2 alpha + 1)}: slow for heavy memory, so the
    // doubling panels may run far out (they stay cheap, one gl7 per octave)
    while (tail_at(X) > std::max(rel_tol * partial, 1e-14) && X < 1e30) {
      mid += detail::gl7(diff2, -2.0 * X, -X);
      X *= 2.0;
      partial = inn + near + mid;
    }
  }
  out.tail_bound = tail_at(X);
  out.value = inn + near + mid;
  out.finite = std::isfinite(out.value) &&
               out.tail_bound < std::max(10.0 * rel_tol * out.value, 1e-12);
  return out;
}

// ---------------------------------------------------------------------------
// Laplace transforms and the conjugate-kernel identity
//   L_h(p) * p^2 * L_g(p) = 1.

// L_f(p) = int_0^inf e^{-pt} f(t) dt for f with an integrable singularity at
// 0+ and at most polynomial growth. Panels are geometrically refined toward
// 0 and extended until e^{-pT}|f(T)|/p is negligible.
inline double laplace_transform(const std::function<double(double)>& f, double p) {
  if (!(p > 0.0)) throw std::invalid_argument("laplace_transform: p must be > 0");
  auto integrand = [&](double t) { return std::exp(-p * t) * f(t); };
  double s = detail::singular_panels_from(integrand, 0.0, 1.0);
  double a = 1.0;
  const double T = std::max(80.0 / p, 80.0);
  while (a < T) {
    const double b = std::min(a * 1.5, T);
    s += detail::gl7(integrand, a, b);
    a = b;
  }
  return s;
}

struct LaplacePoint {
  double p = 0.0;
  double error = 0.0;
  bool ok = true;
  std::string note;
};

struct LaplaceReport {
  std::vector<LaplacePoint> points;
  double max_error = 0.0;
  bool all_ok = true;
};

// Checks |L_h(p) p^2 L_g(p) - 1| over p_grid, with g taken from the kernel
// (as a function of positive argument, g(t) := eval_g(-t)) and h supplied by
// the caller as a map on t > 0.
inline LaplaceReport laplace_conjugate_check(const KernelSpec& k,
                                             const std::function<double(double)>& h,
                                             const std::vector<double>& p_grid) {
  LaplaceReport rep;
  auto gpos = [&](double t) { return k.eval(-t); };
  for (double p : p_grid) {
    LaplacePoint pt;
    pt.p = p;
    const double lg = laplace_transform(gpos, p);
    const double lh = laplace_transform(h, p);
    const double err = std::abs(lh * p * p * lg - 1.0);
    pt.error = err;
    if (!std::isfinite(lg) || !std::isfinite(lh) || !std::isfinite(err)) {
      pt.ok = false;
      pt.error = std::numeric_limits<double>::infinity();
      pt.note = "quadrature failure (non-integrable h near 0?)";
      rep.all_ok = false;
    }
    rep.max_error = std::max(rep.max_error, pt.error);
    rep.points.push_back(pt);
  }
  return rep;
}

// The fractional conjugate pair: g(t) = t^{H-1/2} pairs with
// h(t) = t^{1/2-H} / (Gamma(3/2-H) Gamma(H+1/2)), which satisfies the
// Laplace identity exactly (L{t^a}(p) = Gamma(a+1) p^{-a-1}).
inline std::function<double(double)> fractional_conjugate_laplace(double H) {
  detail::require_h(H, "H");
  const double norm = 1.0 / (std::tgamma(1.5 - H) * std::tgamma(H + 0.5));
  return [H, norm](double t) { return norm * std::pow(t, 0.5 - H); };
}

}  // namespace fracergo::kernels
