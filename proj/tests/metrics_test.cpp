#include <gtest/gtest.h>

#include <cmath>

#include "fracergo/metrics.hpp"

using namespace fracergo;

namespace {

metrics::DecayCurve synthetic_curve(const std::vector<double>& ts,
                                    const std::function<double(double)>& f) {
  metrics::DecayCurve c;
  c.ts = ts;
  for (double t : ts) {
    c.mean_sq.push_back(f(t));
    c.ci_lo.push_back(f(t) * 0.99);
    c.ci_hi.push_back(f(t) * 1.01);
  }
  c.n = 1;
  return c;
}

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = a + (b - a) * i / (n - 1);
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// rate fitting

TEST(Metrics, FitRecoversHalfExponent) {
  const auto ts = linspace(2.0, 30.0, 30);
  const auto curve = synthetic_curve(ts, [](double t) { return std::exp(-std::pow(t, 0.5)); });
  const auto fit = metrics::fit_subexponential(curve);
  EXPECT_NEAR(fit.gamma, 0.5, 0.02);
  EXPECT_NEAR(fit.c, 1.0, 0.05);
  EXPECT_GT(fit.r2, 0.999);
}

TEST(Metrics, FitExponentialHitsGammaOneBoundary) {
  const auto ts = linspace(2.0, 12.0, 24);
  const auto curve = synthetic_curve(ts, [](double t) { return std::exp(-2.0 * t); });
  const auto fit = metrics::fit_subexponential(curve);
  EXPECT_GE(fit.gamma, 0.95);
  EXPECT_LE(fit.gamma, 1.0);
}

TEST(Metrics, FitSelfConsistencyAcrossGammaAndC) {
  for (double g0 : {0.3, 0.5, 0.8}) {
    for (double c0 : {0.5, 1.0, 2.0}) {
      const auto ts = linspace(2.0, 40.0, 40);
      const auto curve = synthetic_curve(
          ts, [g0, c0](double t) { return c0 * std::exp(-std::pow(t, g0) / c0); });
      const auto fit = metrics::fit_subexponential(curve);
      EXPECT_NEAR(fit.gamma, g0, 0.02 * g0 + 1e-3) << "g0=" << g0 << " c0=" << c0;
      EXPECT_NEAR(fit.c, c0, 0.02 * c0 + 1e-3) << "g0=" << g0 << " c0=" << c0;
    }
  }
}

TEST(Metrics, FitRobustToMultiplicativeNoise) {
  const auto ts = linspace(2.0, 30.0, 40);
  metrics::DecayCurve curve;
  curve.ts = ts;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double noise = 1.0 + 0.05 * (rng::uniform01(99, 0, i) * 2.0 - 1.0);
    const double v = std::exp(-std::pow(ts[i], 0.5)) * noise;
    curve.mean_sq.push_back(v);
    curve.ci_lo.push_back(v * 0.9);
    curve.ci_hi.push_back(v * 1.1);
  }
  const auto fit = metrics::fit_subexponential(curve);
  EXPECT_NEAR(fit.gamma, 0.5, 0.1);
}

TEST(Metrics, FitRejectsNonPositiveWindow) {
  metrics::DecayCurve curve;
  curve.ts = {2.0, 3.0, 4.0};
  curve.mean_sq = {1.0, 0.0, -1.0};
  curve.ci_lo = {0.9, -0.1, -1.1};
  curve.ci_hi = {1.1, 0.1, -0.9};
  EXPECT_THROW(metrics::fit_subexponential_xy(curve.ts, curve.mean_sq), std::invalid_argument);
}

TEST(Metrics, FitWindowStopsAtMonteCarloFloor) {
  // values below 3 CI half-widths are excluded from the fit window
  std::vector<double> ts = linspace(2.0, 20.0, 19);
  metrics::DecayCurve curve;
  curve.ts = ts;
  for (double t : ts) {
    const double v = std::exp(-std::pow(t, 0.5));
    curve.mean_sq.push_back(std::max(v, 1e-3));  // artificial floor
    curve.ci_lo.push_back(std::max(v, 1e-3) - 1e-3);
    curve.ci_hi.push_back(std::max(v, 1e-3) + 1e-3);
  }
  const auto fit = metrics::fit_subexponential(curve);
  EXPECT_LT(fit.t_max, 20.0);  // the floor region was dropped
}

// ---------------------------------------------------------------------------
// gamma exponent

TEST(Metrics, GammaExponentClosedForm) {
  const double inf = std::numeric_limits<double>::infinity();
  // alpha = 0 (H = 1/2), eps -> 0, upsilon = inf: gamma -> 1/2
  EXPECT_NEAR(metrics::gamma_exponent(0.0, 1e-9, inf), 0.5, 1e-6);
  // H = 3/4: alpha = -1/4, gamma -> 2(1/4)/(1 + 1/2) = 1/3
  EXPECT_NEAR(metrics::gamma_exponent(-0.25, 1e-9, inf), 1.0 / 3.0, 1e-6);
  // fractional identity: gamma = 1 - 1/(3-2H) at eps -> 0
  for (double H : {0.3, 0.5, 0.7}) {
    EXPECT_NEAR(metrics::gamma_exponent(0.5 - H, 1e-10, inf), 1.0 - 1.0 / (3.0 - 2.0 * H), 1e-6);
  }
}

TEST(Metrics, GammaExponentDomain) {
  EXPECT_THROW(metrics::gamma_exponent(0.0, 0.5, 1.0), std::domain_error);
  EXPECT_THROW(metrics::gamma_exponent(0.0, -0.1, 1.0), std::domain_error);
  EXPECT_THROW(metrics::gamma_exponent(0.0, 0.1, 0.0), std::domain_error);
}

// ---------------------------------------------------------------------------
// W2 and TV estimators

TEST(Metrics, W2IdenticalSamples) {
  std::vector<double> a = {0.3, -1.0, 2.5, 0.0};
  EXPECT_EQ(metrics::wasserstein2_1d(a, a), 0.0);
}

TEST(Metrics, W2PointMasses) {
  std::vector<double> a(100, 0.0), b(100, 1.0);
  EXPECT_DOUBLE_EQ(metrics::wasserstein2_1d(a, b), 1.0);
}

TEST(Metrics, W2GaussianMeanShift) {
  // N(0,1) vs N(2,1): W2 equals the mean gap 2.
  const std::size_t n = 100000;
  std::vector<double> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = rng::normal(7, 0, i);
    b[i] = 2.0 + rng::normal(7, 1, i);
  }
  EXPECT_NEAR(metrics::wasserstein2_1d(a, b), 2.0, 0.02);
}

TEST(Metrics, W2EmptyThrows) {
  std::vector<double> a, b = {1.0};
  EXPECT_THROW(metrics::wasserstein2_1d(a, b), std::invalid_argument);
}

TEST(Metrics, TvFromCoupling) {
  std::vector<char> all_good(50, 1);
  EXPECT_EQ(metrics::tv_from_coupling(all_good).estimate, 0.0);
  std::vector<char> half(50, 1);
  for (std::size_t i = 0; i < 25; ++i) half[i] = 0;
  EXPECT_DOUBLE_EQ(metrics::tv_from_coupling(half).estimate, 0.5);
}

// ---------------------------------------------------------------------------
// decay curves

TEST(Metrics, DecayLinearDriftClosedForm) {
  // b = -x: the synchronous gap is e^{-t} |X_0 - Y_0| pathwise, so the curve
  // is e^{-2t} times its value at 0.
  const auto k = kernels::make_fractional(0.5);
  const auto d = dynamics::make_linear_drift(1.0, 1);
  metrics::X0Law law;
  law.point = {1.0};
  metrics::DecayOptions opt;
  opt.t_burn = 10.0;
  const std::vector<double> ts = {0.0, 0.5, 1.0, 2.0};
  const auto curve =
      metrics::decay_curve(d, dynamics::Sigma::scalar(1.0, 1), k, law, ts, 200, 55, opt);
  for (std::size_t j = 1; j < ts.size(); ++j) {
    const double want = std::exp(-2.0 * ts[j]) * curve.mean_sq[0];
    EXPECT_NEAR(curve.mean_sq[j] / want, 1.0, 0.05) << "t=" << ts[j];
  }
}

TEST(Metrics, DecayStationaryStartNearZero) {
  // X0 drawn from (a warm-started realisation of) the stationary law itself:
  // the curve sits at the coupling floor.
  const auto k = kernels::make_fractional(0.5);
  const auto d = dynamics::make_linear_drift(1.0, 1);
  metrics::X0Law law;
  law.stationary = true;
  metrics::DecayOptions opt;
  opt.t_burn = 20.0;
  const auto curve = metrics::decay_curve(d, dynamics::Sigma::scalar(1.0, 1), k, law,
                                          {0.5, 1.0, 2.0}, 50, 56, opt);
  for (double v : curve.mean_sq) EXPECT_LT(v, 1e-12);
}

TEST(Metrics, DecayCurveDecreasesForFlatBottom) {
  const auto k = kernels::make_fractional(0.3);
  const auto d = dynamics::make_flatbottom_drift(1.0, 1.0, 1);
  metrics::X0Law law;
  law.point = {3.0};
  metrics::DecayOptions opt;
  opt.t_burn = 20.0;
  const auto curve = metrics::decay_curve(d, dynamics::Sigma::scalar(1.0, 1), k, law,
                                          {1.0, 4.0, 10.0}, 150, 57, opt);
  EXPECT_GT(curve.mean_sq[0], curve.mean_sq[1]);
  EXPECT_GT(curve.mean_sq[1], curve.mean_sq[2]);
}

TEST(Metrics, W2BoundChain) {
  // the 1-d W2 between the X and Y marginal samples never exceeds the
  // coupled bound sqrt(E gap^2) + CI.
  const auto k = kernels::make_fractional(0.5);
  const auto d = dynamics::make_flatbottom_drift(1.0, 1.0, 1);
  const std::size_t n = 200;
  const double T = 3.0, step = 1e-2, t_burn = 20.0;
  const noise::SynthPlan plan = noise::make_synth_plan(k, t_burn + T + step, step);
  const std::size_t i_burn = static_cast<std::size_t>(std::llround(t_burn / step));
  const std::size_t i_t = i_burn + static_cast<std::size_t>(std::llround(T / step));
  std::vector<double> xs(n), ys(n), sq(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto path = noise::synthesize_noise(plan, rng::mix3(58, 0, r), 1);
    std::vector<double> y0 = {0.0}, x0 = {2.5};
    const auto ty = dynamics::integrate(d, dynamics::Sigma::scalar(1.0, 1), y0, path);
    dynamics::IntegrateOptions iopt;
    iopt.start_index = i_burn;
    const auto tx = dynamics::integrate(d, dynamics::Sigma::scalar(1.0, 1), x0, path, iopt);
    xs[r] = tx.at(i_t - i_burn)[0];
    ys[r] = ty.at(i_t)[0];
    sq[r] = (xs[r] - ys[r]) * (xs[r] - ys[r]);
  }
  const auto ci = stats::mean_ci(sq);
  const double w2 = metrics::wasserstein2_1d(xs, ys);
  EXPECT_LE(w2, std::sqrt(ci.mean + ci.half_width) + 1e-9);
}
