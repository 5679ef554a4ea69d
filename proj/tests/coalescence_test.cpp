#include <gtest/gtest.h>

#include <cmath>

#include "fracergo/coalescence.hpp"

using namespace fracergo;

namespace {

noise::NoisePath fractional_window(double H, double T, double step, uint64_t seed) {
  return noise::synthesize_noise(kernels::make_fractional(H), T, step, seed);
}

std::vector<double> component(const coalescence::StickingPlan& plan, int d = 0) {
  std::vector<double> out(plan.ts.size());
  for (std::size_t i = 0; i < plan.ts.size(); ++i) out[i] = plan.phi[i * plan.dim + d];
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// sticking pair

TEST(Coalescence, EqualStartsTrivialPlan) {
  const auto d = dynamics::make_flatbottom_drift(1.0, 1.0, 1);
  const auto path = fractional_window(0.3, 1.0, 1e-3, 1);
  std::vector<double> x0 = {0.4}, y0 = {0.4};
  const auto res = coalescence::run_sticking_pair(d, dynamics::Sigma::scalar(1.0, 1), x0, y0,
                                                  0.25, path, 1.0);
  EXPECT_TRUE(res.coalesced);
  for (double g : res.pair.gap) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(res.plan.phi_norm_inf(), 0.0);
}

TEST(Coalescence, InitialDriftMagnitude) {
  // beta = 1/4, sigma = 1: |phi(0)| = 2 varpi delta^{1-beta} = 4 delta / beta
  // = 16 delta.
  const auto d = dynamics::make_flatbottom_drift(1.0, 1.0, 1);
  const auto path = fractional_window(0.3, 1.0, 1e-3, 2);
  const double delta = 0.1;
  std::vector<double> x0 = {0.0}, y0 = {delta};
  const auto res = coalescence::run_sticking_pair(d, dynamics::Sigma::scalar(1.0, 1), x0, y0,
                                                  0.25, path, 1.0);
  EXPECT_NEAR(std::abs(res.plan.phi[0]), 16.0 * delta, 1e-12);
}

TEST(Coalescence, CoalescesByHalfAndStays) {
  const auto d = dynamics::make_flatbottom_drift(1.0, 1.0, 1);
  const auto path = fractional_window(0.3, 2.0, 1e-3, 3);
  for (double delta : {1e-3, 1e-2, 1e-1, 1.0}) {
    for (double beta : {0.125, 0.25, 0.375}) {
      std::vector<double> x0 = {0.2}, y0 = {0.2 + delta};
      const auto res = coalescence::run_sticking_pair(d, dynamics::Sigma::scalar(1.0, 1), x0, y0,
                                                      beta, path, 2.0);
      EXPECT_TRUE(res.coalesced) << "delta=" << delta << " beta=" << beta;
      EXPECT_LE(res.coalesce_time, 0.5 + 1e-2);
      for (std::size_t i = 0; i < res.pair.times.size(); ++i)
        if (res.pair.times[i] >= 0.5)
          EXPECT_LE(res.pair.gap[i], 1e-6) << "t=" << res.pair.times[i];
    }
  }
}

TEST(Coalescence, PhiScalingSlopes) {
  // ||phi||_inf ~ delta (slope 1) and ||phi'||_inf ~ delta^{1-2 beta}.
  const auto d = dynamics::make_flatbottom_drift(1.0, 1.0, 1);
  const auto path = fractional_window(0.3, 1.0, 1e-3, 4);
  const double beta = 0.25;
  std::vector<double> log_delta, log_phi, log_phip;
  for (double delta : {1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0}) {
    std::vector<double> x0 = {0.0}, y0 = {delta};
    const auto res = coalescence::run_sticking_pair(d, dynamics::Sigma::scalar(1.0, 1), x0, y0,
                                                    beta, path, 1.0);
    log_delta.push_back(std::log(delta));
    log_phi.push_back(std::log(res.plan.phi_norm_inf()));
    log_phip.push_back(std::log(res.plan.phi_prime_norm_inf()));
  }
  const auto slope_phi = stats::linear_fit(log_delta, log_phi);
  const auto slope_phip = stats::linear_fit(log_delta, log_phip);
  EXPECT_NEAR(slope_phi.slope, 1.0, 0.05);
  EXPECT_GE(slope_phip.slope, 1.0 - 2.0 * beta - 0.1);
}

TEST(Coalescence, RejectsBadInputs) {
  const auto d = dynamics::make_flatbottom_drift(1.0, 1.0, 1);
  const auto path = fractional_window(0.3, 1.0, 1e-2, 5);
  std::vector<double> x0 = {0.0}, y0 = {0.5};
  EXPECT_THROW(coalescence::run_sticking_pair(d, dynamics::Sigma::scalar(1.0, 1), x0, y0, 0.6,
                                              path, 1.0),
               std::invalid_argument);
  dynamics::Sigma nonscalar{{1.0, 2.0}};
  const auto d2 = dynamics::make_flatbottom_drift(1.0, 1.0, 2);
  std::vector<double> x2 = {0.0, 0.0}, y2 = {0.5, 0.0};
  const auto path2 = noise::synthesize_noise(kernels::make_fractional(0.3), 1.0, 1e-2, 6, 2);
  EXPECT_THROW(coalescence::run_sticking_pair(d2, nonscalar, x2, y2, 0.25, path2, 1.0),
               std::logic_error);
}

// ---------------------------------------------------------------------------
// fractional inverse-kernel transform

TEST(Coalescence, TransformZeroPhi) {
  std::vector<double> phi(101, 0.0);
  for (double H : {0.3, 0.5, 0.7}) {
    const auto psi = coalescence::inverse_kernel_transform_fbm(phi, 0.01, H);
    for (double v : psi) EXPECT_EQ(v, 0.0);
  }
}

TEST(Coalescence, TransformBrownianIsIdentity) {
  std::vector<double> phi(101);
  for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = std::sin(0.06 * i);
  const auto psi = coalescence::inverse_kernel_transform_fbm(phi, 0.01, 0.5);
  for (std::size_t i = 0; i < phi.size(); ++i) EXPECT_EQ(psi[i], phi[i]);
}

TEST(Coalescence, TransformConstantPhiClosedForm) {
  // H = 0.3, phi = 1: Psi(t) = (0.2) int_0^t (t-s)^{-0.8} ds = t^{0.2}.
  const double dt = 1e-3;
  std::vector<double> phi(1001, 1.0);
  const auto psi = coalescence::inverse_kernel_transform_fbm(phi, dt, 0.3);
  for (std::size_t i : {std::size_t(10), std::size_t(100), std::size_t(500), std::size_t(1000)}) {
    const double t = static_cast<double>(i) * dt;
    EXPECT_NEAR(psi[i], std::pow(t, 0.2), 1e-6) << "t=" << t;
  }
}

TEST(Coalescence, TransformHighHContinuousCheck) {
  // H = 0.7, phi smooth: cross-check the closed-form product integration
  // against a brute-force fine-grid evaluation of
  // phi(0) t^{-0.2} + int phi'(s) (t-s)^{-0.2} ds.
  const double dt = 2e-3;
  const std::size_t n = 500;
  std::vector<double> phi(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    const double s = static_cast<double>(i) * dt;
    phi[i] = 1.0 + 0.5 * std::sin(3.0 * s);
  }
  const auto psi = coalescence::inverse_kernel_transform_fbm(phi, dt, 0.7);
  auto brute = [&](double t) {
    double s = phi[0] * std::pow(t, -0.2);
    const int m = 40000;
    for (int j = 0; j < m; ++j) {
      const double u = (j + 0.5) * t / m;
      const double phip = 0.5 * 3.0 * std::cos(3.0 * u);
      s += phip * std::pow(t - u, -0.2) * t / m;
    }
    return s;
  };
  for (double t : {0.25, 0.5, 0.9}) {
    const std::size_t i = static_cast<std::size_t>(std::llround(t / dt));
    EXPECT_NEAR(psi[i], brute(t), 5e-3) << "t=" << t;
  }
}

// ---------------------------------------------------------------------------
// tail transform

TEST(Coalescence, TailTransformZero) {
  std::vector<double> phi(101, 0.0);
  const auto tail = coalescence::tail_transform_fbm(phi, 0.01, 0.3, {1.0, 2.0, 5.0});
  for (double v : tail) EXPECT_EQ(v, 0.0);
}

TEST(Coalescence, TailTransformLogIntegral) {
  // phi = 1 on [0, 1/2], H = 1/2: Psi(2) = int_0^{1/2} (2-s)^{-1} ds = ln(4/3).
  const double dt = 1e-3;
  const std::size_t n = 1000;
  std::vector<double> phi(n + 1, 0.0);
  for (std::size_t i = 0; i <= n / 2; ++i) phi[i] = 1.0;
  // drop instantly to zero right after 1/2 to respect the support contract
  const auto tail = coalescence::tail_transform_fbm(phi, dt, 0.5, {2.0});
  EXPECT_NEAR(tail[0], std::log(4.0 / 3.0), 2e-3);
}

TEST(Coalescence, TailTransformSupportViolationThrows) {
  std::vector<double> phi(101, 1.0);  // nonzero on (1/2, 1]
  EXPECT_THROW(coalescence::tail_transform_fbm(phi, 0.01, 0.3, {2.0}), std::invalid_argument);
}

TEST(Coalescence, TailDecayEnvelope) {
  // |Psi(t)| <= (1/2) ||phi||_inf (t - 1/2)^{-H-1/2} for the unit constant.
  const double dt = 1e-3;
  const std::size_t n = 1000;
  std::vector<double> phi(n + 1, 0.0);
  for (std::size_t i = 0; i <= n / 2; ++i) phi[i] = 0.7;
  const double H = 0.3;
  const std::vector<double> ts = {1.0, 1.5, 2.0, 4.0, 8.0};
  const auto tail = coalescence::tail_transform_fbm(phi, dt, H, ts);
  for (std::size_t j = 0; j < ts.size(); ++j) {
    const double envelope = 0.5 * 0.7 * std::pow(ts[j] - 0.5, -H - 0.5);
    EXPECT_LE(std::abs(tail[j]), envelope * (1.0 + 1e-9)) << "t=" << ts[j];
  }
}

TEST(Coalescence, TailL2ScalesWithGap) {
  // int_1^T |Psi|^2 across a gap sweep: log-log slope >= 0.9.
  const auto d = dynamics::make_flatbottom_drift(1.0, 1.0, 1);
  const auto path = fractional_window(0.3, 1.0, 1e-3, 7);
  std::vector<double> log_delta, log_l2;
  std::vector<double> ts;
  for (double t = 1.0; t <= 16.0; t += 0.25) ts.push_back(t);
  for (double delta : {1e-2, 3e-2, 1e-1, 3e-1, 1.0}) {
    std::vector<double> x0 = {0.0}, y0 = {delta};
    const auto res = coalescence::run_sticking_pair(d, dynamics::Sigma::scalar(1.0, 1), x0, y0,
                                                    0.25, path, 1.0);
    const auto tail = coalescence::tail_transform_fbm(component(res.plan), 1e-3, 0.3, ts, 1e-5);
    double l2 = 0.0;
    for (std::size_t j = 0; j + 1 < ts.size(); ++j) l2 += tail[j] * tail[j] * (ts[j + 1] - ts[j]);
    log_delta.push_back(std::log(delta));
    log_l2.push_back(std::log(l2));
  }
  const auto fit = stats::linear_fit(log_delta, log_l2);
  EXPECT_GE(fit.slope, 0.9);
}

// ---------------------------------------------------------------------------
// general (C3) transform

TEST(Coalescence, GeneralTransformMatchesFractionalLowH) {
  // (C3_ii) route with h(t) = (-t)^{1/2-H}, H = 0.3, against the closed-form
  // route: algebraically an integration by parts, numerically < 1e-4.
  const double dt = 2e-3, H = 0.3;
  const std::size_t n = 500;
  std::vector<double> phi(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    const double s = static_cast<double>(i) * dt;
    phi[i] = std::cos(2.0 * s) + 0.3 * s;
  }
  const auto direct = coalescence::inverse_kernel_transform_fbm(phi, dt, H);
  const auto general = coalescence::inverse_kernel_transform_general(
      phi, dt, coalescence::fractional_conjugate(H), coalescence::C3Regime::ii);
  double sup = 0.0;
  for (std::size_t i = 1; i <= n; ++i) sup = std::max(sup, std::abs(direct[i] - general[i]));
  EXPECT_LT(sup, 1e-4);
}

TEST(Coalescence, GeneralTransformC3iBound) {
  // (C3_i) route: |Psi(t)| <= (int_0^1 |h'(-u)| du) ||phi||_inf pointwise;
  // for the fractional conjugate at H < 1/2 the integral is exactly 1.
  const double dt = 2e-3, H = 0.3;
  const std::size_t n = 500;
  std::vector<double> phi(n + 1);
  for (std::size_t i = 0; i <= n; ++i) phi[i] = std::sin(4.0 * i * dt);
  const auto psi = coalescence::inverse_kernel_transform_general(
      phi, dt, coalescence::fractional_conjugate(H), coalescence::C3Regime::i);
  double phi_inf = 0.0;
  for (double v : phi) phi_inf = std::max(phi_inf, std::abs(v));
  for (double v : psi) EXPECT_LE(std::abs(v), phi_inf * (1.0 + 1e-6));
}

TEST(Coalescence, GeneralTransformC3iMatchesClosedForm) {
  // for H < 1/2 the (C3_i) route is the same integral as the closed form
  const double dt = 2e-3, H = 0.3;
  const std::size_t n = 400;
  std::vector<double> phi(n + 1);
  for (std::size_t i = 0; i <= n; ++i) phi[i] = 1.0 + 0.2 * std::sin(5.0 * i * dt);
  const auto direct = coalescence::inverse_kernel_transform_fbm(phi, dt, H);
  const auto via_i = coalescence::inverse_kernel_transform_general(
      phi, dt, coalescence::fractional_conjugate(H), coalescence::C3Regime::i);
  for (std::size_t i = 1; i <= n; i += 40)
    EXPECT_NEAR(via_i[i], direct[i], 1e-5) << "i=" << i;
}

TEST(Coalescence, GeneralTransformRejectsBadRegime) {
  // H > 1/2: h(0-) diverges, so the (C3_i) precondition check must throw.
  std::vector<double> phi(101, 1.0);
  EXPECT_THROW(coalescence::inverse_kernel_transform_general(
                   phi, 0.01, coalescence::fractional_conjugate(0.7), coalescence::C3Regime::i),
               std::invalid_argument);
}

TEST(Coalescence, GeneralTransformZeroPhi) {
  std::vector<double> phi(101, 0.0);
  const auto psi = coalescence::inverse_kernel_transform_general(
      phi, 0.01, coalescence::fractional_conjugate(0.3), coalescence::C3Regime::ii);
  for (double v : psi) EXPECT_NEAR(v, 0.0, 1e-15);
}

// ---------------------------------------------------------------------------
// Girsanov bounds

TEST(Coalescence, GirsanovZeroShift) {
  std::vector<double> psi(101, 0.0);
  const auto rep = coalescence::girsanov_tv_bound(psi, 0.01, 2000, 11);
  EXPECT_EQ(rep.tv_bound_plus, 0.0);
  EXPECT_EQ(rep.tv_bound_abs, 0.0);
  EXPECT_NEAR(rep.e_d, 1.0, 1e-12);
  EXPECT_EQ(rep.analytic, 0.0);
}

TEST(Coalescence, GirsanovDeterministicOracle) {
  // int |Psi|^2 = 1: exact TV = 2 Phi(1/2) - 1 ~= 0.38292;
  // E[(D-1)_+] matches it and E|D-1| matches twice it, within CI.
  const double dt = 1e-3;
  std::vector<double> psi(1001, 1.0);
  const auto rep = coalescence::girsanov_tv_bound(psi, dt, 100000, 12);
  EXPECT_NEAR(rep.l2_psi, 1.0, 1e-12);
  const double exact = 2.0 * stats::normal_cdf(0.5) - 1.0;
  EXPECT_NEAR(rep.analytic, exact, 1e-12);
  EXPECT_NEAR(rep.tv_bound_plus, exact, rep.ci_plus + 1e-3);
  EXPECT_NEAR(rep.tv_bound_abs, 2.0 * exact, rep.ci_abs + 2e-3);
  EXPECT_NEAR(rep.e_d, 1.0, 0.02);
}

TEST(Coalescence, GirsanovMartingaleProperty) {
  for (double scale : {0.5, 2.0}) {
    std::vector<double> psi(501);
    for (std::size_t i = 0; i < psi.size(); ++i) psi[i] = scale * std::sin(0.02 * i);
    const auto rep = coalescence::girsanov_tv_bound(psi, 2e-3, 50000, 13);
    EXPECT_NEAR(rep.e_d, 1.0, 0.05);
  }
}

// ---------------------------------------------------------------------------
// two-stage estimate

TEST(Coalescence, TwoStageIdenticalStartIsZero) {
  const auto d = dynamics::make_flatbottom_drift(1.0, 1.0, 1);
  coalescence::TwoStageOptions opt;
  opt.start_from_stationary = true;
  opt.t_burn = 10.0;
  const auto rep = coalescence::two_stage_tv_estimate(d, dynamics::Sigma::scalar(1.0, 1),
                                                      kernels::make_fractional(0.3), 1.0, 20, 14,
                                                      opt);
  EXPECT_EQ(rep.estimate, 0.0);
}

TEST(Coalescence, TwoStageDecreasesInT) {
  const auto d = dynamics::make_flatbottom_drift(1.0, 1.0, 1);
  coalescence::TwoStageOptions opt;
  opt.t_burn = 20.0;
  const auto k = kernels::make_fractional(0.3);
  const auto r5 = coalescence::two_stage_tv_estimate(d, dynamics::Sigma::scalar(1.0, 1), k, 5.0,
                                                     120, 15, opt);
  const auto r10 = coalescence::two_stage_tv_estimate(d, dynamics::Sigma::scalar(1.0, 1), k, 10.0,
                                                      120, 15, opt);
  EXPECT_LE(r10.estimate, r5.estimate + 0.1);
  EXPECT_LE(r10.estimate, r10.unoptimized_estimate + 1e-12);
}
