#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "kamp/normal.hpp"
#include "kamp/quadrature.hpp"
#include "kamp/state_evolution.hpp"

using namespace kamp;

namespace {

const AmpParams kBase{0.2, 1.0, 0.5};
const PriorSpec kExp(0.2, Exponential{1.0});

// Plain Monte Carlo of E(eta(Pi + tau W) - Pi)^2 and P(|Pi + tau W| > alpha tau).
std::pair<std::array<double, 2>, std::array<double, 2>> monte_carlo(const PriorSpec &p, double alpha,
                                                                    double tau, std::size_t n,
                                                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  const auto pi = p.sample(n, rng);
  double s1 = 0, s2 = 0, c = 0;
  for (double b : pi) {
    const double y = b + tau * z(rng);
    const double e = soft_threshold(y, alpha * tau) - b;
    s1 += e * e;
    s2 += e * e * e * e;
    c += std::abs(y) > alpha * tau;
  }
  const double m = s1 / n, g = c / n;
  return {{m, std::sqrt((s2 / n - m * m) / n)}, {g, std::sqrt(g * (1 - g) / n)}};
}

} // namespace

TEST(Normal, SoftThreshold) {
  EXPECT_DOUBLE_EQ(soft_threshold(2.0, 1.5), 0.5);
  EXPECT_DOUBLE_EQ(soft_threshold(-2.0, 1.5), -0.5);
  EXPECT_DOUBLE_EQ(soft_threshold(0.7, 1.5), 0.0);
}

TEST(Quadrature, KnownIntegrals) {
  const std::array<double, 2> tol{1e-14, 1e-14};
  const std::vector<double> pts{0.0, 1.0, 3.0};
  const auto r = integrate_gk21<2>(
      [](double x) { return std::array<double, 2>{std::exp(-x), x * x}; }, pts, tol);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.value[0], 1.0 - std::exp(-3.0), 1e-13);
  EXPECT_NEAR(r.value[1], 9.0, 1e-12);
  // Kink handled by a breakpoint.
  const std::vector<double> k{-1.0, 0.3, 2.0};
  const auto a = integrate_gk21<1>([](double x) { return std::array<double, 1>{std::abs(x - 0.3)}; },
                                   k, std::array<double, 1>{1e-14});
  EXPECT_NEAR(a.value[0], 0.5 * 1.3 * 1.3 + 0.5 * 1.7 * 1.7, 1e-12);
}

TEST(AlphaZero, DeltaOneIsZero) { EXPECT_NEAR(alpha_zero(1.0), 0.0, 1e-12); }

TEST(AlphaZero, SignsAndDefiningEquation) {
  auto lhs = [](double t) { return (1 + t * t) * normal_cdf(-t) - t * normal_pdf(t); };
  // Strictly decreasing on [-10, 10].
  for (double t = -10.0; t < 10.0; t += 0.01) {
    ASSERT_GT(lhs(t), lhs(t + 0.01));
  }
  EXPECT_GT(alpha_zero(0.5), 0.0);
  EXPECT_LT(alpha_zero(1.5), 0.0);
  for (double d : {0.25, 0.5, 1.0, 1.5, 2.0}) {
    EXPECT_NEAR(lhs(alpha_zero(d)), d / 2, 1e-12) << d;
    // Bisection oracle.
    double lo = -10, hi = 10;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (lhs(mid) > d / 2 ? lo : hi) = mid;
    }
    EXPECT_NEAR(alpha_zero(d), lo, 1e-10) << d;
  }
}

TEST(Functionals, NullRiskIdentity) {
  const PriorSpec p(1e-12, Exponential{1.0});
  const double want = 2 * (2 * normal_cdf(-1.0) - normal_pdf(1.0));
  EXPECT_NEAR(want, 0.150680, 1e-6);
  EXPECT_NEAR(functional_f(p, 1.0, 1.0), want, 1e-11);
  for (double a : {0.3, 1.0, 2.5}) {
    EXPECT_NEAR(functional_g(p, a, 0.7), 2 * normal_cdf(-a), 1e-11);
  }
  EXPECT_NEAR(functional_g(kExp, 1e-9, 0.7), 1.0, 1e-8);
}

TEST(Functionals, LargeAlphaGivesSecondMoment) {
  for (const auto &p : {kExp, PriorSpec(0.1, PointMass{1.9})}) {
    EXPECT_NEAR(functional_f(p, 60.0, 0.5), p.second_moment(), 1e-10);
  }
}

TEST(Functionals, PointMassExceedance) {
  const PriorSpec p(0.2, PointMass{10.0});
  const double want = 0.8 * 2 * normal_cdf(-1.0) + 0.2 * (normal_cdf(19.0) + normal_cdf(-21.0));
  EXPECT_NEAR(functional_g(p, 1.0, 0.5), want, 1e-13);
  EXPECT_NEAR(want, 0.4539, 1e-4);
}

TEST(Functionals, SelfConsistentFixedPoint) {
  const StateEvolution se(kBase, kExp);
  const AlphaState st = se.at_alpha(1.1924);
  // Independent quadrature solve gives tau = 0.599472.
  EXPECT_NEAR(st.tau, 0.599472, 2e-6);
  const double f = functional_f(kExp, st.alpha, st.tau);
  EXPECT_NEAR(st.tau * st.tau, 0.25 + f, 1e-10);
}

TEST(Functionals, MonteCarloAgreement) {
  const std::vector<std::tuple<PriorSpec, double, double>> cases{
      {kExp, 1.1, 0.77},
      {PriorSpec(0.1, PointMass{1.9}), 2.0, 0.6},
      {PriorSpec(0.3, GammaMixture{{0.1, 2.2, 5.0}, {0.2, 0.5, 0.3}, 1.0}), 0.5, 1.3},
      {PriorSpec(0.4, TabulatedCdf{{0.5, 1.0, 3.0}, {0.2, 0.6, 1.0}}), 3.0, 0.4}};
  std::uint64_t seed = 1;
  for (const auto &[p, a, t] : cases) {
    const auto [f, g] = monte_carlo(p, a, t, 1000000, seed++);
    EXPECT_LE(std::abs(functional_f(p, a, t) - f[0]), 3 * f[1]) << p.describe();
    EXPECT_LE(std::abs(functional_g(p, a, t) - g[0]), 3 * g[1]) << p.describe();
  }
}

TEST(StateEvolution, ResidualsOnGrid) {
  for (const auto &[params, prior] :
       std::vector<std::pair<AmpParams, PriorSpec>>{{kBase, kExp},
                                                    {{0.1, 1.0, 0.5}, PriorSpec(0.1, PointMass{1.9})},
                                                    {{0.1, 1.0, 1.0}, PriorSpec(0.1, GammaMixture{{0.1, 5.0}, {0.5, 0.5}, 1.0})}}) {
    const StateEvolution se(params, prior);
    std::optional<double> hint;
    for (double lam : log_grid(5.0, 0.01, 100)) {
      const AmpFixedPoint fp = se.solve(lam, hint);
      hint = fp.alpha;
      EXPECT_LE(std::abs(fp.tau_residual), 1e-9);
      EXPECT_LE(std::abs(fp.lambda_residual), 1e-8);
      // Independent re-evaluation of both equations.
      const double f = functional_f(prior.with_epsilon(params.epsilon), fp.alpha, fp.tau);
      const double g = functional_g(prior.with_epsilon(params.epsilon), fp.alpha, fp.tau);
      EXPECT_NEAR(fp.tau * fp.tau, params.sigma * params.sigma + f / params.delta, 1e-9);
      EXPECT_NEAR((1 - g / params.delta) * fp.alpha * fp.tau, lam, 1e-8);
      const TradeoffPoint tp = se.tradeoff(fp);
      const double nulls = 2 * (1 - params.epsilon) * normal_cdf(-fp.alpha);
      EXPECT_NEAR(tp.fdp_inf * (nulls + params.epsilon * tp.tpp_inf), nulls, 1e-12);
    }
  }
}

TEST(StateEvolution, NoiselessNullIsBoundary) {
  const AmpParams p{1e-12, 1.0, 0.0};
  EXPECT_THROW(solve_state_evolution(p, PriorSpec(1e-12, Exponential{1.0}), 0.5), BoundaryError);
}

TEST(StateEvolution, OraclePowerAtTenPercent) {
  const TargetSolution s = lambda_for_target(kBase, kExp, 0.1, OracleMode{});
  EXPECT_NEAR(s.tpp, 0.187, 0.005);
  EXPECT_NEAR(s.fdp, 0.1, 1e-6);
  EXPECT_FALSE(s.boundary);
  // FDP brackets q around the solution.
  const StateEvolution se(kBase, kExp);
  const double lo = se.tradeoff(se.solve(s.lambda - 1e-4)).fdp_inf;
  const double hi = se.tradeoff(se.solve(s.lambda + 1e-4)).fdp_inf;
  EXPECT_GT(lo, 0.1);
  EXPECT_LT(hi, 0.1);
}

TEST(StateEvolution, TargetAtMaximumIsBoundary) {
  const StateEvolution se(kBase, kExp);
  const double top = se.tradeoff(se.solve(1e-3)).fdp_inf;
  const TargetSolution s = lambda_for_target(kBase, kExp, std::min(0.999, top + 1e-3), OracleMode{});
  EXPECT_TRUE(s.boundary);
  EXPECT_NEAR(s.lambda, 1e-3, 1e-9);
}

TEST(StateEvolution, TradeoffLimits) {
  // Strong signals are all found.
  const StateEvolution big({0.2, 1.0, 0.5}, PriorSpec(0.2, PointMass{1e4}));
  EXPECT_NEAR(big.tradeoff(big.solve(1.0)).tpp_inf, 1.0, 1e-12);
  // Nearly all signal leaves no false discoveries.
  const StateEvolution full({1 - 1e-12, 2.0, 0.5}, PriorSpec(0.5, Exponential{1.0}));
  EXPECT_NEAR(full.tradeoff(full.solve(1.0)).fdp_inf, 0.0, 1e-10);
}

TEST(Augmented, Params) {
  const AugmentedParams a = augmented_params({0.2, 1.0, 0.5}, 1.0);
  EXPECT_DOUBLE_EQ(a.delta_prime, 0.5);
  EXPECT_DOUBLE_EQ(a.epsilon_prime, 0.1);
  const AugmentedParams b = augmented_params({0.3, 2.0, 0.5}, 0.5);
  EXPECT_NEAR(b.delta_prime, 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(b.epsilon_prime, 0.2, 1e-15);
  const AugmentedParams c = augmented_params({0.3, 2.0, 0.5}, 1e-9);
  EXPECT_NEAR(c.delta_prime, 2.0, 1e-8);
  EXPECT_NEAR(c.epsilon_prime, 0.3, 1e-9);
}

TEST(Augmented, ContinuityInRho) {
  const StateEvolution se(kBase, kExp);
  for (double lam : {0.2, 1.0, 2.5}) {
    const TradeoffPoint t = se.tradeoff(se.solve(lam));
    const AugmentedLimits a = augmented_limits(kBase, kExp, 1e-6, lam);
    EXPECT_NEAR(a.fdp_aug, t.fdp_inf, 1e-5);
    EXPECT_NEAR(a.tpp_aug, t.tpp_inf, 1e-5);
    // knockoff_rate / null_selection identity.
    EXPECT_NEAR(a.knockoff_rate / a.null_selection, 1.0 / (1.0 - kBase.epsilon), 1e-12);
  }
}

TEST(Augmented, KnockoffPowerAtTenPercent) {
  const TargetSolution s = lambda_for_target(kBase, kExp, 0.1, KnockoffMode{1.0, 0.1});
  EXPECT_NEAR(s.tpp, 0.18, 0.005);
  EXPECT_NEAR(s.fdp, 0.1, 1e-6);
}

TEST(Augmented, FdpHatIsConservative) {
  const auto rows = trace_augmented_curve(kBase, kExp, 1.0, 0.1, log_grid(4.0, 0.1, 40));
  for (const auto &r : rows) {
    ASSERT_TRUE(r.fdp_hat_aug.has_value());
    EXPECT_GE(*r.fdp_hat_aug, r.fdp_inf - 1e-12) << r.lambda;
  }
}

TEST(Augmented, CurveBelowOracle) {
  // At matched FDP the augmented TPP sits below the oracle TPP by less than 0.02.
  const auto grid = log_grid(6.0, 0.02, 200);
  const auto oracle = trace_oracle_curve(kBase, kExp, grid);
  const auto aug = trace_augmented_curve(kBase, kExp, 1.0, 0.1, grid);
  for (const auto &a : aug) {
    if (a.fdp_inf > 0.3 || a.fdp_inf < 0.02) continue;
    // Oracle TPP at the same FDP by linear interpolation (FDP decreases in lambda).
    for (std::size_t i = 0; i + 1 < oracle.size(); ++i) {
      const double f0 = oracle[i].fdp_inf, f1 = oracle[i + 1].fdp_inf;
      if ((f0 - a.fdp_inf) * (f1 - a.fdp_inf) <= 0 && f0 != f1) {
        const double w = (a.fdp_inf - f0) / (f1 - f0);
        const double t = oracle[i].tpp_inf + w * (oracle[i + 1].tpp_inf - oracle[i].tpp_inf);
        EXPECT_LE(a.tpp_inf, t + 1e-4);
        EXPECT_LT(t - a.tpp_inf, 0.02);
        break;
      }
    }
  }
}

TEST(Augmented, AllNullLimit) {
  const AmpParams p{1e-10, 1.0, 0.5};
  const PriorSpec pr(1e-10, Exponential{1.0});
  const KnockoffCalibration cal = calibrate_knockoff_limit(p, pr, 1.0, 0.1);
  EXPECT_NEAR(cal.factor, 1.0, 1e-8);
  EXPECT_NEAR(fdp_hat_aug_infinity(p, pr, 1.0, 1.0, 0.1), 1.0, 1e-8);
}

TEST(Tradeoff, GridRefinementInvariant) {
  // FDP as a function of TPP, interpolated from a coarse run, matches the fine run.
  const auto fine = trace_oracle_curve(kBase, kExp, log_grid(10.0, 0.01, 200));
  const auto coarse = trace_oracle_curve(kBase, kExp, log_grid(10.0, 0.01, 50));
  std::vector<double> xs, ys;
  for (auto it = coarse.begin(); it != coarse.end(); ++it) {
    xs.push_back(it->tpp_inf);
    ys.push_back(it->fdp_inf);
  }
  ASSERT_TRUE(std::is_sorted(xs.begin(), xs.end()));
  const std::size_t n = xs.size();
  // Natural cubic spline: second derivatives from the tridiagonal system.
  std::vector<double> h(n - 1), m(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) h[i] = xs[i + 1] - xs[i];
  std::vector<double> diag(n, 1.0), rhs(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    diag[i] = 2 * (h[i - 1] + h[i]);
    rhs[i] = 6 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
  }
  for (std::size_t i = 2; i + 1 < n; ++i) {
    const double w = h[i - 1] / diag[i - 1];
    diag[i] -= w * h[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  for (std::size_t i = n - 2; i >= 1; --i) m[i] = (rhs[i] - h[i] * m[i + 1]) / diag[i];
  auto interp = [&](double x) {
    std::size_t i = std::upper_bound(xs.begin(), xs.end(), x) - xs.begin();
    i = std::clamp<std::size_t>(i, 1, n - 1) - 1;
    const double a = (xs[i + 1] - x) / h[i], b = (x - xs[i]) / h[i];
    return a * ys[i] + b * ys[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h[i] * h[i] / 6;
  };
  double worst = 0;
  for (const auto &r : fine) {
    if (r.tpp_inf < xs.front() || r.tpp_inf > xs.back()) continue;
    worst = std::max(worst, std::abs(interp(r.tpp_inf) - r.fdp_inf));
  }
  EXPECT_LT(worst, 1e-4);
}
