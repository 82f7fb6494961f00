#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "kamp/knockoff.hpp"
#include "kamp/priors.hpp"

using namespace kamp;

namespace {

struct Sim {
  Matrix x;
  Vector y;
  Vector beta;
};

Sim simulate(int n, int p, double eps, std::uint64_t seed) {
  Sim s;
  s.x = generate_design(n, p, seed);
  s.beta = Vector::Zero(p);
  std::mt19937_64 rng(seed + 7);
  std::bernoulli_distribution nz(eps);
  std::exponential_distribution<double> e(1.0);
  for (int j = 0; j < p; ++j) {
    if (nz(rng)) s.beta(j) = 3.0 + e(rng);
  }
  s.y = simulate_response(s.x, s.beta, 0.5, seed + 9);
  return s;
}

KnockoffConfig config(double q, Pi0Mode m = Pi0Mode::one, double rho = 1.0) {
  KnockoffConfig c;
  c.q = q;
  c.rho = rho;
  c.pi0_mode = m;
  return c;
}

FilterOptions small_grid() {
  FilterOptions fo;
  fo.grid.count = 100;
  return fo;
}

double ks_pvalue(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> all(a);
  all.insert(all.end(), b.begin(), b.end());
  double d = 0;
  for (double v : all) {
    const double fa = double(std::upper_bound(a.begin(), a.end(), v) - a.begin()) / a.size();
    const double fb = double(std::upper_bound(b.begin(), b.end(), v) - b.begin()) / b.size();
    d = std::max(d, std::abs(fa - fb));
  }
  const double ne = double(a.size()) * b.size() / (a.size() + b.size());
  const double lam = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double p = 0;
  for (int k = 1; k <= 100; ++k) p += 2 * ((k % 2) ? 1 : -1) * std::exp(-2 * lam * lam * k * k);
  return std::clamp(p, 0.0, 1.0);
}

} // namespace

TEST(Augment, ShapeIndependenceDeterminism) {
  EXPECT_THROW(augment_design(generate_design(10, 5, 1), 0, 1, 1.0), ValidationError);
  const Matrix x = generate_design(100, 100, 2);
  const Matrix a = augment_design(x, 100, 3, 0.1);
  ASSERT_EQ(a.rows(), 100);
  ASSERT_EQ(a.cols(), 200);
  EXPECT_EQ(a.leftCols(100), x);
  EXPECT_EQ(a, augment_design(x, 100, 3, 0.1));
  // Cross-correlations between original and knockoff columns: roughly
  // N(0, 1/n); the 3/sqrt(n) band is exceeded at the normal tail rate.
  long outside = 0;
  double sum = 0;
  for (int i = 0; i < 100; ++i) {
    for (int j = 100; j < 200; ++j) {
      const auto u = a.col(i).array() - a.col(i).mean();
      const auto v = a.col(j).array() - a.col(j).mean();
      const double c = (u * v).sum() / std::sqrt(u.square().sum() * v.square().sum());
      outside += std::abs(c) > 3 / std::sqrt(100.0);
      sum += c;
    }
  }
  EXPECT_LT(outside, 0.01 * 10000);
  EXPECT_NEAR(sum / 10000, 0.0, 4 * 0.1 / 100);
}

TEST(KnockoffCount, Ceil) {
  EXPECT_EQ(knockoff_count(1000, 1.0), 1000);
  EXPECT_EQ(knockoff_count(10, 0.25), 3);
  EXPECT_EQ(knockoff_count(7, 1e-6), 1);
}

TEST(Pi0, Conventions) {
  // No knockoff at or below t0.
  Vector s(4);
  s << 0.0, 0.05, 0.5, 0.6;
  EXPECT_TRUE(std::isinf(pi0_hat(s, 2, 2, 0.1, Pi0Mode::raw_estimate)));
  EXPECT_EQ(pi0_hat(s, 2, 2, 0.1, Pi0Mode::truncated_estimate), 1.0);
  EXPECT_EQ(pi0_hat(s, 2, 2, 0.1, Pi0Mode::one), 1.0);
  // Everything below t0 with p = r.
  const int p = 50;
  const Vector z = Vector::Constant(2 * p, 0.01);
  EXPECT_NEAR(pi0_hat(z, p, p, 0.1, Pi0Mode::raw_estimate), double(p + 1) / p * (1.0 + p) / p, 1e-15);
  EXPECT_EQ(pi0_hat(z, p, p, 0.1, Pi0Mode::truncated_estimate), 1.0);
}

TEST(Threshold, BoundaryArithmetic) {
  // Originals at 5, 4, 3; knockoffs at 1, 0.5.  With p = 3, r = 2, pi0 = 1 the
  // estimate is (1 + V1) / R: 1, 1/2, 1/3, 2/3, 1 at t = 5, 4, 3, 1, 0.5.
  Vector s(5);
  s << 5, 4, 3, 1, 0.5;
  EXPECT_EQ(knockoff_threshold(s, 3, 2, 0.5, 1.0, 0.0), 3.0);
  EXPECT_EQ(knockoff_threshold(s, 3, 2, 0.7, 1.0, 0.0), 1.0);
  EXPECT_EQ(knockoff_threshold(s, 3, 2, 1.0, 1.0, 0.0), 0.5);
  EXPECT_TRUE(std::isinf(knockoff_threshold(s, 3, 2, 0.3, 1.0, 0.0)));
  // t_min removes candidates below it.
  EXPECT_EQ(knockoff_threshold(s, 3, 2, 1.0, 1.0, 0.8), 1.0);
  // Largest statistic alone: V1 = 0, R = 1 qualifies iff q >= p pi0 / (1 + r).
  EXPECT_EQ(knockoff_threshold(s, 3, 2, 1.0, 0.99, 0.0), 0.5);
  EXPECT_TRUE(std::isinf(knockoff_threshold(s, 3, 2, 1e-9, 1.0, 0.0)));
  EXPECT_TRUE(std::isinf(knockoff_threshold(s, 3, 2, 0.5, std::numeric_limits<double>::infinity(), 0.0)));
}

TEST(Threshold, ObservedValueAndMonotoneInQ) {
  const Sim sim = simulate(200, 100, 0.2, 4);
  const FilterResult base = run_filter(sim.x, sim.y, config(0.2), 5, small_grid());
  const std::set<double> observed(base.statistics.data(), base.statistics.data() + base.statistics.size());
  std::vector<int> prev;
  for (double q : {0.001, 0.01, 0.05, 0.1, 0.2, 0.4, 0.7, 0.999}) {
    for (Pi0Mode m : {Pi0Mode::one, Pi0Mode::raw_estimate, Pi0Mode::truncated_estimate}) {
      KnockoffConfig c = config(q, m);
      const FilterResult r = filter_from_statistics(base.statistics, base.p, base.r, c);
      EXPECT_TRUE(std::isinf(r.threshold) || observed.count(r.threshold)) << q;
    }
    const FilterResult r = filter_from_statistics(base.statistics, base.p, base.r, config(q));
    EXPECT_TRUE(std::includes(r.rejected.begin(), r.rejected.end(), prev.begin(), prev.end())) << q;
    prev = r.rejected;
  }
  // Loosest level rejects down to the smallest qualifying statistic.
  const FilterResult loose = filter_from_statistics(base.statistics, base.p, base.r, config(0.999));
  const Trajectory tr = trajectories(base.statistics, base.p);
  double want = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < tr.t.size(); ++i) {
    if ((1.0 + tr.v1[i]) * base.p / (1.0 + base.r) / std::max(1L, tr.r[i]) <= 0.999) want = tr.t[i];
  }
  EXPECT_EQ(loose.threshold, want);
  EXPECT_TRUE(filter_from_statistics(base.statistics, base.p, base.r, config(0.001)).rejected.empty());
}

TEST(Filter, ZeroResponse) {
  const Matrix x = generate_design(50, 20, 1);
  const FilterResult r = run_filter(x, Vector::Zero(50), config(0.5), 1, small_grid());
  EXPECT_TRUE(r.rejected.empty());
  EXPECT_EQ(r.statistics, Vector::Zero(40));
}

TEST(Filter, SelectionQualityDenominators) {
  Vector beta = Vector::Zero(4);
  const SelectionQuality none = selection_quality({}, beta);
  EXPECT_EQ(none.fdp, 0.0);
  EXPECT_EQ(none.tpp, 0.0);
  beta(1) = 2.0;
  const SelectionQuality q = selection_quality({0, 1, 2}, beta);
  EXPECT_DOUBLE_EQ(q.fdp, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(q.tpp, 1.0);
}

TEST(Filter, PureNullFdr) {
  const int reps = 500;
  double fdr = 0;
  for (int i = 0; i < reps; ++i) {
    const Sim sim = simulate(60, 40, 0.0, 1000 + i);
    const FilterResult r = run_filter(sim.x, sim.y, config(0.2), 2000 + i, small_grid());
    fdr += selection_quality(r.rejected, sim.beta).fdp;
  }
  fdr /= reps;
  EXPECT_LE(fdr, 0.2 + 2 * std::sqrt(0.2 * 0.8 / reps));
}

TEST(Filter, FdrBoundsAcrossConfigurations) {
  struct Case {
    double eps, q, rho;
    Pi0Mode mode;
  };
  for (const Case c : {Case{0.2, 0.2, 1.0, Pi0Mode::one}, Case{0.1, 0.1, 1.0, Pi0Mode::one},
                       Case{0.2, 0.3, 2.0, Pi0Mode::one}, Case{0.2, 0.2, 1.0, Pi0Mode::raw_estimate},
                       Case{0.3, 0.2, 1.0, Pi0Mode::raw_estimate}}) {
    const int reps = 300;
    std::vector<double> f;
    for (int i = 0; i < reps; ++i) {
      const Sim sim = simulate(120, 80, c.eps, 5000 + i);
      const FilterResult r = run_filter(sim.x, sim.y, config(c.q, c.mode, c.rho), 7000 + i, small_grid());
      f.push_back(selection_quality(r.rejected, sim.beta).fdp);
    }
    const double m = std::accumulate(f.begin(), f.end(), 0.0) / reps;
    double v = 0;
    for (double x : f) v += (x - m) * (x - m);
    const double se = std::sqrt(v / (reps - 1) / reps);
    EXPECT_LE(m, c.q + 2 * se) << c.eps << " " << c.q << " " << c.rho;
  }
}

TEST(Filter, ExchangeabilityOfNullLabels) {
  // Shuffling original-null and knockoff columns among themselves leaves the
  // rejection-count distribution unchanged.
  const int reps = 500, n = 80, p = 40;
  std::vector<double> plain, shuffled;
  for (int i = 0; i < reps; ++i) {
    const Sim sim = simulate(n, p, 0.2, 9000 + i);
    const Matrix aug = augment_design(sim.x, p, 11000 + i, 1 / std::sqrt(double(n)));
    std::vector<int> nulls;
    for (int j = 0; j < 2 * p; ++j)
      if (j >= p || sim.beta(j) == 0.0) nulls.push_back(j);
    std::vector<int> perm(nulls);
    std::mt19937_64 rng(13000 + i);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix px = aug;
    for (std::size_t k = 0; k < nulls.size(); ++k) px.col(nulls[k]) = aug.col(perm[k]);
    const auto g1 = LambdaGridSpec{100, 1e-3, {}};
    const Vector s1 = entry_times(aug, sim.y, g1.build(aug, sim.y));
    const Vector s2 = entry_times(px, sim.y, g1.build(px, sim.y));
    plain.push_back(double(filter_from_statistics(s1, p, p, config(0.2)).rejected.size()));
    shuffled.push_back(double(filter_from_statistics(s2, p, p, config(0.2)).rejected.size()));
  }
  EXPECT_GT(ks_pvalue(plain, shuffled), 0.01);
}

TEST(Filter, Determinism) {
  const Sim sim = simulate(100, 50, 0.2, 77);
  const FilterResult a = run_filter(sim.x, sim.y, config(0.2), 3, small_grid());
  const FilterResult b = run_filter(sim.x, sim.y, config(0.2), 3, small_grid());
  EXPECT_EQ(a.statistics, b.statistics);
  EXPECT_EQ(a.rejected, b.rejected);
}

TEST(Filter, Validation) {
  const Matrix x = generate_design(10, 4, 1);
  EXPECT_THROW(run_filter(x, Vector::Zero(9), config(0.2), 1), ValidationError);
  EXPECT_THROW(config(1.5).validate(), ValidationError);
  EXPECT_EQ(parse_pi0_mode("raw"), Pi0Mode::raw_estimate);
  EXPECT_THROW(parse_pi0_mode("bogus"), ValidationError);
}
