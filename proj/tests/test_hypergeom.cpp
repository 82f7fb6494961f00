#include <gtest/gtest.h>

#include "kamp/hypergeom.hpp"

using namespace kamp;

TEST(Hypergeom, Pmf) {
  const HyperParams h{2, 2, 2};
  EXPECT_EQ(hyper_pmf_exact(h, 1), Rational(4, 6));
  EXPECT_EQ(hyper_pmf_exact(h, 3), 0);
  EXPECT_EQ(hyper_pmf_exact({5, 1, 3}, 1), 0); // below max(0, m - n1) = 2
  for (int n0 = 0; n0 <= 8; ++n0)
    for (int n1 = 0; n0 + n1 <= 8; ++n1)
      for (int m = 1; m <= n0 + n1; ++m) {
        Rational s = 0;
        for (int k = -1; k <= m + 1; ++k) s += hyper_pmf_exact({n0, n1, m}, k);
        ASSERT_EQ(s, 1);
      }
}

TEST(Hypergeom, BruteForceExpectations) {
  const HyperParams h{2, 2, 2};
  EXPECT_EQ(brute_force_expectation_exact(h, [](int) { return Rational(1); }), 1);
  EXPECT_EQ(brute_force_expectation_exact({4, 3, 5}, [](int k) { return Rational(k); }), Rational(5 * 4, 7));
  EXPECT_EQ(brute_force_expectation_exact(h, [&](int k) { return ratio_summand(h, k); }), Rational(2, 3));
}

TEST(Hypergeom, ExpectedRatio) {
  EXPECT_EQ(expected_ratio_exact({2, 2, 2}), Rational(2, 3));
  EXPECT_EQ(expected_ratio_exact({0, 4, 2}), 0);
  EXPECT_EQ(expected_ratio_exact({5, 0, 3}), 3);
  EXPECT_DOUBLE_EQ(expected_ratio({5, 0, 3}), 3.0);
}

TEST(Hypergeom, ExpectedProductRatio) {
  EXPECT_EQ(expected_product_ratio_exact(0, 3, 2), 0);
  Rational brute = 0;
  for (int k = 0; k <= 2; ++k) brute += product_ratio_summand(3, 2, 2, k) * hyper_pmf_exact({3, 2, 2}, k);
  EXPECT_EQ(expected_product_ratio_exact(3, 2, 2), brute);
  EXPECT_NEAR(expected_product_ratio(3, 2, 2), to_double(brute), 1e-15);
}

TEST(Hypergeom, ExhaustiveSweep) {
  const HyperCheckReport r = hyper_check(12);
  EXPECT_TRUE(r.ok());
  EXPECT_EQ(r.ratio_cases, r.product_cases);
  EXPECT_GT(r.ratio_cases, 0);
}

TEST(Hypergeom, Validation) {
  EXPECT_THROW(expected_ratio_exact({2, 2, 5}), ValidationError);
  EXPECT_THROW(expected_ratio_exact({2, 2, 0}), ValidationError);
  EXPECT_EQ(binom(0, 0), 1);
  EXPECT_EQ(binom(-1, 0), 0);
  EXPECT_EQ(binom(3, 4), 0);
}
