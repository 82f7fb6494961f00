#pragma once

// Exact hypergeometric expectations in rational arithmetic.

#include <algorithm>
#include <functional>
#include <string>

#include <boost/multiprecision/cpp_int.hpp>

#include "kamp/error.hpp"

namespace kamp {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

/// X = number of draws from the n0 group when m items are drawn without
/// replacement from n0 + n1.
struct HyperParams {
  int n0 = 0;
  int n1 = 0;
  int m = 1;

  void validate() const {
    require(n0 >= 0 && n1 >= 0, "hypergeometric group sizes must be nonnegative");
    require(m >= 1, "number of draws must be positive");
    require(m <= n0 + n1, "number of draws exceeds the population");
  }
};

/// C(n, k) with C(0, 0) = 1 and C(n, k) = 0 when n < 0, k < 0 or k > n.
inline BigInt binom(int n, int k) {
  if (n < 0 || k < 0 || k > n) {
    return 0;
  }
  k = std::min(k, n - k);
  BigInt r = 1;
  for (int i = 1; i <= k; ++i) {
    r *= n - k + i;
    r /= i;
  }
  return r;
}

inline Rational to_rational(const BigInt &num, const BigInt &den) { return Rational(num, den); }

inline double to_double(const Rational &x) { return x.convert_to<double>(); }

inline Rational hyper_pmf_exact(const HyperParams &h, int k) {
  h.validate();
  return Rational(binom(h.n0, k) * binom(h.n1, h.m - k), binom(h.n0 + h.n1, h.m));
}

inline double hyper_pmf(const HyperParams &h, int k) { return to_double(hyper_pmf_exact(h, k)); }

inline int hyper_support_min(const HyperParams &h) { return std::max(0, h.m - h.n1); }
inline int hyper_support_max(const HyperParams &h) { return std::min(h.n0, h.m); }

/// sum_k g(k) P(X = k) over the support.
inline Rational brute_force_expectation_exact(const HyperParams &h,
                                              const std::function<Rational(int)> &g) {
  h.validate();
  Rational s = 0;
  for (int k = hyper_support_min(h); k <= hyper_support_max(h); ++k) {
    s += g(k) * hyper_pmf_exact(h, k);
  }
  return s;
}

inline double brute_force_expectation(const HyperParams &h, const std::function<double(int)> &g) {
  h.validate();
  double s = 0.0;
  for (int k = hyper_support_min(h); k <= hyper_support_max(h); ++k) {
    s += g(k) * hyper_pmf(h, k);
  }
  return s;
}

/// E[X / (1 + m - X)] = n0 / (1 + n1) * (1 - C(n0 - 1, m) / C(n0 + n1, m)).
inline Rational expected_ratio_exact(const HyperParams &h) {
  h.validate();
  if (h.n0 == 0) {
    return 0;
  }
  const Rational tail(binom(h.n0 - 1, h.m), binom(h.n0 + h.n1, h.m));
  return Rational(h.n0, 1 + h.n1) * (1 - tail);
}

inline double expected_ratio(const HyperParams &h) { return to_double(expected_ratio_exact(h)); }

/// Ratio whose expectation expected_ratio() gives in closed form.
inline Rational ratio_summand(const HyperParams &h, int k) { return Rational(k, 1 + h.m - k); }

/// E[X/(1 + m - X) * (r + X - m)/(1 + m0 - X)] for X drawn from m0 "null"
/// and r "knockoff" items with m draws:
///   1 - C(m0, m0 ^ m) C(r, m - m0 ^ m) / C(m0 + r, m).
inline Rational expected_product_ratio_exact(int m0, int r, int m) {
  const HyperParams h{m0, r, m};
  h.validate();
  const int j = std::min(m0, m);
  return 1 - Rational(binom(m0, j) * binom(r, m - j), binom(m0 + r, m));
}

inline double expected_product_ratio(int m0, int r, int m) {
  return to_double(expected_product_ratio_exact(m0, r, m));
}

inline Rational product_ratio_summand(int m0, int r, int m, int k) {
  return Rational(k, 1 + m - k) * Rational(r + k - m, 1 + m0 - k);
}

struct HyperCheckReport {
  int max_population = 12;
  long ratio_cases = 0;
  long product_cases = 0;
  long ratio_mismatches = 0;
  long product_mismatches = 0;
  long bound_violations = 0;
  bool ok() const { return ratio_mismatches == 0 && product_mismatches == 0 && bound_violations == 0; }
};

/// Exhaustive comparison of both closed forms with brute-force sums over every
/// configuration with population <= max_population.
inline HyperCheckReport hyper_check(int max_population = 12) {
  require(max_population >= 1, "population bound must be positive");
  HyperCheckReport rep;
  rep.max_population = max_population;
  for (int n0 = 0; n0 <= max_population; ++n0) {
    for (int n1 = 0; n0 + n1 <= max_population; ++n1) {
      for (int m = 1; m <= n0 + n1; ++m) {
        const HyperParams h{n0, n1, m};
        const Rational closed = expected_ratio_exact(h);
        const Rational brute =
            brute_force_expectation_exact(h, [&](int k) { return ratio_summand(h, k); });
        ++rep.ratio_cases;
        if (closed != brute) {
          ++rep.ratio_mismatches;
        }
        if (closed > Rational(n0, 1 + n1)) {
          ++rep.bound_violations;
        }
        const Rational pclosed = expected_product_ratio_exact(n0, n1, m);
        const Rational pbrute = brute_force_expectation_exact(
            h, [&](int k) { return product_ratio_summand(n0, n1, m, k); });
        ++rep.product_cases;
        if (pclosed != pbrute) {
          ++rep.product_mismatches;
        }
        if (pclosed > 1) {
          ++rep.bound_violations;
        }
      }
    }
  }
  return rep;
}

} // namespace kamp
