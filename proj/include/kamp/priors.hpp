#pragma once

// Coefficient prior Pi = (1 - eps) * delta_0 + eps * Pi*, with the nonzero
// component drawn from one of a few concrete families.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/policies/policy.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "kamp/error.hpp"

namespace kamp {

struct PointMass {
  double location = 1.0;
};

struct Exponential {
  double rate = 1.0;
};

/// sum_i w_i Gamma(shape_i, rate).
struct GammaMixture {
  std::vector<double> shapes;
  std::vector<double> weights;
  double rate = 1.0;
};

/// Piecewise-linear CDF through (grid[i], values[i]). Mass values[0] sits as an
/// atom at grid[0]; the CDF is 0 below grid[0] and 1 from grid.back() on.
struct TabulatedCdf {
  std::vector<double> grid;
  std::vector<double> values;
};

using NonzeroDistribution =
    std::variant<PointMass, Exponential, GammaMixture, TabulatedCdf>;

namespace detail {

using fast_policy = boost::math::policies::policy<
    boost::math::policies::promote_double<false>>;

inline double gamma_cdf(double shape, double x) {
  if (x <= 0.0) {
    return 0.0;
  }
  return boost::math::gamma_p(shape, x, fast_policy());
}

inline double gamma_sf(double shape, double x) {
  if (x <= 0.0) {
    return 1.0;
  }
  return boost::math::gamma_q(shape, x, fast_policy());
}

template <class... Ts> struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

inline void validate_star(const NonzeroDistribution &star) {
  std::visit(
      overloaded{
          [](const PointMass &d) {
            require(std::isfinite(d.location) && d.location != 0.0,
                    "point mass location must be finite and nonzero");
          },
          [](const Exponential &d) {
            require(std::isfinite(d.rate) && d.rate > 0.0,
                    "exponential rate must be positive");
          },
          [](const GammaMixture &d) {
            require(!d.shapes.empty(), "gamma mixture needs at least one shape");
            require(d.shapes.size() == d.weights.size(),
                    "gamma mixture shapes and weights differ in length");
            require(std::isfinite(d.rate) && d.rate > 0.0,
                    "gamma mixture rate must be positive");
            double total = 0.0;
            for (std::size_t i = 0; i < d.shapes.size(); ++i) {
              require(std::isfinite(d.shapes[i]) && d.shapes[i] > 0.0,
                      "gamma shapes must be positive");
              require(d.weights[i] >= 0.0, "gamma weights must be nonnegative");
              total += d.weights[i];
            }
            require(std::abs(total - 1.0) <= 1e-12,
                    "gamma mixture weights must sum to 1");
          },
          [](const TabulatedCdf &d) {
            require(d.grid.size() >= 2 && d.grid.size() == d.values.size(),
                    "tabulated CDF needs matching grid/values of length >= 2");
            for (std::size_t i = 0; i < d.grid.size(); ++i) {
              require(std::isfinite(d.grid[i]), "tabulated grid must be finite");
              require(d.values[i] >= 0.0 && d.values[i] <= 1.0,
                      "tabulated CDF values must lie in [0, 1]");
              if (i > 0) {
                require(d.grid[i] > d.grid[i - 1],
                        "tabulated grid must be strictly increasing");
                require(d.values[i] >= d.values[i - 1],
                        "tabulated CDF values must be nondecreasing");
              }
            }
            require(std::abs(d.values.back() - 1.0) <= 1e-12,
                    "tabulated CDF must reach 1 at the last grid point");
            require(!(d.grid.front() == 0.0 && d.values.front() > 0.0),
                    "nonzero component may not place mass at 0");
          },
      },
      star);
}

} // namespace detail

class PriorSpec {
public:
  PriorSpec(double epsilon, NonzeroDistribution star)
      : epsilon_(epsilon), star_(std::move(star)) {
    require(epsilon_ > 0.0 && epsilon_ < 1.0, "epsilon must lie in (0, 1)");
    detail::validate_star(star_);
    star_m2_ = compute_star_second_moment();
    require(std::isfinite(star_m2_), "prior must have finite second moment");
  }

  double epsilon() const { return epsilon_; }
  const NonzeroDistribution &star() const { return star_; }

  /// Same nonzero component, different sparsity.
  PriorSpec with_epsilon(double epsilon) const { return {epsilon, star_}; }

  /// CDF of Pi*.
  double star_cdf(double x) const {
    return std::visit(
        detail::overloaded{
            [x](const PointMass &d) { return x >= d.location ? 1.0 : 0.0; },
            [x](const Exponential &d) {
              return x <= 0.0 ? 0.0 : -std::expm1(-d.rate * x);
            },
            [x](const GammaMixture &d) {
              if (x <= 0.0) {
                return 0.0;
              }
              double s = 0.0;
              for (std::size_t i = 0; i < d.shapes.size(); ++i) {
                if (d.weights[i] > 0.0) {
                  s += d.weights[i] * detail::gamma_cdf(d.shapes[i], d.rate * x);
                }
              }
              return std::min(s, 1.0);
            },
            [x](const TabulatedCdf &d) { return tabulated_cdf(d, x); },
        },
        star_);
  }

  /// P(Pi* > x), accurate far in the upper tail.
  double star_sf(double x) const {
    return std::visit(
        detail::overloaded{
            [x](const PointMass &d) { return x >= d.location ? 0.0 : 1.0; },
            [x](const Exponential &d) { return x <= 0.0 ? 1.0 : std::exp(-d.rate * x); },
            [x](const GammaMixture &d) {
              if (x <= 0.0) {
                return 1.0;
              }
              double s = 0.0;
              for (std::size_t i = 0; i < d.shapes.size(); ++i) {
                if (d.weights[i] > 0.0) {
                  s += d.weights[i] * detail::gamma_sf(d.shapes[i], d.rate * x);
                }
              }
              return std::min(s, 1.0);
            },
            [x](const TabulatedCdf &d) { return 1.0 - tabulated_cdf(d, x); },
        },
        star_);
  }

  /// F_Pi(x) = (1 - eps) 1{x >= 0} + eps F_{Pi*}(x).
  double cdf(double x) const {
    return (x >= 0.0 ? 1.0 - epsilon_ : 0.0) + epsilon_ * star_cdf(x);
  }

  double star_second_moment() const { return star_m2_; }
  double second_moment() const { return epsilon_ * star_m2_; }

  /// Lower end of the support of Pi* (-inf when unbounded).
  double star_support_lower() const {
    return std::visit(
        detail::overloaded{
            [](const PointMass &d) { return d.location; },
            [](const Exponential &) { return 0.0; },
            [](const GammaMixture &) { return 0.0; },
            [](const TabulatedCdf &d) { return d.grid.front(); },
        },
        star_);
  }

  /// Upper end of the support of Pi* (+inf when unbounded).
  double star_support_upper() const {
    return std::visit(
        detail::overloaded{
            [](const PointMass &d) { return d.location; },
            [](const Exponential &) {
              return std::numeric_limits<double>::infinity();
            },
            [](const GammaMixture &) {
              return std::numeric_limits<double>::infinity();
            },
            [](const TabulatedCdf &d) { return d.grid.back(); },
        },
        star_);
  }

  /// Points where F_{Pi*} is not smooth; quadrature splits there.
  std::vector<double> star_breakpoints() const {
    return std::visit(
        detail::overloaded{
            [](const PointMass &d) { return std::vector<double>{d.location}; },
            [](const Exponential &) { return std::vector<double>{0.0}; },
            [](const GammaMixture &) { return std::vector<double>{0.0}; },
            [](const TabulatedCdf &d) { return d.grid; },
        },
        star_);
  }

  /// Draw i.i.d. copies of Pi, deterministic in seed.
  std::vector<double> sample(std::size_t count, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    return sample(count, rng);
  }

  template <class Rng>
  std::vector<double> sample(std::size_t count, Rng &rng) const {
    std::vector<double> out(count, 0.0);
    std::bernoulli_distribution nonzero(epsilon_);
    for (auto &v : out) {
      if (nonzero(rng)) {
        v = sample_star(rng);
      }
    }
    return out;
  }

  template <class Rng> double sample_star(Rng &rng) const {
    return std::visit(
        detail::overloaded{
            [](const PointMass &d) { return d.location; },
            [&rng](const Exponential &d) {
              return std::exponential_distribution<double>(d.rate)(rng);
            },
            [&rng](const GammaMixture &d) {
              std::discrete_distribution<std::size_t> pick(d.weights.begin(),
                                                           d.weights.end());
              const std::size_t i = pick(rng);
              return std::gamma_distribution<double>(d.shapes[i],
                                                     1.0 / d.rate)(rng);
            },
            [&rng](const TabulatedCdf &d) {
              const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
              return tabulated_quantile(d, u);
            },
        },
        star_);
  }

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    os << "eps=" << epsilon_ << " ";
    std::visit(detail::overloaded{
                   [&os](const PointMass &d) { os << "point:" << d.location; },
                   [&os](const Exponential &d) { os << "exp:" << d.rate; },
                   [&os](const GammaMixture &d) {
                     os << "gammamix:";
                     for (std::size_t i = 0; i < d.shapes.size(); ++i) {
                       os << (i ? "," : "") << d.shapes[i] << "@" << d.weights[i];
                     }
                   },
                   [&os](const TabulatedCdf &d) {
                     os << "tabulated:" << d.grid.size() << "pts";
                   },
               },
               star_);
    return os.str();
  }

private:
  static double tabulated_cdf(const TabulatedCdf &d, double x) {
    if (x < d.grid.front()) {
      return 0.0;
    }
    if (x >= d.grid.back()) {
      return 1.0;
    }
    const auto it = std::upper_bound(d.grid.begin(), d.grid.end(), x);
    const auto hi = static_cast<std::size_t>(it - d.grid.begin());
    const std::size_t lo = hi - 1;
    const double w = (x - d.grid[lo]) / (d.grid[hi] - d.grid[lo]);
    return d.values[lo] + w * (d.values[hi] - d.values[lo]);
  }

  static double tabulated_quantile(const TabulatedCdf &d, double u) {
    if (u <= d.values.front()) {
      return d.grid.front();
    }
    const auto it = std::lower_bound(d.values.begin(), d.values.end(), u);
    const auto hi = static_cast<std::size_t>(it - d.values.begin());
    if (hi >= d.values.size()) {
      return d.grid.back();
    }
    const std::size_t lo = hi - 1;
    const double span = d.values[hi] - d.values[lo];
    const double w = span > 0.0 ? (u - d.values[lo]) / span : 0.0;
    return d.grid[lo] + w * (d.grid[hi] - d.grid[lo]);
  }

  double compute_star_second_moment() const {
    return std::visit(
        detail::overloaded{
            [](const PointMass &d) { return d.location * d.location; },
            [](const Exponential &d) { return 2.0 / (d.rate * d.rate); },
            [](const GammaMixture &d) {
              double m2 = 0.0;
              for (std::size_t i = 0; i < d.shapes.size(); ++i) {
                m2 += d.weights[i] * d.shapes[i] * (d.shapes[i] + 1.0);
              }
              return m2 / (d.rate * d.rate);
            },
            [](const TabulatedCdf &d) {
              double m2 = d.values.front() * d.grid.front() * d.grid.front();
              for (std::size_t i = 1; i < d.grid.size(); ++i) {
                const double a = d.grid[i - 1];
                const double b = d.grid[i];
                m2 += (d.values[i] - d.values[i - 1]) * (a * a + a * b + b * b) / 3.0;
              }
              return m2;
            },
        },
        star_);
  }

  double epsilon_;
  NonzeroDistribution star_;
  double star_m2_ = 0.0;
};

/// A member of the restricted Gamma-mixture family, kept as a reduced integer
/// vector so identity and deduplication are exact.
struct MixtureMember {
  std::vector<int> units;

  std::vector<double> weights() const {
    const double total = std::accumulate(units.begin(), units.end(), 0.0);
    std::vector<double> w(units.size());
    std::transform(units.begin(), units.end(), w.begin(),
                   [total](int u) { return u / total; });
    return w;
  }
};

/// All distinct normalized vectors u / sum(u) with u_i drawn from levels and
/// sum(u) > 0, in lexicographic order of first appearance.
inline std::vector<MixtureMember>
enumerate_restricted_mixture_members(std::size_t dimension,
                                     const std::vector<int> &levels) {
  require(dimension > 0, "mixture dimension must be positive");
  std::vector<int> lv(levels.begin(), levels.end());
  std::sort(lv.begin(), lv.end());
  lv.erase(std::unique(lv.begin(), lv.end()), lv.end());
  require(!lv.empty() && lv.back() > 0, "levels need at least one positive value");
  require(lv.front() >= 0, "levels must be nonnegative");

  std::vector<MixtureMember> out;
  std::set<std::vector<int>> seen;
  std::vector<std::size_t> idx(dimension, 0);
  std::vector<int> u(dimension);
  while (true) {
    int g = 0;
    for (std::size_t i = 0; i < dimension; ++i) {
      u[i] = lv[idx[i]];
      g = std::gcd(g, u[i]);
    }
    if (g > 0) {
      std::vector<int> reduced(dimension);
      std::transform(u.begin(), u.end(), reduced.begin(),
                     [g](int x) { return x / g; });
      if (seen.insert(reduced).second) {
        out.push_back({std::move(reduced)});
      }
    }
    std::size_t k = dimension;
    while (k > 0) {
      --k;
      if (++idx[k] < lv.size()) {
        break;
      }
      idx[k] = 0;
      if (k == 0) {
        return out;
      }
    }
  }
}

inline std::vector<std::vector<double>>
enumerate_restricted_mixtures(const std::vector<double> &shapes,
                              const std::vector<int> &levels) {
  require(!shapes.empty(), "shapes must be nonempty");
  const auto members = enumerate_restricted_mixture_members(shapes.size(), levels);
  std::vector<std::vector<double>> out;
  out.reserve(members.size());
  for (const auto &m : members) {
    out.push_back(m.weights());
  }
  return out;
}

/// Shapes of the eight-component Gamma family used in the mixture sweep.
inline std::vector<double> default_mixture_shapes() {
  return {0.1, 0.8, 1.5, 2.2, 2.9, 3.6, 4.3, 5.0};
}

} // namespace kamp
