#pragma once

// Knockoff filter for i.i.d. designs: append independent null columns, rank
// all variables by Lasso entry time and stop where the knockoff-based FDP
// estimate falls to the target.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kamp/error.hpp"
#include "kamp/lasso.hpp"

namespace kamp {

enum class Pi0Mode { one, raw_estimate, truncated_estimate };

inline std::string to_string(Pi0Mode m) {
  switch (m) {
  case Pi0Mode::one:
    return "one";
  case Pi0Mode::raw_estimate:
    return "raw";
  case Pi0Mode::truncated_estimate:
    return "truncated";
  }
  return "?";
}

inline Pi0Mode parse_pi0_mode(const std::string &s) {
  if (s == "one") {
    return Pi0Mode::one;
  }
  if (s == "raw" || s == "raw_estimate") {
    return Pi0Mode::raw_estimate;
  }
  if (s == "truncated" || s == "truncated_estimate") {
    return Pi0Mode::truncated_estimate;
  }
  throw ValidationError("unknown pi0 mode '" + s + "' (expected one, raw or truncated)");
}

struct KnockoffConfig {
  double rho = 1.0;
  double q = 0.2;
  double t0 = 0.1;
  Pi0Mode pi0_mode = Pi0Mode::one;
  /// Standard deviation of knockoff entries; empty matches the design's RMS entry.
  std::optional<double> knockoff_sd;

  void validate() const {
    require(rho > 0.0 && std::isfinite(rho), "rho must be positive");
    require(q > 0.0 && q < 1.0, "q must lie in (0, 1)");
    require(t0 >= 0.0 && std::isfinite(t0), "t0 must be nonnegative");
    if (knockoff_sd) {
      require(*knockoff_sd > 0.0 && std::isfinite(*knockoff_sd), "knockoff sd must be positive");
    }
  }
};

/// r = ceil(rho p).
inline int knockoff_count(int p, double rho) {
  require(p >= 1 && rho > 0.0, "knockoff count needs p >= 1 and rho > 0");
  const double v = rho * static_cast<double>(p);
  const double r = std::ceil(v - 1e-9 * std::max(1.0, v));
  return std::max(1, static_cast<int>(r));
}

/// [X, Xk] with Xk an n x r block of i.i.d. N(0, sd^2) entries.
inline Matrix augment_design(const Matrix &design, int r, std::uint64_t seed, double sd) {
  require(r >= 1, "at least one knockoff column is required");
  require(sd > 0.0 && std::isfinite(sd), "knockoff sd must be positive");
  std::mt19937_64 rng(seed);
  Matrix out(design.rows(), design.cols() + r);
  out.leftCols(design.cols()) = design;
  out.rightCols(r) = gaussian_matrix(design.rows(), r, sd, rng);
  return out;
}

inline double rms_entry(const Matrix &design) {
  return std::sqrt(design.squaredNorm() / static_cast<double>(design.size()));
}

/// ((r+1)/p) (1 + #{j in H: T_j <= t0}) / #{j in K0: T_j <= t0}; +inf when the
/// denominator vanishes.  Truncated mode caps the value at 1.
inline double pi0_hat(const Vector &stats, int p, int r, double t0, Pi0Mode mode) {
  require(stats.size() == p + r, "statistics must cover originals and knockoffs");
  if (mode == Pi0Mode::one) {
    return 1.0;
  }
  long h_low = 0;
  long k_low = 0;
  for (int j = 0; j < p; ++j) {
    h_low += stats(j) <= t0;
  }
  for (int j = p; j < p + r; ++j) {
    k_low += stats(j) <= t0;
  }
  const double raw = k_low == 0 ? std::numeric_limits<double>::infinity()
                                : (static_cast<double>(r + 1) / p) * (1.0 + h_low) / k_low;
  return mode == Pi0Mode::truncated_estimate ? std::min(1.0, raw) : raw;
}

/// V1(t) and R(t) evaluated at the distinct statistic values, descending.
struct Trajectory {
  std::vector<double> t;
  std::vector<long> v1; ///< knockoffs with T >= t
  std::vector<long> r;  ///< originals with T >= t
};

inline Trajectory trajectories(const Vector &stats, int p) {
  std::vector<std::pair<double, bool>> all;
  all.reserve(static_cast<std::size_t>(stats.size()));
  for (Eigen::Index j = 0; j < stats.size(); ++j) {
    all.emplace_back(stats(j), j >= p);
  }
  std::sort(all.begin(), all.end(), [](const auto &a, const auto &b) { return a.first > b.first; });
  Trajectory tr;
  long v1 = 0;
  long r = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double t = all[i].first;
    // Ties enter together.
    for (; i < all.size() && all[i].first == t; ++i) {
      (all[i].second ? v1 : r) += 1;
    }
    tr.t.push_back(t);
    tr.v1.push_back(v1);
    tr.r.push_back(r);
  }
  return tr;
}

/// inf{ t >= t_min among observed statistics :
///      (1 + V1(t)) p pi0 / (1 + r) / (1 v R(t)) <= q }, +inf if none.
inline double knockoff_threshold(const Vector &stats, int p, int r, double q, double pi0_value,
                                 double t_min) {
  require(stats.size() == p + r, "statistics must cover originals and knockoffs");
  require(pi0_value > 0.0, "pi0 must be positive");
  double best = std::numeric_limits<double>::infinity();
  if (std::isinf(pi0_value)) {
    return best;
  }
  const Trajectory tr = trajectories(stats, p);
  const double scale = static_cast<double>(p) * pi0_value / (1.0 + r);
  for (std::size_t i = 0; i < tr.t.size(); ++i) {
    if (tr.t[i] < t_min) {
      break;
    }
    const double est = (1.0 + tr.v1[i]) * scale / std::max(1L, tr.r[i]);
    if (est <= q) {
      best = tr.t[i];
    }
  }
  return best;
}

struct FilterResult {
  std::vector<int> rejected; ///< original indices, ascending
  double threshold = std::numeric_limits<double>::infinity();
  double pi0_hat = 1.0;
  int p = 0;
  int r = 0;
  Vector statistics; ///< entry times, originals first
  Trajectory trajectory;
  std::optional<std::vector<long>> oracle_v0; ///< true nulls with T >= t, aligned with trajectory.t
};

struct FilterOptions {
  LambdaGridSpec grid;
  LassoOptions lasso;
};

inline std::vector<int> rejections(const Vector &stats, int p, double threshold) {
  std::vector<int> out;
  for (int j = 0; j < p; ++j) {
    if (stats(j) >= threshold) {
      out.push_back(j);
    }
  }
  return out;
}

/// Filter given augmented-problem statistics.
inline FilterResult filter_from_statistics(const Vector &stats, int p, int r,
                                           const KnockoffConfig &cfg,
                                           const std::optional<Vector> &beta_true = {}) {
  cfg.validate();
  FilterResult res;
  res.p = p;
  res.r = r;
  res.statistics = stats;
  res.pi0_hat = pi0_hat(stats, p, r, cfg.t0, cfg.pi0_mode);
  const double t_min = cfg.pi0_mode == Pi0Mode::one ? 0.0 : cfg.t0;
  res.threshold = knockoff_threshold(stats, p, r, cfg.q, res.pi0_hat, t_min);
  res.rejected = rejections(stats, p, res.threshold);
  res.trajectory = trajectories(stats, p);
  if (beta_true) {
    require(beta_true->size() == p, "beta_true length must equal p");
    std::vector<long> v0;
    for (double t : res.trajectory.t) {
      long c = 0;
      for (int j = 0; j < p; ++j) {
        c += (*beta_true)(j) == 0.0 && stats(j) >= t;
      }
      v0.push_back(c);
    }
    res.oracle_v0 = std::move(v0);
  }
  return res;
}

/// Entry times on the augmented problem [X, Xk].
inline Vector augmented_statistics(const Matrix &design, const Vector &response, int r,
                                   std::uint64_t seed, double sd, const FilterOptions &opts) {
  const Matrix aug = augment_design(design, r, seed, sd);
  const std::vector<double> grid = opts.grid.build(aug, response);
  return entry_times(aug, response, grid, opts.lasso);
}

inline FilterResult run_filter(const Matrix &design, const Vector &response,
                               const KnockoffConfig &cfg, std::uint64_t seed,
                               const FilterOptions &opts = {},
                               const std::optional<Vector> &beta_true = {}) {
  cfg.validate();
  validate_design(design, response);
  const int p = static_cast<int>(design.cols());
  const int r = knockoff_count(p, cfg.rho);
  const double sd = cfg.knockoff_sd.value_or(rms_entry(design));
  const Vector stats = augmented_statistics(design, response, r, seed, sd, opts);
  return filter_from_statistics(stats, p, r, cfg, beta_true);
}

/// FDP and TPP of a rejection set with the 1 v denominators.
struct SelectionQuality {
  double fdp = 0.0;
  double tpp = 0.0;
  long rejections = 0;
  long false_discoveries = 0;
  long signals = 0;
};

inline SelectionQuality selection_quality(const std::vector<int> &rejected, const Vector &beta) {
  SelectionQuality s;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    s.signals += beta(j) != 0.0;
  }
  long true_disc = 0;
  for (int j : rejected) {
    if (beta(j) == 0.0) {
      ++s.false_discoveries;
    } else {
      ++true_disc;
    }
  }
  s.rejections = static_cast<long>(rejected.size());
  s.fdp = static_cast<double>(s.false_discoveries) / std::max(1L, s.rejections);
  s.tpp = static_cast<double>(true_disc) / std::max(1L, s.signals);
  return s;
}

} // namespace kamp
