#pragma once

// Gaussian design problems and the Lasso path by cyclic coordinate descent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kamp/error.hpp"
#include "kamp/normal.hpp"

namespace kamp {

using Matrix = Eigen::MatrixXd; // column-major
using Vector = Eigen::VectorXd;

struct DesignProblem {
  Matrix design;
  Vector response;
  std::optional<Vector> beta_true;
  double noise_sd = 0.0;

  Eigen::Index n() const { return design.rows(); }
  Eigen::Index p() const { return design.cols(); }
};

/// n x p matrix with i.i.d. N(0, sd^2) entries, filled column by column.
template <class Rng> Matrix gaussian_matrix(Eigen::Index n, Eigen::Index p, double sd, Rng &rng) {
  std::normal_distribution<double> z(0.0, sd);
  Matrix x(n, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i, j) = z(rng);
    }
  }
  return x;
}

/// i.i.d. N(0, 1/n) design.
inline Matrix generate_design(int n, int p, std::uint64_t seed) {
  require(n >= 1 && p >= 1, "design dimensions must be positive");
  std::mt19937_64 rng(seed);
  return gaussian_matrix(n, p, 1.0 / std::sqrt(static_cast<double>(n)), rng);
}

/// y = X beta + z with z i.i.d. N(0, sigma^2).
inline Vector simulate_response(const Matrix &design, const Vector &beta, double sigma,
                                std::uint64_t seed) {
  require(design.cols() == beta.size(), "beta length must equal the number of columns");
  require(sigma >= 0.0 && std::isfinite(sigma), "sigma must be nonnegative");
  Vector y = design * beta;
  if (sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, sigma);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      y(i) += z(rng);
    }
  }
  return y;
}

inline double lasso_objective(const Matrix &x, const Vector &y, const Vector &b, double lambda) {
  return 0.5 * (y - x * b).squaredNorm() + lambda * b.lpNorm<1>();
}

/// Rejects zero columns, and constant columns when n > 1.
inline void validate_design(const Matrix &x, const Vector &y) {
  require(x.rows() >= 1 && x.cols() >= 1, "design must be nonempty");
  if (x.rows() != y.size()) {
    std::ostringstream os;
    os << "response length " << y.size() << " does not match design rows " << x.rows()
       << " (design is " << x.rows() << "x" << x.cols() << ")";
    throw ValidationError(os.str());
  }
  require(x.allFinite() && y.allFinite(), "design and response must be finite");
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const auto col = x.col(j);
    const bool constant = x.rows() > 1 && (col.array() == col(0)).all();
    if (col.squaredNorm() == 0.0 || constant) {
      throw ValidationError("design column " + std::to_string(j) + " is constant");
    }
  }
}

struct LassoOptions {
  double coef_tol = 1e-10;      ///< stop sweeping when the largest coordinate change is below this
  double kkt_rel_tol = 1e-8;    ///< KKT tolerance relative to ||X^T y||_inf
  long max_sweeps = 200000;     ///< per penalty value
  long polish_after = 4;        ///< sweeps before the first exact support solve; 0 disables it
  int max_polish_steps = 64;    ///< support reductions per exact solve
};

/// Coordinate descent with covariance updates.  The gradient X^T (y - X b) is
/// maintained for every coordinate; Gram columns are formed on first use, so
/// only variables that are ever active cost a pass over the data.
class LassoSolver {
public:
  LassoSolver(const Matrix &x, const Vector &y, LassoOptions opts = {})
      : x_(x), y_(y), opts_(opts) {
    validate_design(x_, y_);
    const Eigen::Index p = x_.cols();
    xty_ = x_.transpose() * y_;
    diag_ = x_.colwise().squaredNorm().transpose();
    grad_ = xty_;
    b_ = Vector::Zero(p);
    gram_.resize(static_cast<std::size_t>(p));
    lambda_max_ = xty_.cwiseAbs().maxCoeff();
    kkt_tol_ = opts_.kkt_rel_tol * std::max(lambda_max_, std::numeric_limits<double>::min());
  }

  double lambda_max() const { return lambda_max_; }
  double kkt_tolerance() const { return kkt_tol_; }
  const Vector &coefficients() const { return b_; }
  const Vector &gradient() const { return grad_; }

  void set_coefficients(const Vector &b) {
    require(b.size() == x_.cols(), "warm start has the wrong length");
    b_ = b;
    grad_ = xty_ - x_.transpose() * (x_ * b_);
    active_.clear();
    for (Eigen::Index j = 0; j < b_.size(); ++j) {
      if (b_(j) != 0.0) {
        active_.push_back(j);
      }
    }
  }

  /// Minimizes 1/2 ||y - X b||^2 + lambda ||b||_1 starting from the current b.
  ///
  /// Coordinate sweeps run in rounds of growing length.  Between rounds the
  /// support and signs of the iterate are tested directly: solving
  /// G_AA b_A = X_A^T y - lambda s_A and confirming the signs and the KKT
  /// conditions off the support yields the exact minimizer.
  const Vector &solve(double lambda) {
    require(lambda > 0.0 && std::isfinite(lambda), "lambda must be positive");
    long sweeps = 0;
    long round = opts_.polish_after;
    while (true) {
      if (coordinate_round(lambda, sweeps, round)) {
        break;
      }
      if (opts_.polish_after > 0 && polish(lambda)) {
        break;
      }
      check_budget(sweeps, lambda);
      round = std::min(round * 2, 64L);
    }
    last_sweeps_ = sweeps;
    // Drop coordinates that left the model.
    active_.erase(std::remove_if(active_.begin(), active_.end(),
                                 [this](Eigen::Index j) { return b_(j) == 0.0; }),
                  active_.end());
    return b_;
  }

  /// max_j of the KKT violation at lambda.
  double kkt_violation(double lambda) const {
    double worst = 0.0;
    for (Eigen::Index j = 0; j < b_.size(); ++j) {
      const double g = grad_(j);
      if (b_(j) == 0.0) {
        worst = std::max(worst, std::abs(g) - lambda);
      } else {
        worst = std::max(worst, std::abs(g - lambda * (b_(j) > 0.0 ? 1.0 : -1.0)));
      }
    }
    return std::max(worst, 0.0);
  }

  /// Primal objective minus the dual objective at the scaled feasible dual point.
  double duality_gap(double lambda) const {
    const Vector resid = y_ - x_ * b_;
    const double primal = 0.5 * resid.squaredNorm() + lambda * b_.lpNorm<1>();
    const double gmax = (x_.transpose() * resid).cwiseAbs().maxCoeff();
    const double s = gmax > lambda ? lambda / gmax : 1.0;
    const Vector theta = s * resid;
    const double dual = theta.dot(y_) - 0.5 * theta.squaredNorm();
    return primal - dual;
  }

private:
  // Sweeps the working set until the largest change drops below coef_tol,
  // admits KKT violators, and repeats; gives up after `limit` sweeps (0 means
  // unlimited).  Returns true on convergence.
  bool coordinate_round(double lambda, long &sweeps, long limit) {
    long used = 0;
    while (true) {
      while (true) {
        double max_change = 0.0;
        for (Eigen::Index j : active_) {
          max_change = std::max(max_change, update(j, lambda));
        }
        ++sweeps;
        ++used;
        // The gradient is kept current, so the full KKT check costs O(p).
        if (max_change < opts_.coef_tol || kkt_violation(lambda) <= 0.1 * kkt_tol_) {
          break;
        }
        if (limit > 0 && used >= limit) {
          return false;
        }
        check_budget(sweeps, lambda);
      }
      if (!admit_violators(lambda)) {
        return true;
      }
      if (limit > 0 && used >= limit) {
        return false;
      }
    }
  }

  bool admit_violators(double lambda) {
    bool grown = false;
    for (Eigen::Index j = 0; j < b_.size(); ++j) {
      if (b_(j) == 0.0 && std::abs(grad_(j)) > lambda + kkt_tol_ && !in_active(j)) {
        active_.push_back(j);
        grown = true;
      }
    }
    if (grown) {
      std::sort(active_.begin(), active_.end());
    }
    return grown;
  }

  // Exact solve on the current support and signs.  When the solve flips a
  // sign, the iterate moves toward it only up to the first zero crossing (the
  // objective decreases along that segment), the crossing coordinate leaves
  // the support, and the solve repeats.  Returns true when the result also
  // satisfies the KKT conditions off the support.
  bool polish(double lambda) {
    std::vector<Eigen::Index> supp;
    for (Eigen::Index j : active_) {
      if (b_(j) != 0.0) {
        supp.push_back(j);
      }
    }
    Vector cur(static_cast<Eigen::Index>(supp.size()));
    for (std::size_t c = 0; c < supp.size(); ++c) {
      cur(static_cast<Eigen::Index>(c)) = b_(supp[c]);
    }
    bool exact = false;
    // More than n nonzeros: move within the null space of X_A, where the fit
    // is unchanged and the l1 term is linear, until a coordinate reaches zero.
    while (static_cast<Eigen::Index>(supp.size()) > x_.rows()) {
      const Matrix g = support_gram(supp);
      const Eigen::SelfAdjointEigenSolver<Matrix> eig(g);
      if (eig.info() != Eigen::Success) {
        return false;
      }
      Vector d = eig.eigenvectors().col(0);
      if (cur.cwiseSign().dot(d) > 0.0) {
        d = -d;
      }
      double t_hit = std::numeric_limits<double>::infinity();
      Eigen::Index drop = -1;
      for (Eigen::Index c = 0; c < d.size(); ++c) {
        if (d(c) * cur(c) < 0.0 && -cur(c) / d(c) < t_hit) {
          t_hit = -cur(c) / d(c);
          drop = c;
        }
      }
      if (drop < 0) {
        return false;
      }
      cur += t_hit * d;
      cur(drop) = 0.0;
      compact(supp, cur);
    }
    for (int it = 0; it < opts_.max_polish_steps && !supp.empty(); ++it) {
      const auto k = static_cast<Eigen::Index>(supp.size());
      const Matrix g = support_gram(supp);
      Vector rhs(k);
      for (Eigen::Index c = 0; c < k; ++c) {
        rhs(c) = xty_(supp[static_cast<std::size_t>(c)]) - lambda * (cur(c) > 0.0 ? 1.0 : -1.0);
      }
      const Eigen::LLT<Matrix> llt(g);
      if (llt.info() != Eigen::Success) {
        return false;
      }
      const Vector sol = llt.solve(rhs);
      double t_cross = 2.0;
      Eigen::Index drop = -1;
      for (Eigen::Index c = 0; c < k; ++c) {
        if (!(sol(c) * cur(c) > 0.0)) {
          const double t = cur(c) / (cur(c) - sol(c));
          if (t < t_cross) {
            t_cross = t;
            drop = c;
          }
        }
      }
      if (drop < 0) {
        cur = sol;
        exact = true;
        break;
      }
      cur += t_cross * (sol - cur);
      cur(drop) = 0.0;
      compact(supp, cur);
    }
    b_.setZero();
    grad_ = xty_;
    for (std::size_t c = 0; c < supp.size(); ++c) {
      const double v = cur(static_cast<Eigen::Index>(c));
      b_(supp[c]) = v;
      grad_.noalias() -= v * gram_column(supp[c]);
    }
    active_ = supp;
    const bool grown = admit_violators(lambda);
    return exact && !grown;
  }

  Matrix support_gram(const std::vector<Eigen::Index> &supp) {
    const auto k = static_cast<Eigen::Index>(supp.size());
    Matrix g(k, k);
    for (Eigen::Index c = 0; c < k; ++c) {
      const Vector &col = gram_column(supp[static_cast<std::size_t>(c)]);
      for (Eigen::Index r = 0; r < k; ++r) {
        g(r, c) = col(supp[static_cast<std::size_t>(r)]);
      }
    }
    return g;
  }

  // Removes zero entries of cur together with their indices.
  static void compact(std::vector<Eigen::Index> &supp, Vector &cur) {
    std::vector<Eigen::Index> keep;
    Vector next(cur.size());
    Eigen::Index w = 0;
    for (Eigen::Index c = 0; c < cur.size(); ++c) {
      if (cur(c) != 0.0) {
        keep.push_back(supp[static_cast<std::size_t>(c)]);
        next(w++) = cur(c);
      }
    }
    supp = std::move(keep);
    cur = next.head(w);
  }

  const Vector &gram_column(Eigen::Index j) {
    auto &c = gram_[static_cast<std::size_t>(j)];
    if (c.size() == 0) {
      c = x_.transpose() * x_.col(j);
    }
    return c;
  }

  double update(Eigen::Index j, double lambda) {
    const double old = b_(j);
    const double z = grad_(j) + diag_(j) * old;
    const double nb = soft_threshold(z, lambda) / diag_(j);
    const double delta = nb - old;
    if (delta != 0.0) {
      b_(j) = nb;
      grad_.noalias() -= delta * gram_column(j);
    }
    return std::abs(delta);
  }

  bool in_active(Eigen::Index j) const {
    return std::find(active_.begin(), active_.end(), j) != active_.end();
  }

  void check_budget(long sweeps, double lambda) const {
    if (sweeps > opts_.max_sweeps) {
      std::ostringstream os;
      os << "coordinate descent exceeded " << opts_.max_sweeps << " sweeps at lambda=" << lambda
         << " (duality gap " << duality_gap(lambda) << ")";
      throw NumericalError(os.str());
    }
  }

  const Matrix &x_;
  const Vector &y_;
  LassoOptions opts_;
  Vector xty_;
  Vector diag_;
  Vector grad_;
  Vector b_;
  std::vector<Vector> gram_;
  std::vector<Eigen::Index> active_;
  double lambda_max_ = 0.0;
  double kkt_tol_ = 0.0;
  long last_sweeps_ = 0;

public:
  long last_sweeps() const { return last_sweeps_; }
};

inline Vector lasso_solve(const Matrix &x, const Vector &y, double lambda,
                          const std::optional<Vector> &warm_start = {},
                          const LassoOptions &opts = {}) {
  LassoSolver s(x, y, opts);
  if (warm_start) {
    s.set_coefficients(*warm_start);
  }
  return s.solve(lambda);
}

/// `count` log-spaced values from ||X^T y||_inf down to ratio times that.
inline std::vector<double> default_lambda_grid(const Matrix &x, const Vector &y,
                                               std::size_t count = 200, double ratio = 1e-3) {
  require(count >= 2, "lambda grid needs at least two points");
  require(ratio > 0.0 && ratio < 1.0, "grid ratio must lie in (0, 1)");
  const double top = (x.transpose() * y).cwiseAbs().maxCoeff();
  std::vector<double> g(count);
  if (!(top > 0.0)) {
    // Zero response: any positive grid gives the all-zero path.
    for (std::size_t i = 0; i < count; ++i) {
      g[i] = std::pow(ratio, static_cast<double>(i) / static_cast<double>(count - 1));
    }
    return g;
  }
  for (std::size_t i = 0; i < count; ++i) {
    g[i] = top * std::pow(ratio, static_cast<double>(i) / static_cast<double>(count - 1));
  }
  g.front() = top;
  return g;
}

/// Log-spaced grid from ||X^T y||_inf; with a floor, points below it are
/// dropped (statistics of variables entering later are then 0).
struct LambdaGridSpec {
  std::size_t count = 200;
  double ratio = 1e-3;
  std::optional<double> floor;

  std::vector<double> build(const Matrix &x, const Vector &y) const {
    std::vector<double> g = default_lambda_grid(x, y, count, ratio);
    if (floor) {
      require(*floor > 0.0, "lambda floor must be positive");
      std::vector<double> kept;
      for (double v : g) {
        if (v >= *floor) {
          kept.push_back(v);
        }
      }
      if (kept.empty()) {
        kept.push_back(g.front());
      }
      g = std::move(kept);
    }
    return g;
  }
};

inline void validate_grid(const std::vector<double> &grid) {
  require(!grid.empty(), "lambda grid must be nonempty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    require(grid[i] > 0.0 && std::isfinite(grid[i]), "lambda grid must be positive");
    if (i > 0) {
      require(grid[i] < grid[i - 1], "lambda grid must be strictly decreasing");
    }
  }
}

struct LassoPath {
  std::vector<double> lambda_grid;
  std::vector<Vector> coef_history; ///< filled only when requested
  Vector entry_times;               ///< largest grid lambda with a nonzero coefficient, else 0
  std::vector<double> kkt_residuals;
};

struct PathOptions {
  LassoOptions lasso;
  bool store_coefficients = false;
  /// Called after each grid point with (index, lambda, coefficients).
  std::function<void(std::size_t, double, const Vector &)> observer;
};

inline LassoPath lasso_path(const Matrix &x, const Vector &y, const std::vector<double> &grid,
                            const PathOptions &opts = {}) {
  validate_grid(grid);
  LassoSolver solver(x, y, opts.lasso);
  LassoPath path;
  path.lambda_grid = grid;
  path.entry_times = Vector::Zero(x.cols());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Vector &b = solver.solve(grid[k]);
    const double viol = solver.kkt_violation(grid[k]);
    path.kkt_residuals.push_back(viol);
    if (viol > solver.kkt_tolerance()) {
      std::ostringstream os;
      os << "KKT residual " << viol << " exceeds tolerance " << solver.kkt_tolerance()
         << " at lambda=" << grid[k];
      throw LambdaFailure(os.str(), grid[k]);
    }
    for (Eigen::Index j = 0; j < b.size(); ++j) {
      if (b(j) != 0.0 && path.entry_times(j) == 0.0) {
        path.entry_times(j) = grid[k];
      }
    }
    if (opts.store_coefficients) {
      path.coef_history.push_back(b);
    }
    if (opts.observer) {
      opts.observer(k, grid[k], b);
    }
  }
  return path;
}

/// T_j = sup{lambda on the grid : b_j(lambda) != 0}, or 0.
inline Vector entry_times(const Matrix &x, const Vector &y, const std::vector<double> &grid,
                          const LassoOptions &opts = {}) {
  PathOptions po;
  po.lasso = opts;
  return lasso_path(x, y, grid, po).entry_times;
}

} // namespace kamp
