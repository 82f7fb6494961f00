#pragma once

// Asymptotic characterization of the Lasso under an i.i.d. Gaussian design:
// the two-equation fixed point in (alpha, tau), the FDP/TPP limits it implies,
// and their counterparts for a design augmented with knockoff columns.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/tools/roots.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include "kamp/error.hpp"
#include "kamp/normal.hpp"
#include "kamp/priors.hpp"
#include "kamp/quadrature.hpp"

namespace kamp {

struct AmpParams {
  double epsilon = 0.2;
  double delta = 1.0; ///< limiting n / p
  double sigma = 0.5; ///< noise standard deviation

  void validate() const {
    require(epsilon > 0.0 && epsilon < 1.0, "epsilon must lie in (0, 1)");
    require(delta > 0.0 && std::isfinite(delta), "delta must be positive");
    require(sigma >= 0.0 && std::isfinite(sigma), "sigma must be nonnegative");
  }
};

struct AmpFixedPoint {
  double alpha = 0.0;
  double tau = 0.0;
  double lambda = 0.0;
  double tau_residual = 0.0;    ///< tau^2 - sigma^2 - f / delta
  double lambda_residual = 0.0; ///< (1 - g / delta) alpha tau - lambda
};

struct TradeoffPoint {
  double lambda = 0.0;
  double fdp_inf = 0.0;
  double tpp_inf = 0.0;
};

struct AugmentedParams {
  double rho = 1.0;
  double delta_prime = 0.0;
  double epsilon_prime = 0.0;
};

/// Expectations entering the fixed point, evaluated at one (alpha, tau).
struct Functionals {
  double f = 0.0;   ///< E(eta_{alpha tau}(Pi + tau W) - Pi)^2
  double g = 0.0;   ///< P(|Pi + tau W| > alpha tau)
  double tpp = 0.0; ///< P(|Pi* + tau W| > alpha tau)
};

/// Closed-form risk of soft thresholding at level alpha*tau for a fixed mean
/// mu under N(mu, tau^2) noise.  Used for boundary terms and cross-checks.
inline double soft_threshold_risk(double mu, double alpha, double tau) {
  const double m = mu / tau;
  const double a = alpha;
  const double inside = normal_cdf(a - m) - normal_cdf(-a - m);
  const double r = 1.0 + a * a + (m * m - a * a - 1.0) * inside -
                   (a - m) * normal_pdf(a + m) - (a + m) * normal_pdf(a - m);
  return tau * tau * r;
}

/// Unique root t of (1 + t^2) Phi(-t) - t phi(t) = delta / 2.
inline double alpha_zero(double delta) {
  require(delta > 0.0 && std::isfinite(delta), "delta must be positive");
  auto h = [delta](double t) {
    return (1.0 + t * t) * normal_cdf(-t) - t * normal_pdf(t) - 0.5 * delta;
  };
  // h is strictly decreasing, +inf at -inf and -delta/2 at +inf.
  double lo = -1.0;
  double hi = 1.0;
  while (h(lo) < 0.0) {
    lo *= 2.0;
  }
  while (h(hi) > 0.0) {
    hi *= 2.0;
    if (hi > 1e3) {
      throw NumericalError("alpha_zero: delta too small to bracket the root");
    }
  }
  std::uintmax_t iters = 200;
  auto [a, b] = boost::math::tools::toms748_solve(
      h, lo, hi, boost::math::tools::eps_tolerance<double>(52), iters);
  return std::abs(h(a)) < std::abs(h(b)) ? a : b;
}

namespace detail {

inline double null_risk_unit(double alpha) {
  return 2.0 * ((1.0 + alpha * alpha) * normal_cdf(-alpha) - alpha * normal_pdf(alpha));
}

// P(|u + W| <= alpha) as an even function of u, evaluated on the stable side.
inline double inside_prob(double alpha, double u) {
  const double x = std::abs(u);
  return normal_cdf(alpha - x) - normal_cdf(-alpha - x);
}

} // namespace detail

/// Evaluates f, g and the nonzero-component exceedance at (alpha, tau).
///
/// With R(mu) the soft-threshold risk and Q(mu) = P(|mu + tau W| > alpha tau),
/// integrating by parts away from mu = 0 gives, in the variable u = mu / tau,
///   E R(Pi*) = R(0) + tau^2 J0,   E Q(Pi*) = Q(0) + J1,
///   J0 = int_0^inf S(tau u) 2u D(u) du - int_-inf^0 F(tau u) 2u D(u) du,
///   J1 = int_0^inf S(tau u) E(u) du    - int_-inf^0 F(tau u) E(u) du,
/// where F, S are the CDF and survival function of Pi*, D(u) = P(|u + W| <= alpha)
/// and E(u) = phi(alpha - u) - phi(alpha + u).  Every integrand is nonnegative,
/// so small exceedance probabilities keep full relative accuracy.  Then
///   f = tau^2 (r0 + eps J0),  g = Q(0) + eps J1,  tpp = Q(0) + J1.
inline Functionals evaluate_functionals(const PriorSpec &prior, double alpha,
                                        double tau) {
  require(alpha > 0.0 && std::isfinite(alpha), "alpha must be positive");
  require(tau > 0.0 && std::isfinite(tau), "tau must be positive");
  const double eps = prior.epsilon();
  const double a = alpha;

  // Beyond |u| = alpha + 10 both kernels are below 1e-22 of their scale.
  const double reach = a + 10.0;
  const double u_lo = std::max(std::min(prior.star_support_lower(), 0.0) / tau, -reach);
  const double u_hi = std::min(std::max(prior.star_support_upper(), 0.0) / tau, reach);

  std::vector<double> pts{u_lo, u_hi};
  auto add = [&](double u) {
    if (u > u_lo && u < u_hi) {
      pts.push_back(u);
    }
  };
  add(0.0);
  add(a);
  add(-a);
  add(a + 4.0);
  add(-a - 4.0);
  // Densities of shape < 1 make the CDF steep at 0; graded panels absorb it.
  for (double x : {1e-3, 1e-2, 1e-1}) {
    add(x);
    add(-x);
  }
  for (double b : prior.star_breakpoints()) {
    add(b / tau);
  }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

  auto integrand = [&](double u) -> std::array<double, 2> {
    const double w = u >= 0.0 ? prior.star_sf(tau * u) : -prior.star_cdf(tau * u);
    const double d = detail::inside_prob(a, u);
    const double e = normal_pdf(a - u) - normal_pdf(a + u);
    return {w * 2.0 * u * d, w * e};
  };
  const double r0 = detail::null_risk_unit(a);
  const double q0 = 2.0 * normal_cdf(-a);
  const std::array<double, 2> tol{std::max(1e-15 * r0, 1e-300), std::max(1e-15 * q0, 1e-300)};
  const auto res = integrate_gk21<2>(integrand, pts, tol);
  if (!res.converged) {
    std::ostringstream os;
    os << "functional quadrature did not converge at alpha=" << alpha << " tau=" << tau
       << " (error estimates " << res.error[0] << ", " << res.error[1] << ")";
    throw NumericalError(os.str());
  }
  const double j0 = std::max(0.0, res.value[0]);
  const double j1 = std::max(0.0, res.value[1]);
  Functionals out;
  out.f = tau * tau * (r0 + eps * j0);
  out.g = std::min(1.0, q0 + eps * j1);
  out.tpp = std::min(1.0, q0 + j1);
  return out;
}

inline double functional_f(const PriorSpec &prior, double alpha, double tau) {
  return evaluate_functionals(prior, alpha, tau).f;
}

inline double functional_g(const PriorSpec &prior, double alpha, double tau) {
  return evaluate_functionals(prior, alpha, tau).g;
}

/// State of the fixed point parametrized by alpha: tau solves the first
/// equation, lambda is then read off the second.
struct AlphaState {
  double alpha = 0.0;
  double tau = 0.0;
  double lambda = 0.0;
  Functionals fn;
  double tau_residual = 0.0;
};

struct SolverOptions {
  double alpha_rel_tol = 1e-13;
  double lambda_abs_tol = 1e-10;
  double residual_tol = 1e-9;
  int max_iterations = 200;
};

/// State-evolution system bound to one (params, prior).  The prior's epsilon
/// is replaced by params.epsilon.
class StateEvolution {
public:
  StateEvolution(const AmpParams &params, const PriorSpec &prior,
                 SolverOptions opts = {})
      : params_(params), prior_(prior.with_epsilon(params.epsilon)), opts_(opts) {
    params_.validate();
    alpha_min_ = std::max(alpha_zero(params_.delta), 0.0);
  }

  const AmpParams &params() const { return params_; }
  const PriorSpec &prior() const { return prior_; }

  /// Admissible alphas satisfy alpha > alpha_min() = max(alpha_zero(delta), 0).
  double alpha_min() const { return alpha_min_; }

  /// Solve the first equation for tau at fixed alpha.  `tau_hint` narrows the
  /// initial bracket.
  AlphaState at_alpha(double alpha, std::optional<double> tau_hint = {}) const {
    if (!(alpha > alpha_min_)) {
      std::ostringstream os;
      os << "alpha=" << alpha << " violates alpha > max(alpha_zero(delta), 0) = "
         << alpha_min_;
      throw NumericalError(os.str());
    }
    const double sigma2 = params_.sigma * params_.sigma;
    const double delta = params_.delta;
    // Keep the evaluation closest to the root so the result needs no extra
    // quadrature pass.
    double best_s = -1.0;
    double best_h = std::numeric_limits<double>::infinity();
    Functionals best_fn;
    auto h = [&](double s) {
      const Functionals fn = evaluate_functionals(prior_, alpha, std::sqrt(s));
      const double v = sigma2 + fn.f / delta - s;
      if (std::abs(v) < std::abs(best_h)) {
        best_s = s, best_h = v, best_fn = fn;
      }
      return v;
    };

    // f <= tau^2 r0 + E Pi^2 bounds the root from above whenever r0 < delta.
    const double r0 = detail::null_risk_unit(alpha);
    const double slack = 1.0 - r0 / delta;
    if (!(slack > 0.0)) {
      throw NumericalError("tau equation has no finite root: alpha too close to alpha_zero");
    }
    const double s_cap = (sigma2 + prior_.second_moment() / delta) / slack;
    double s_hi = 1.05 * s_cap + 1e-300;
    double s_lo = sigma2;
    if (sigma2 == 0.0) {
      s_lo = 1e-24 * std::max(1.0, s_cap);
    }

    double h_lo = std::numeric_limits<double>::quiet_NaN();
    double h_hi = std::numeric_limits<double>::quiet_NaN();
    if (tau_hint && *tau_hint > 0.0) {
      // Walk away from the hint with growing steps until the sign changes.
      const double s0 = std::clamp((*tau_hint) * (*tau_hint), s_lo, s_hi);
      const double h0 = h(s0);
      double w = 0.02;
      if (h0 >= 0.0) {
        s_lo = s0, h_lo = h0;
        for (double b = s0 * (1.0 + w); b < s_hi; w *= 2.0, b = s0 * (1.0 + w)) {
          const double hb = h(b);
          if (hb <= 0.0) {
            s_hi = b, h_hi = hb;
            break;
          }
          s_lo = b, h_lo = hb;
        }
      } else {
        s_hi = s0, h_hi = h0;
        for (double a = s0 / (1.0 + w); a > s_lo; w *= 2.0, a = s0 / (1.0 + w)) {
          const double ha = h(a);
          if (ha >= 0.0) {
            s_lo = a, h_lo = ha;
            break;
          }
          s_hi = a, h_hi = ha;
        }
      }
    }
    if (std::isnan(h_lo)) {
      h_lo = h(s_lo);
    }
    if (sigma2 == 0.0 && h_lo <= 0.0) {
      throw BoundaryError("tau -> 0+ boundary: noiseless problem has only the trivial fixed point");
    }
    if (h_lo == 0.0) {
      return finish(alpha, best_s, best_fn);
    }
    if (std::isnan(h_hi)) {
      h_hi = h(s_hi);
    }
    if (h_hi > 0.0) {
      throw NumericalError("tau bracket failed: upper bound does not dominate the fixed point");
    }
    std::uintmax_t iters = static_cast<std::uintmax_t>(opts_.max_iterations);
    boost::math::tools::toms748_solve(h, s_lo, s_hi, h_lo, h_hi,
                                      boost::math::tools::eps_tolerance<double>(48), iters);
    return finish(alpha, best_s, best_fn);
  }

  /// Solve both equations for a given penalty.
  AmpFixedPoint solve(double lambda, std::optional<double> alpha_hint = {}) const {
    require(lambda > 0.0 && std::isfinite(lambda), "lambda must be positive");
    const AlphaState st = alpha_for_lambda(lambda, alpha_hint);
    AmpFixedPoint fp;
    fp.alpha = st.alpha;
    fp.tau = st.tau;
    fp.lambda = lambda;
    fp.tau_residual = st.tau_residual;
    fp.lambda_residual = st.lambda - lambda;
    const double tscale = std::max(1.0, st.tau * st.tau);
    if (std::abs(fp.tau_residual) > opts_.residual_tol * tscale ||
        std::abs(fp.lambda_residual) > opts_.residual_tol * std::max(1.0, lambda)) {
      std::ostringstream os;
      os << "state evolution residual too large at lambda=" << lambda
         << " (tau: " << fp.tau_residual << ", lambda: " << fp.lambda_residual << ")";
      throw NumericalError(os.str());
    }
    return fp;
  }

  /// Like solve() but returns the full alpha-parametrized state.
  AlphaState alpha_for_lambda(double lambda, std::optional<double> alpha_hint = {}) const {
    std::optional<double> tau_hint;
    auto eval = [&](double alpha) {
      AlphaState st = at_alpha(alpha, tau_hint);
      tau_hint = st.tau;
      return st;
    };

    // Bracket: lambda(alpha) increases with alpha on the admissible range.
    double a_lo = 0.0;
    double a_hi = 0.0;
    AlphaState s_lo;
    AlphaState s_hi;
    bool have_lo = false;
    bool have_hi = false;
    if (alpha_hint && *alpha_hint > alpha_min_) {
      const double a = std::max(alpha_min_ + 0.5 * (*alpha_hint - alpha_min_),
                                *alpha_hint * 0.98);
      const double b = *alpha_hint * 1.02;
      AlphaState sa = eval(a);
      if (sa.lambda <= lambda) {
        a_lo = a, s_lo = sa, have_lo = true;
        AlphaState sb = eval(b);
        if (sb.lambda >= lambda) {
          a_hi = b, s_hi = sb, have_hi = true;
        } else {
          a_lo = b, s_lo = sb;
        }
      } else {
        a_hi = a, s_hi = sa, have_hi = true;
      }
    }
    if (!have_hi) {
      double a = have_lo ? a_lo : alpha_min_ + 1.0;
      double step = 1.0;
      for (int i = 0; i < 60; ++i) {
        AlphaState st = eval(a);
        if (st.lambda >= lambda) {
          a_hi = a, s_hi = st, have_hi = true;
          break;
        }
        a_lo = a, s_lo = st, have_lo = true;
        a += step;
        step *= 2.0;
      }
      if (!have_hi) {
        throw NumericalError("no admissible alpha: lambda(alpha) never reaches the target");
      }
    }
    if (!have_lo) {
      double off = std::min(0.5 * (a_hi - alpha_min_), 1e-1);
      tau_hint.reset();
      for (int i = 0; i < 40; ++i) {
        const double a = alpha_min_ + off;
        AlphaState st = eval(a);
        if (st.lambda <= lambda) {
          a_lo = a, s_lo = st, have_lo = true;
          break;
        }
        a_hi = a, s_hi = st;
        off *= 0.1;
        if (off < 1e-14 * std::max(1.0, alpha_min_)) {
          break;
        }
      }
      if (!have_lo) {
        std::ostringstream os;
        os << "no admissible alpha > " << alpha_min_ << ": lambda=" << lambda
           << " lies below the attainable range of the second equation";
        throw NumericalError(os.str());
      }
    }
    if (s_lo.lambda == lambda) {
      return s_lo;
    }
    if (s_hi.lambda == lambda) {
      return s_hi;
    }

    AlphaState best = std::abs(s_lo.lambda - lambda) < std::abs(s_hi.lambda - lambda) ? s_lo : s_hi;
    tau_hint = best.tau;
    auto g = [&](double alpha) {
      AlphaState st = eval(alpha);
      if (std::abs(st.lambda - lambda) < std::abs(best.lambda - lambda)) {
        best = st;
      }
      return st.lambda - lambda;
    };
    std::uintmax_t iters = static_cast<std::uintmax_t>(opts_.max_iterations);
    auto tol = [this](double x, double y) {
      return std::abs(x - y) <= opts_.alpha_rel_tol * std::max(1.0, std::abs(x));
    };
    boost::math::tools::toms748_solve(g, a_lo, a_hi, s_lo.lambda - lambda,
                                      s_hi.lambda - lambda, tol, iters);
    return best;
  }

  TradeoffPoint tradeoff(const AmpFixedPoint &fp) const;

  /// Unnormalized asymptotic risk delta (tau^2 - sigma^2), equal to f at the
  /// fixed point.
  double risk_from_tau(double tau) const {
    return params_.delta * (tau * tau - params_.sigma * params_.sigma);
  }

private:
  AlphaState finish(double alpha, double s, const Functionals &fn) const {
    AlphaState st;
    st.alpha = alpha;
    st.tau = std::sqrt(s);
    st.fn = fn;
    st.tau_residual = s - params_.sigma * params_.sigma - st.fn.f / params_.delta;
    st.lambda = (1.0 - st.fn.g / params_.delta) * alpha * st.tau;
    return st;
  }

  AmpParams params_;
  PriorSpec prior_;
  SolverOptions opts_;
  double alpha_min_ = 0.0;
};

inline AmpFixedPoint solve_state_evolution(const AmpParams &params,
                                           const PriorSpec &prior, double lambda) {
  return StateEvolution(params, prior).solve(lambda);
}

/// FDP and TPP limits at a fixed point.  `epsilon` is the sparsity of the
/// original variables, which differs from the fixed point's own epsilon in the
/// augmented problem.
inline TradeoffPoint fdp_tpp_infinity(const AmpFixedPoint &fp, const PriorSpec &prior,
                                      double epsilon) {
  const double tpp = evaluate_functionals(prior, fp.alpha, fp.tau).tpp;
  const double nulls = 2.0 * (1.0 - epsilon) * normal_cdf(-fp.alpha);
  const double denom = nulls + epsilon * tpp;
  TradeoffPoint pt;
  pt.lambda = fp.lambda;
  pt.fdp_inf = denom > 0.0 ? nulls / denom : 0.0;
  pt.tpp_inf = tpp;
  return pt;
}

inline TradeoffPoint StateEvolution::tradeoff(const AmpFixedPoint &fp) const {
  return fdp_tpp_infinity(fp, prior_, params_.epsilon);
}

inline double fdp_from_state(double alpha, double tpp, double epsilon) {
  const double nulls = 2.0 * (1.0 - epsilon) * normal_cdf(-alpha);
  const double denom = nulls + epsilon * tpp;
  return denom > 0.0 ? nulls / denom : 0.0;
}

inline AugmentedParams augmented_params(const AmpParams &params, double rho) {
  params.validate();
  require(rho > 0.0 && std::isfinite(rho), "rho must be positive");
  return {rho, params.delta / (1.0 + rho), params.epsilon / (1.0 + rho)};
}

/// AMP parameters of the design augmented with rho * p knockoff columns.
inline AmpParams augmented_amp_params(const AmpParams &params, double rho) {
  const AugmentedParams aug = augmented_params(params, rho);
  return {aug.epsilon_prime, aug.delta_prime, params.sigma};
}

struct AugmentedLimits {
  double fdp_aug = 0.0;          ///< FDP among original variables
  double tpp_aug = 0.0;          ///< P(|Pi* + tau' W| > alpha' tau')
  double knockoff_rate = 0.0;    ///< 2 Phi(-alpha'), fraction of knockoffs selected
  double null_selection = 0.0;   ///< 2 (1 - eps) Phi(-alpha'), original nulls selected / p
  AmpFixedPoint fixed_point;
};

inline AugmentedLimits augmented_limits_from_state(const AlphaState &st, double epsilon) {
  AugmentedLimits out;
  out.knockoff_rate = 2.0 * normal_cdf(-st.alpha);
  out.null_selection = (1.0 - epsilon) * out.knockoff_rate;
  out.tpp_aug = st.fn.tpp;
  const double denom = out.null_selection + epsilon * out.tpp_aug;
  out.fdp_aug = denom > 0.0 ? out.null_selection / denom : 0.0;
  out.fixed_point = {st.alpha, st.tau, st.lambda, st.tau_residual, 0.0};
  return out;
}

inline AugmentedLimits augmented_limits(const AmpParams &params, const PriorSpec &prior,
                                        double rho, double lambda) {
  const StateEvolution se(augmented_amp_params(params, rho), prior);
  const AlphaState st = se.alpha_for_lambda(lambda);
  AugmentedLimits out = augmented_limits_from_state(st, params.epsilon);
  out.fixed_point.lambda = lambda;
  out.fixed_point.lambda_residual = st.lambda - lambda;
  return out;
}

/// Limit of the truncated null-proportion estimate, built from the augmented
/// fixed points at lambda = t0 and at lambda -> 0+.
struct KnockoffCalibration {
  double t0 = 0.1;
  AlphaState at_t0;
  AlphaState at_zero;
  double factor = 1.0; ///< 1 ^ {1 - eps + eps (P2 - P1) / (2 (Phi(-a2) - Phi(-a1)))}
};

inline constexpr double kLambdaZeroProxy = 1e-5;
inline constexpr double kLambdaZeroCheck = 1e-6;

inline KnockoffCalibration calibrate_knockoff_limit(const AmpParams &params,
                                                    const PriorSpec &prior, double rho,
                                                    double t0) {
  require(t0 > 0.0 && std::isfinite(t0), "t0 must be positive");
  const AmpParams aug = augmented_amp_params(params, rho);
  const StateEvolution se(aug, prior);
  KnockoffCalibration cal;
  cal.t0 = t0;
  cal.at_t0 = se.alpha_for_lambda(t0);
  AlphaState z1;
  AlphaState z2;
  try {
    z1 = se.alpha_for_lambda(kLambdaZeroProxy, cal.at_t0.alpha);
    z2 = se.alpha_for_lambda(kLambdaZeroCheck, z1.alpha);
  } catch (const NumericalError &e) {
    std::ostringstream os;
    os << "lambda -> 0+ limit failed for delta'=" << aug.delta << ": " << e.what();
    throw NumericalError(os.str());
  }
  const double change = std::max(std::abs(z1.alpha - z2.alpha) / z2.alpha,
                                 std::abs(z1.tau - z2.tau) / z2.tau);
  if (!(change < 1e-4)) {
    std::ostringstream os;
    os << "lambda -> 0+ limit not converged for delta'=" << aug.delta
       << " (relative change " << change << " between lambda=1e-5 and 1e-6)";
    if (aug.delta >= 1.0) {
      os << "; delta' >= 1 drives tau' to infinity as lambda -> 0+";
    }
    throw NumericalError(os.str());
  }
  cal.at_zero = z1;
  const double eps = params.epsilon;
  const double dphi = normal_cdf(-z1.alpha) - normal_cdf(-cal.at_t0.alpha);
  const double dtpp = z1.fn.tpp - cal.at_t0.fn.tpp;
  if (!(dphi > 0.0)) {
    throw NumericalError("degenerate knockoff calibration: no knockoff entries below t0");
  }
  cal.factor = std::min(1.0, 1.0 - eps + eps * dtpp / (2.0 * dphi));
  return cal;
}

/// Limit of the knockoff FDP estimate at an augmented state.
inline double fdp_hat_from_state(const AlphaState &st, double epsilon, double factor) {
  const double z = 2.0 * normal_cdf(-st.alpha);
  const double denom = (1.0 - epsilon) * z + epsilon * st.fn.tpp;
  return denom > 0.0 ? z / denom * factor : std::numeric_limits<double>::infinity();
}

inline double fdp_hat_aug_infinity(const AmpParams &params, const PriorSpec &prior,
                                   double rho, double lambda, double t0) {
  require(lambda >= t0, "fdp_hat_aug_infinity requires lambda >= t0");
  const KnockoffCalibration cal = calibrate_knockoff_limit(params, prior, rho, t0);
  const StateEvolution se(augmented_amp_params(params, rho), prior);
  const AlphaState st = lambda == t0 ? cal.at_t0 : se.alpha_for_lambda(lambda);
  return fdp_hat_from_state(st, params.epsilon, cal.factor);
}

struct OracleMode {};
struct KnockoffMode {
  double rho = 1.0;
  double t0 = 0.1;
};
using TargetMode = std::variant<OracleMode, KnockoffMode>;

struct TargetSolution {
  double lambda = 0.0;
  double alpha = 0.0; ///< alpha (or alpha' in knockoff mode)
  double tau = 0.0;
  double fdp = 0.0;   ///< FDP (oracle) or FDP-hat (knockoff) at the solution
  double tpp = 0.0;   ///< TPP (oracle) or TPP_aug (knockoff)
  bool boundary = false; ///< the smallest admissible lambda already meets q
};

struct TargetOptions {
  double lambda_floor = 1e-3; ///< smallest lambda considered in oracle mode
  double alpha_span = 10.0;   ///< scan alpha over [alpha(floor), alpha(floor) + span]
  int scan_points = 24;
  double alpha_cap = 35.0;    ///< Phi(-alpha) stays a normal double below this
  double fdp_tol = 1e-6;
};

/// Smallest lambda whose (oracle) FDP limit, or (knockoff) FDP-hat limit,
/// is at most q.  Scans alpha upward from the lower end of the admissible
/// lambda range and refines the first crossing by bracketed root finding.
inline TargetSolution lambda_for_target_state(const StateEvolution &se, double q,
                                              double epsilon, double factor,
                                              const AlphaState &lower,
                                              const TargetOptions &opts) {
  auto value = [&](const AlphaState &st) {
    return factor > 0.0 ? fdp_hat_from_state(st, epsilon, factor)
                        : fdp_from_state(st.alpha, st.fn.tpp, epsilon);
  };
  auto pack = [&](const AlphaState &st, bool boundary) {
    TargetSolution s;
    s.lambda = st.lambda;
    s.alpha = st.alpha;
    s.tau = st.tau;
    s.fdp = value(st);
    s.tpp = st.fn.tpp;
    s.boundary = boundary;
    return s;
  };
  const double v0 = value(lower);
  if (v0 <= q + opts.fdp_tol) {
    return pack(lower, true);
  }
  AlphaState prev = lower;
  double vprev = v0;
  double vmin = v0;
  // Uniform scan over alpha_span, then geometric extension up to alpha_cap.
  std::vector<double> scan;
  const double step = opts.alpha_span / opts.scan_points;
  for (int i = 1; i <= opts.scan_points; ++i) {
    scan.push_back(lower.alpha + step * i);
  }
  for (double gap = 2.0 * step; scan.back() + gap <= opts.alpha_cap; gap *= 1.5) {
    scan.push_back(scan.back() + gap);
  }
  for (const double a : scan) {
    AlphaState cur = se.at_alpha(a, prev.tau);
    const double v = value(cur);
    vmin = std::min(vmin, v);
    if (v <= q) {
      AlphaState best = std::abs(v - q) < std::abs(vprev - q) ? cur : prev;
      std::optional<double> hint = cur.tau;
      auto g = [&](double alpha) {
        AlphaState st = se.at_alpha(alpha, hint);
        hint = st.tau;
        const double d = value(st) - q;
        if (std::abs(d) < std::abs(value(best) - q)) {
          best = st;
        }
        return d;
      };
      std::uintmax_t iters = 200;
      auto tol = [&](double x, double y) {
        return std::abs(x - y) <= 1e-14 * std::max(1.0, std::abs(x));
      };
      boost::math::tools::toms748_solve(g, prev.alpha, a, vprev - q, v - q, tol, iters);
      if (std::abs(value(best) - q) > opts.fdp_tol) {
        std::ostringstream os;
        os << "FDP target bracket failed near alpha in [" << prev.alpha << ", " << a
           << "]: residual " << value(best) - q;
        throw NumericalError(os.str());
      }
      return pack(best, false);
    }
    prev = cur;
    vprev = v;
  }
  std::ostringstream os;
  os << "target FDP " << q << " unattainable: scanned range reaches [" << vmin << ", "
     << v0 << "]";
  throw UnattainableTargetError(os.str(), vmin, v0);
}

inline TargetSolution lambda_for_target(const AmpParams &params, const PriorSpec &prior,
                                        double target_q, const TargetMode &mode,
                                        const TargetOptions &opts = {}) {
  require(target_q > 0.0 && target_q < 1.0, "target q must lie in (0, 1)");
  if (std::holds_alternative<OracleMode>(mode)) {
    const StateEvolution se(params, prior);
    const AlphaState lower = se.alpha_for_lambda(opts.lambda_floor);
    return lambda_for_target_state(se, target_q, params.epsilon, 0.0, lower, opts);
  }
  const auto &ko = std::get<KnockoffMode>(mode);
  const KnockoffCalibration cal = calibrate_knockoff_limit(params, prior, ko.rho, ko.t0);
  const StateEvolution se(augmented_amp_params(params, ko.rho), prior);
  return lambda_for_target_state(se, target_q, params.epsilon, cal.factor, cal.at_t0, opts);
}

/// One row of an exported tradeoff curve.
struct CurveRow {
  double lambda = 0.0;
  double alpha = 0.0;
  double tau = 0.0;
  double fdp_inf = 0.0;
  double tpp_inf = 0.0;
  std::optional<double> fdp_hat_aug;
};

inline std::vector<double> log_grid(double hi, double lo, std::size_t count) {
  require(count >= 2 && hi > lo && lo > 0.0, "log grid needs hi > lo > 0 and >= 2 points");
  std::vector<double> g(count);
  const double a = std::log(hi);
  const double b = std::log(lo);
  for (std::size_t i = 0; i < count; ++i) {
    g[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  }
  g.front() = hi;
  g.back() = lo;
  return g;
}

namespace detail {

inline AmpFixedPoint solve_at(const StateEvolution &se, double lam, std::optional<double> hint) {
  try {
    return se.solve(lam, hint);
  } catch (const LambdaFailure &) {
    throw;
  } catch (const NumericalError &e) {
    std::ostringstream os;
    os << std::setprecision(17) << "state evolution failed at lambda=" << lam << ": " << e.what();
    throw LambdaFailure(os.str(), lam);
  }
}

} // namespace detail

/// Oracle curve (FDP, TPP) over a lambda grid.
inline std::vector<CurveRow> trace_oracle_curve(const AmpParams &params, const PriorSpec &prior,
                                                const std::vector<double> &lambdas) {
  const StateEvolution se(params, prior);
  std::vector<CurveRow> rows;
  rows.reserve(lambdas.size());
  std::optional<double> hint;
  for (double lam : lambdas) {
    const AmpFixedPoint fp = detail::solve_at(se, lam, hint);
    hint = fp.alpha;
    const TradeoffPoint tp = se.tradeoff(fp);
    rows.push_back({lam, fp.alpha, fp.tau, tp.fdp_inf, tp.tpp_inf, std::nullopt});
  }
  return rows;
}

/// Augmented-design curve (FDP_aug, TPP_aug) plus the FDP-hat limit for
/// lambda >= t0.
inline std::vector<CurveRow> trace_augmented_curve(const AmpParams &params,
                                                   const PriorSpec &prior, double rho,
                                                   double t0,
                                                   const std::vector<double> &lambdas) {
  const StateEvolution se(augmented_amp_params(params, rho), prior);
  std::optional<double> factor;
  try {
    factor = calibrate_knockoff_limit(params, prior, rho, t0).factor;
  } catch (const NumericalError &) {
    factor.reset();
  }
  std::vector<CurveRow> rows;
  rows.reserve(lambdas.size());
  std::optional<double> hint;
  for (double lam : lambdas) {
    const AmpFixedPoint fp = detail::solve_at(se, lam, hint);
    hint = fp.alpha;
    const AlphaState st = se.at_alpha(fp.alpha, fp.tau);
    const AugmentedLimits lim = augmented_limits_from_state(st, params.epsilon);
    CurveRow row{lam, fp.alpha, fp.tau, lim.fdp_aug, lim.tpp_aug, std::nullopt};
    if (factor && lam >= t0) {
      row.fdp_hat_aug = fdp_hat_from_state(st, params.epsilon, *factor);
    }
    rows.push_back(row);
  }
  return rows;
}

} // namespace kamp
