#pragma once

// Monte Carlo replicates: draw (beta, X, y), run the knockoff filter, and
// record per-lambda FDP/TPP curves of the plain Lasso for comparison with the
// asymptotic predictions.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kamp/error.hpp"
#include "kamp/knockoff.hpp"
#include "kamp/lasso.hpp"
#include "kamp/parallel.hpp"
#include "kamp/priors.hpp"
#include "kamp/state_evolution.hpp"

namespace kamp {

enum class ComparisonMode { entry_time, nonzero_at_lambda };

inline ComparisonMode parse_comparison_mode(const std::string &s) {
  if (s == "entry_time" || s == "entry") {
    return ComparisonMode::entry_time;
  }
  if (s == "nonzero_at_lambda" || s == "nonzero") {
    return ComparisonMode::nonzero_at_lambda;
  }
  throw ValidationError("unknown comparison mode '" + s + "' (expected entry_time or nonzero_at_lambda)");
}

inline std::string to_string(ComparisonMode m) {
  return m == ComparisonMode::entry_time ? "entry_time" : "nonzero_at_lambda";
}

struct ExperimentConfig {
  int n = 1000;
  int p = 1000;
  PriorSpec prior{0.2, Exponential{1.0}};
  double sigma = 0.5;
  KnockoffConfig knockoff;
  int replicates = 1;
  std::uint64_t master_seed = 1;
  ComparisonMode comparison_mode = ComparisonMode::entry_time;
  bool run_filter = true;  ///< knockoff filter on the augmented design
  LambdaGridSpec filter_grid;
  bool record_curves = false; ///< Lasso path on the original design
  LambdaGridSpec curve_grid;
  /// Target levels for the knockoff-versus-oracle power comparison; the oracle
  /// penalty is the asymptotic lambda_for_target applied to the same data.
  std::vector<double> power_q;
  LassoOptions lasso;

  void validate() const {
    require(n >= 1 && p >= 1, "n and p must be positive");
    require(replicates >= 1, "replicates must be at least 1");
    require(sigma >= 0.0 && std::isfinite(sigma), "sigma must be nonnegative");
    knockoff.validate();
    for (double q : power_q) {
      require(q > 0.0 && q < 1.0, "power comparison levels must lie in (0, 1)");
    }
  }
};

struct FilterOutcome {
  double fdp = 0.0;
  double tpp = 0.0;
  double threshold = 0.0;
  double pi0_hat = 1.0;
  long n_rejected = 0;
};

struct CurveSample {
  double lambda = 0.0;
  double fdp_entry = 0.0;
  double tpp_entry = 0.0;
  double fdp_nonzero = 0.0;
  double tpp_nonzero = 0.0;
};

struct PowerSample {
  double q = 0.0;
  double ko_fdp = 0.0;
  double ko_tpp = 0.0;
  double oracle_lambda = 0.0;
  double oracle_fdp = 0.0;
  double oracle_tpp = 0.0;
};

struct ReplicateRecord {
  int rep = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  long signals = 0;
  /// Indexed by Pi0Mode: one, raw_estimate, truncated_estimate.
  std::array<FilterOutcome, 3> modes{};
  std::vector<CurveSample> curve;
  std::vector<PowerSample> power;

  const FilterOutcome &outcome(Pi0Mode m) const { return modes[static_cast<std::size_t>(m)]; }
};

struct ReplicateSeeds {
  std::uint64_t beta;
  std::uint64_t design;
  std::uint64_t noise;
  std::uint64_t knockoffs;
};

inline ReplicateSeeds replicate_seeds(std::uint64_t master, int rep) {
  const std::uint64_t s = derive_seed(master, static_cast<std::uint64_t>(rep));
  return {derive_seed(s, 1), derive_seed(s, 2), derive_seed(s, 3), derive_seed(s, 4)};
}

/// Draws one replicate's problem.
inline DesignProblem draw_problem(const ExperimentConfig &cfg, int rep) {
  const ReplicateSeeds seeds = replicate_seeds(cfg.master_seed, rep);
  DesignProblem prob;
  const std::vector<double> b = cfg.prior.sample(static_cast<std::size_t>(cfg.p), seeds.beta);
  prob.beta_true = Eigen::Map<const Vector>(b.data(), cfg.p);
  prob.design = generate_design(cfg.n, cfg.p, seeds.design);
  prob.response = simulate_response(prob.design, *prob.beta_true, cfg.sigma, seeds.noise);
  prob.noise_sd = cfg.sigma;
  return prob;
}

namespace detail {

struct Counts {
  long nulls = 0;
  long hits = 0;
};

inline void quality(const Counts &c, long signals, double &fdp, double &tpp) {
  fdp = static_cast<double>(c.nulls) / std::max(1L, c.nulls + c.hits);
  tpp = static_cast<double>(c.hits) / std::max(1L, signals);
}

} // namespace detail

inline ReplicateRecord run_replicate(const ExperimentConfig &cfg, int rep,
                                     const std::vector<double> &oracle_lambdas = {}) {
  ReplicateRecord rec;
  rec.rep = rep;
  rec.seed = derive_seed(cfg.master_seed, static_cast<std::uint64_t>(rep));
  try {
    const DesignProblem prob = draw_problem(cfg, rep);
    const Vector &beta = *prob.beta_true;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
      rec.signals += beta(j) != 0.0;
    }
    const ReplicateSeeds seeds = replicate_seeds(cfg.master_seed, rep);

    std::optional<Vector> stats;
    int r = 0;
    if (cfg.run_filter || !cfg.power_q.empty()) {
      r = knockoff_count(cfg.p, cfg.knockoff.rho);
      const double sd = cfg.knockoff.knockoff_sd.value_or(1.0 / std::sqrt(static_cast<double>(cfg.n)));
      FilterOptions fo{cfg.filter_grid, cfg.lasso};
      stats = augmented_statistics(prob.design, prob.response, r, seeds.knockoffs, sd, fo);
      for (Pi0Mode m : {Pi0Mode::one, Pi0Mode::raw_estimate, Pi0Mode::truncated_estimate}) {
        KnockoffConfig kc = cfg.knockoff;
        kc.pi0_mode = m;
        const FilterResult fr = filter_from_statistics(*stats, cfg.p, r, kc);
        const SelectionQuality sq = selection_quality(fr.rejected, beta);
        rec.modes[static_cast<std::size_t>(m)] = {sq.fdp, sq.tpp, fr.threshold, fr.pi0_hat,
                                                  sq.rejections};
      }
    }

    if (cfg.record_curves || !cfg.power_q.empty()) {
      const std::vector<double> grid = cfg.curve_grid.build(prob.design, prob.response);
      std::vector<double> entry(static_cast<std::size_t>(cfg.p), 0.0);
      std::vector<Vector> sols;
      PathOptions po;
      po.lasso = cfg.lasso;
      po.observer = [&](std::size_t, double lam, const Vector &b) {
        detail::Counts cz;
        detail::Counts ce;
        for (int j = 0; j < cfg.p; ++j) {
          const bool sig = beta(j) != 0.0;
          if (b(j) != 0.0 && entry[static_cast<std::size_t>(j)] == 0.0) {
            entry[static_cast<std::size_t>(j)] = lam;
          }
          if (b(j) != 0.0) {
            (sig ? cz.hits : cz.nulls) += 1;
          }
          if (entry[static_cast<std::size_t>(j)] >= lam) {
            (sig ? ce.hits : ce.nulls) += 1;
          }
        }
        CurveSample cs;
        cs.lambda = lam;
        detail::quality(ce, rec.signals, cs.fdp_entry, cs.tpp_entry);
        detail::quality(cz, rec.signals, cs.fdp_nonzero, cs.tpp_nonzero);
        if (cfg.record_curves) {
          rec.curve.push_back(cs);
        }
        if (!cfg.power_q.empty()) {
          sols.push_back(b);
        }
      };
      const LassoPath path = lasso_path(prob.design, prob.response, grid, po);

      for (std::size_t i = 0; i < cfg.power_q.size(); ++i) {
        PowerSample ps;
        ps.q = cfg.power_q[i];
        KnockoffConfig kc = cfg.knockoff;
        kc.q = ps.q;
        const FilterResult fr = filter_from_statistics(*stats, cfg.p, r, kc);
        const SelectionQuality sq = selection_quality(fr.rejected, beta);
        ps.ko_fdp = sq.fdp;
        ps.ko_tpp = sq.tpp;
        ps.oracle_lambda = oracle_lambdas.at(i);
        detail::Counts c;
        if (cfg.comparison_mode == ComparisonMode::entry_time) {
          for (int j = 0; j < cfg.p; ++j) {
            if (path.entry_times(j) >= ps.oracle_lambda) {
              (beta(j) != 0.0 ? c.hits : c.nulls) += 1;
            }
          }
        } else {
          // Warm start from the closest grid point above the oracle penalty.
          std::size_t k = 0;
          while (k + 1 < grid.size() && grid[k + 1] >= ps.oracle_lambda) {
            ++k;
          }
          const Vector b = lasso_solve(prob.design, prob.response, ps.oracle_lambda, sols[k], cfg.lasso);
          for (int j = 0; j < cfg.p; ++j) {
            if (b(j) != 0.0) {
              (beta(j) != 0.0 ? c.hits : c.nulls) += 1;
            }
          }
        }
        detail::quality(c, rec.signals, ps.oracle_fdp, ps.oracle_tpp);
        rec.power.push_back(ps);
      }
    }
    rec.ok = true;
  } catch (const NumericalError &e) {
    rec.ok = false;
    rec.error = e.what();
  }
  return rec;
}

/// Asymptotic oracle penalties for the power comparison levels.
inline std::vector<double> oracle_lambdas_for(const ExperimentConfig &cfg) {
  std::vector<double> out;
  if (cfg.power_q.empty()) {
    return out;
  }
  const AmpParams params{cfg.prior.epsilon(), static_cast<double>(cfg.n) / cfg.p, cfg.sigma};
  for (double q : cfg.power_q) {
    out.push_back(lambda_for_target(params, cfg.prior, q, OracleMode{}).lambda);
  }
  return out;
}

/// Replicates in index order, whatever the thread count.
inline std::vector<ReplicateRecord> run_experiment(const ExperimentConfig &cfg, unsigned threads = 1) {
  cfg.validate();
  const std::vector<double> lambdas = oracle_lambdas_for(cfg);
  return parallel_map<ReplicateRecord>(static_cast<std::size_t>(cfg.replicates), threads,
                                       [&](std::size_t i) {
                                         return run_replicate(cfg, static_cast<int>(i), lambdas);
                                       });
}

struct MeanSe {
  double mean = 0.0;
  std::optional<double> se; ///< absent for a single observation
};

inline MeanSe mean_se(const std::vector<double> &v) {
  require(!v.empty(), "mean of an empty sample");
  MeanSe m;
  double s = 0.0;
  for (double x : v) {
    s += x;
  }
  m.mean = s / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) {
      ss += (x - m.mean) * (x - m.mean);
    }
    m.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return m;
}

struct ExperimentSummary {
  Pi0Mode mode = Pi0Mode::one;
  std::size_t replicates = 0;
  std::size_t failures = 0;
  MeanSe fdp;
  MeanSe tpp;
  double empirical_fdr = 0.0; ///< mean of per-replicate FDP
  std::optional<double> theory_tpp;
  std::optional<double> tpp_delta; ///< mean TPP minus theory
};

inline ExperimentSummary summarize(const std::vector<ReplicateRecord> &table, Pi0Mode mode,
                                   std::optional<double> theory_tpp = {}) {
  require(!table.empty(), "cannot summarize an empty table");
  ExperimentSummary s;
  s.mode = mode;
  std::vector<double> fdp;
  std::vector<double> tpp;
  for (const auto &r : table) {
    if (!r.ok) {
      ++s.failures;
      continue;
    }
    fdp.push_back(r.outcome(mode).fdp);
    tpp.push_back(r.outcome(mode).tpp);
  }
  s.replicates = fdp.size();
  if (fdp.empty()) {
    return s;
  }
  s.fdp = mean_se(fdp);
  s.tpp = mean_se(tpp);
  s.empirical_fdr = s.fdp.mean;
  if (theory_tpp) {
    s.theory_tpp = theory_tpp;
    s.tpp_delta = s.tpp.mean - *theory_tpp;
  }
  return s;
}

} // namespace kamp
