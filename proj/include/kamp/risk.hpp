#pragma once

// Asymptotic prediction risk of the Lasso, the risk-minimizing penalty and the
// inflation incurred by tuning with knockoffs instead.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kamp/error.hpp"
#include "kamp/parallel.hpp"
#include "kamp/priors.hpp"
#include "kamp/state_evolution.hpp"

namespace kamp {

struct RiskCurve {
  std::vector<double> lambda_grid;
  std::vector<double> risk_values;
};

/// E[(eta_{alpha tau}(Pi + tau W) - Pi)^2] at the fixed point for lambda.
inline double asymptotic_risk(const AmpParams &params, const PriorSpec &prior, double lambda) {
  require(lambda > 0.0 && std::isfinite(lambda), "lambda must be positive");
  const StateEvolution se(params, prior);
  return se.alpha_for_lambda(lambda).fn.f;
}

inline RiskCurve risk_curve(const AmpParams &params, const PriorSpec &prior,
                            const std::vector<double> &lambdas) {
  const StateEvolution se(params, prior);
  RiskCurve c;
  std::optional<double> hint;
  for (double lam : lambdas) {
    require(lam > 0.0 && std::isfinite(lam), "lambda grid must be positive");
    const AlphaState st = se.alpha_for_lambda(lam, hint);
    hint = st.alpha;
    c.lambda_grid.push_back(lam);
    c.risk_values.push_back(st.fn.f);
  }
  return c;
}

struct OracleResult {
  double lambda = 0.0;
  double alpha = 0.0;
  double tau = 0.0;
  double risk = 0.0;
  bool boundary = false;     ///< minimum sits at an end of the scanned range
  bool near_tie = false;     ///< another local grid minimum within 1% of the best
  std::size_t grid_index = 0;
};

struct OracleOptions {
  int grid_points = 100;
  double lambda_floor = 1e-3; ///< scan starts at the alpha solving lambda(alpha) = floor
  double alpha_span = 8.0;    ///< and extends this far in alpha
  double lambda_rel_tol = 1e-5;
};

/// Risk-minimizing penalty.  Risk and lambda are both functions of alpha along
/// the fixed-point curve, so the scan and the golden-section refinement run in
/// alpha, with the stopping rule stated on the implied lambda bracket.
inline OracleResult oracle_lambda(const StateEvolution &se, const OracleOptions &opts = {}) {
  require(opts.grid_points >= 3, "oracle grid needs at least 3 points");
  const AlphaState first = se.alpha_for_lambda(opts.lambda_floor);
  const int m = opts.grid_points;
  std::vector<AlphaState> grid;
  grid.reserve(static_cast<std::size_t>(m));
  grid.push_back(first);
  for (int i = 1; i < m; ++i) {
    const double a = first.alpha + opts.alpha_span * i / (m - 1);
    grid.push_back(se.at_alpha(a, grid.back().tau));
  }
  std::size_t k = 0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (grid[i].fn.f < grid[k].fn.f) {
      k = i;
    }
  }
  OracleResult res;
  res.grid_index = k;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (i == k) {
      continue;
    }
    const bool local_min = (i == 0 || grid[i].fn.f <= grid[i - 1].fn.f) &&
                           (i + 1 == grid.size() || grid[i].fn.f <= grid[i + 1].fn.f);
    if (local_min && std::abs(i - static_cast<double>(k)) > 1.0 &&
        grid[i].fn.f <= 1.01 * grid[k].fn.f) {
      res.near_tie = true;
    }
  }
  if (k == 0 || k + 1 == grid.size()) {
    res.boundary = true;
    res.lambda = grid[k].lambda;
    res.alpha = grid[k].alpha;
    res.tau = grid[k].tau;
    res.risk = grid[k].fn.f;
    return res;
  }

  constexpr double invphi = 0.6180339887498949;
  AlphaState lo = grid[k - 1];
  AlphaState hi = grid[k + 1];
  AlphaState best = grid[k];
  auto eval = [&](double a) {
    AlphaState st = se.at_alpha(a, best.tau);
    if (st.fn.f < best.fn.f) {
      best = st;
    }
    return st;
  };
  AlphaState c = eval(hi.alpha - invphi * (hi.alpha - lo.alpha));
  AlphaState d = eval(lo.alpha + invphi * (hi.alpha - lo.alpha));
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo.lambda + hi.lambda);
    if (std::abs(hi.lambda - lo.lambda) <= opts.lambda_rel_tol * mid) {
      break;
    }
    if (c.fn.f < d.fn.f) {
      hi = d;
      d = c;
      c = eval(hi.alpha - invphi * (hi.alpha - lo.alpha));
    } else {
      lo = c;
      c = d;
      d = eval(lo.alpha + invphi * (hi.alpha - lo.alpha));
    }
  }
  res.lambda = best.lambda;
  res.alpha = best.alpha;
  res.tau = best.tau;
  res.risk = best.fn.f;
  return res;
}

inline OracleResult oracle_lambda(const AmpParams &params, const PriorSpec &prior,
                                  const OracleOptions &opts = {}) {
  return oracle_lambda(StateEvolution(params, prior), opts);
}

struct InflationResult {
  double ratio = 0.0;
  double lambda_ko = 0.0;
  double risk_ko = 0.0;
  bool ko_boundary = false; ///< target already met at lambda = t0
  OracleResult oracle;
};

inline InflationResult risk_inflation_detail(const AmpParams &params, const PriorSpec &prior,
                                             double q, double rho, double t0,
                                             const OracleOptions &oopts = {}) {
  const TargetSolution ko = lambda_for_target(params, prior, q, KnockoffMode{rho, t0});
  const StateEvolution se(params, prior);
  InflationResult out;
  out.lambda_ko = ko.lambda;
  out.ko_boundary = ko.boundary;
  out.risk_ko = se.alpha_for_lambda(ko.lambda).fn.f;
  out.oracle = oracle_lambda(se, oopts);
  // The infimum over lambda is bounded by every evaluated risk.
  const double inf_risk = std::min(out.oracle.risk, out.risk_ko);
  if (!(inf_risk > 0.0)) {
    throw NumericalError("oracle risk vanishes; inflation ratio undefined");
  }
  out.ratio = out.risk_ko / inf_risk;
  return out;
}

inline double risk_inflation(const AmpParams &params, const PriorSpec &prior, double q,
                             double rho, double t0) {
  return risk_inflation_detail(params, prior, q, rho, t0).ratio;
}

struct InflationPoint {
  double location = 0.0;
  std::optional<double> ratio;
  std::string error;
};

struct InflationCurve {
  std::vector<InflationPoint> points;
  double max_ratio = std::numeric_limits<double>::quiet_NaN();
  double argmax_location = std::numeric_limits<double>::quiet_NaN();
  std::size_t failures = 0;
};

inline InflationCurve point_mass_inflation_curve(const AmpParams &params, double q, double rho,
                                                 double t0,
                                                 const std::vector<double> &locations,
                                                 unsigned threads = 1) {
  for (double x : locations) {
    require(x > 0.0 && std::isfinite(x), "point-mass locations must be positive");
  }
  InflationCurve curve;
  curve.points = parallel_map<InflationPoint>(locations.size(), threads, [&](std::size_t i) {
    InflationPoint pt;
    pt.location = locations[i];
    try {
      pt.ratio = risk_inflation(params, PriorSpec(params.epsilon, PointMass{locations[i]}), q,
                                rho, t0);
    } catch (const NumericalError &e) {
      pt.error = e.what();
    }
    return pt;
  });
  for (const auto &pt : curve.points) {
    if (!pt.ratio) {
      ++curve.failures;
    } else if (!(*pt.ratio <= curve.max_ratio)) {
      curve.max_ratio = *pt.ratio;
      curve.argmax_location = pt.location;
    }
  }
  return curve;
}

inline std::vector<double> location_grid(double lo, double hi, double step) {
  require(step > 0.0 && hi >= lo, "location grid needs hi >= lo and step > 0");
  std::vector<double> g;
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) {
    g.push_back(lo + step * static_cast<double>(i));
  }
  return g;
}

struct SweepRecord {
  std::size_t member_id = 0;
  std::vector<int> units;
  std::vector<double> weights;
  double ratio = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

struct SweepSummary {
  std::vector<SweepRecord> records; ///< ordered by member_id
  std::size_t family_size = 0;
  std::size_t failures = 0;
  double max_ratio = std::numeric_limits<double>::quiet_NaN();
  double min_ratio = std::numeric_limits<double>::quiet_NaN();
  std::size_t argmax_member = 0;
  std::vector<HistogramBin> histogram;
};

struct SweepOptions {
  std::vector<double> shapes = default_mixture_shapes();
  std::vector<int> levels{0, 1, 2, 3, 4};
  std::optional<std::size_t> subsample = 2000; ///< empty runs the whole family
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string checkpoint_path;                 ///< empty disables checkpointing
  std::size_t chunk = 64;
  std::size_t histogram_bins = 40;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

inline std::vector<HistogramBin> histogram(const std::vector<double> &values, std::size_t bins) {
  std::vector<HistogramBin> out;
  if (values.empty() || bins == 0) {
    return out;
  }
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  double lo = *mn;
  double hi = *mx;
  if (!(hi > lo)) {
    hi = lo + 1e-9;
  }
  const double w = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out.push_back({lo + w * static_cast<double>(b), b + 1 == bins ? hi : lo + w * static_cast<double>(b + 1), 0});
  }
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - lo) / w);
    out[std::min(b, bins - 1)].count++;
  }
  return out;
}

namespace detail {

inline std::string join_units(const std::vector<int> &u) {
  std::string s;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (i) {
      s += ';';
    }
    s += std::to_string(u[i]);
  }
  return s;
}

// Reads member_id,weights,ratio rows; a truncated last line is ignored.
inline std::map<std::size_t, double> read_checkpoint(const std::string &path) {
  std::map<std::size_t, double> done;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.rfind("member_id", 0) == 0) {
      continue;
    }
    const auto c1 = line.find(',');
    const auto c2 = line.rfind(',');
    if (c1 == std::string::npos || c2 == c1) {
      continue;
    }
    try {
      std::size_t used = 0;
      const std::size_t id = std::stoull(line.substr(0, c1));
      const std::string rs = line.substr(c2 + 1);
      const double r = rs == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(rs, &used);
      done[id] = r;
    } catch (const std::exception &) {
    }
  }
  return done;
}

} // namespace detail

/// Risk inflation over the restricted Gamma-mixture family (or a uniform
/// subsample of it).  Records come back in member order whatever the thread
/// count; with a checkpoint path, finished members are appended as they
/// complete chunk by chunk and skipped on restart.
inline SweepSummary mixture_sweep(const AmpParams &params, double q, double rho, double t0,
                                  const SweepOptions &opts = {}) {
  params.validate();
  const auto members = enumerate_restricted_mixture_members(opts.shapes.size(), opts.levels);
  SweepSummary sum;
  sum.family_size = members.size();
  std::vector<std::size_t> ids(members.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  if (opts.subsample && *opts.subsample < members.size()) {
    std::vector<std::size_t> pick;
    pick.reserve(*opts.subsample);
    std::mt19937_64 rng(opts.seed);
    std::sample(ids.begin(), ids.end(), std::back_inserter(pick), *opts.subsample, rng);
    ids = std::move(pick);
  }

  std::map<std::size_t, double> done;
  std::ofstream ckpt;
  if (!opts.checkpoint_path.empty()) {
    done = detail::read_checkpoint(opts.checkpoint_path);
    const bool fresh = done.empty();
    ckpt.open(opts.checkpoint_path, std::ios::app);
    if (!ckpt) {
      throw ValidationError("cannot open checkpoint file " + opts.checkpoint_path);
    }
    ckpt << std::setprecision(17);
    if (fresh) {
      ckpt << "member_id,weights,ratio\n";
    }
  }

  auto make_record = [&](std::size_t id) {
    SweepRecord r;
    r.member_id = id;
    r.units = members[id].units;
    r.weights = members[id].weights();
    return r;
  };
  std::vector<std::size_t> todo;
  for (std::size_t id : ids) {
    if (!done.count(id)) {
      todo.push_back(id);
    }
  }
  std::map<std::size_t, SweepRecord> fresh_records;
  const std::size_t chunk = std::max<std::size_t>(1, opts.chunk);
  for (std::size_t start = 0; start < todo.size(); start += chunk) {
    const std::size_t len = std::min(chunk, todo.size() - start);
    auto recs = parallel_map<SweepRecord>(len, opts.threads, [&](std::size_t i) {
      SweepRecord r = make_record(todo[start + i]);
      try {
        const PriorSpec prior(params.epsilon, GammaMixture{opts.shapes, r.weights, 1.0});
        r.ratio = risk_inflation(params, prior, q, rho, t0);
      } catch (const NumericalError &e) {
        r.error = e.what();
      }
      return r;
    });
    for (auto &r : recs) {
      if (ckpt.is_open()) {
        ckpt << r.member_id << ',' << detail::join_units(r.units) << ',' << r.ratio << '\n';
      }
      fresh_records[r.member_id] = std::move(r);
    }
    if (ckpt.is_open()) {
      ckpt.flush();
    }
    if (opts.progress) {
      opts.progress(start + len, todo.size());
    }
  }

  std::vector<double> ratios;
  for (std::size_t id : ids) {
    SweepRecord r;
    if (auto it = fresh_records.find(id); it != fresh_records.end()) {
      r = std::move(it->second);
    } else {
      r = make_record(id);
      r.ratio = done.at(id);
      if (std::isnan(r.ratio)) {
        r.error = "failed in an earlier run";
      }
    }
    if (std::isnan(r.ratio)) {
      ++sum.failures;
    } else {
      ratios.push_back(r.ratio);
      if (!(r.ratio <= sum.max_ratio)) {
        sum.max_ratio = r.ratio;
        sum.argmax_member = id;
      }
      if (!(r.ratio >= sum.min_ratio)) {
        sum.min_ratio = r.ratio;
      }
    }
    sum.records.push_back(std::move(r));
  }
  sum.histogram = histogram(ratios, opts.histogram_bins);
  return sum;
}

} // namespace kamp
