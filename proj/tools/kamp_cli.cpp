// kamp: theory curves, simulations, knockoff filtering of user data, risk
// analysis and the hypergeometric verification sweep.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "kamp/error.hpp"
#include "kamp/experiment.hpp"
#include "kamp/hypergeom.hpp"
#include "kamp/io.hpp"
#include "kamp/knockoff.hpp"
#include "kamp/parallel.hpp"
#include "kamp/risk.hpp"
#include "kamp/state_evolution.hpp"

namespace {

using namespace kamp;

struct Global {
  unsigned threads = default_thread_count();
  std::string config;
};

/// Output file or stdout for "-" / empty.
class Sink {
public:
  explicit Sink(const std::string &path) {
    if (!path.empty() && path != "-") {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) {
        throw ValidationError("cannot open " + path + " for writing");
      }
    }
  }
  std::ostream &os() { return file_ ? *file_ : std::cout; }

private:
  std::unique_ptr<std::ofstream> file_;
};

std::optional<json> load_config(const Global &g) {
  if (g.config.empty()) {
    return std::nullopt;
  }
  return read_json_file(g.config);
}

/// Model flags shared by the theory commands.  Explicit flags win over
/// values from --config.
struct ModelFlags {
  double epsilon = 0.2;
  double delta = 1.0;
  double sigma = 0.5;
  std::string prior;
  CLI::Option *eps_opt = nullptr;
  CLI::Option *delta_opt = nullptr;
  CLI::Option *sigma_opt = nullptr;
  CLI::Option *prior_opt = nullptr;

  void add(CLI::App *app, double eps_default, double sigma_default, bool prior_required,
           const std::string &prior_default = "") {
    epsilon = eps_default;
    sigma = sigma_default;
    prior = prior_default;
    eps_opt = app->add_option("--epsilon", epsilon, "Fraction of nonzero coefficients")
                  ->capture_default_str();
    delta_opt = app->add_option("--delta", delta, "Sampling ratio n/p")->capture_default_str();
    sigma_opt = app->add_option("--sigma", sigma, "Noise standard deviation")->capture_default_str();
    prior_opt = app->add_option("--prior", prior,
                                "Nonzero component: point:LOC, exp:RATE, gamma:SHAPES/WEIGHTS[/RATE] "
                                "(';'-separated lists), tabulated:CSV, or a JSON file" +
                                    std::string(prior_required ? " (required)" : ""));
    if (!prior_default.empty()) {
      prior_opt->capture_default_str();
    }
    owner = app;
  }

  void merge(const std::optional<json> &cfg) {
    if (!cfg) {
      return;
    }
    const json &c = *cfg;
    if (!eps_opt->count()) {
      if (c.contains("epsilon")) {
        epsilon = c.at("epsilon").get<double>();
      } else if (c.contains("prior") && c.at("prior").is_object() && c.at("prior").contains("epsilon")) {
        epsilon = c.at("prior").at("epsilon").get<double>();
      }
    }
    if (!delta_opt->count()) {
      if (c.contains("delta")) {
        delta = c.at("delta").get<double>();
      } else if (c.contains("n") && c.contains("p")) {
        delta = c.at("n").get<double>() / c.at("p").get<double>();
      }
    }
    if (!sigma_opt->count() && c.contains("sigma")) {
      sigma = c.at("sigma").get<double>();
    }
    if (!prior_opt->count() && c.contains("prior")) {
      config_prior = c.at("prior");
    }
  }

  PriorSpec build_prior() const {
    if (prior_opt->count() || config_prior.is_null()) {
      require(!prior.empty(), "--prior is required\n" + owner->help());
      if (has_suffix(prior, ".json")) {
        return prior_from_json(read_json_file(prior), epsilon);
      }
      return parse_prior(epsilon, prior);
    }
    return prior_from_json(config_prior, epsilon);
  }

  AmpParams params() const {
    AmpParams p{epsilon, delta, sigma};
    p.validate();
    return p;
  }

  json config_prior;
  CLI::App *owner = nullptr;
};

struct KnockoffFlags {
  double rho = 1.0;
  double t0 = 0.1;
  double q = 0.2;
  CLI::Option *rho_opt = nullptr;
  CLI::Option *t0_opt = nullptr;
  CLI::Option *q_opt = nullptr;

  void add(CLI::App *app, double q_default, bool with_q = true) {
    q = q_default;
    rho_opt = app->add_option("--rho", rho, "Knockoff ratio r/p")->capture_default_str();
    t0_opt = app->add_option("--t0", t0, "Penalty level at which pi0 is estimated")
                 ->capture_default_str();
    if (with_q) {
      q_opt = app->add_option("--q", q, "Target FDR level")->capture_default_str();
    }
  }

  void merge(const std::optional<json> &cfg) {
    if (!cfg || !cfg->contains("knockoff")) {
      return;
    }
    const json &k = cfg->at("knockoff");
    if (!rho_opt->count() && k.contains("rho")) {
      rho = k.at("rho").get<double>();
    }
    if (!t0_opt->count() && k.contains("t0")) {
      t0 = k.at("t0").get<double>();
    }
    if (q_opt && !q_opt->count() && k.contains("q")) {
      q = k.at("q").get<double>();
    }
  }
};

void print_summary(std::ostream &os, const ExperimentSummary &s) {
  os << std::setprecision(6) << "pi0_mode=" << to_string(s.mode) << " replicates=" << s.replicates
     << " failures=" << s.failures;
  if (s.replicates > 0) {
    os << " fdr=" << s.fdp.mean;
    if (s.fdp.se) {
      os << " (se " << *s.fdp.se << ")";
    }
    os << " tpp=" << s.tpp.mean;
    if (s.tpp.se) {
      os << " (se " << *s.tpp.se << ")";
    }
  }
  os << '\n';
}

int run(int argc, char **argv) {
  CLI::App app{"Knockoff filter and Lasso state-evolution toolkit"};
  app.require_subcommand(1);
  Global g;
  app.add_option("--threads", g.threads, "Worker threads (default from KAMP_THREADS, else all cores)")
      ->capture_default_str();
  app.add_option("--config", g.config, "JSON configuration in the experiment format");

  // tradeoff
  auto *tr = app.add_subcommand("tradeoff", "Asymptotic FDP/TPP curves along a lambda grid");
  ModelFlags tr_model;
  tr_model.add(tr, 0.2, 0.5, true);
  std::optional<double> tr_rho;
  double tr_t0 = 0.1;
  std::size_t tr_grid = 200;
  double tr_hi = 10.0;
  double tr_lo = 0.01;
  std::string tr_out;
  tr->add_option("--rho", tr_rho, "Knockoff ratio r/p, conventionally 1; when given, the augmented curve and FDP-hat are added");
  tr->add_option("--t0", tr_t0, "Penalty level at which pi0 is estimated")->capture_default_str();
  tr->add_option("--grid", tr_grid, "Number of lambda values (log-spaced)")->capture_default_str();
  tr->add_option("--lambda-max", tr_hi, "Largest lambda")->capture_default_str();
  tr->add_option("--lambda-min", tr_lo, "Smallest lambda")->capture_default_str();
  tr->add_option("--out", tr_out, "Output CSV (stdout when omitted)");

  // simulate
  auto *sim = app.add_subcommand("simulate", "Monte Carlo replicates of the knockoff filter and Lasso path");
  int sim_n = 1000;
  int sim_p = 1000;
  double sim_eps = 0.2;
  double sim_sigma = 0.5;
  std::string sim_prior = "exp:1";
  KnockoffFlags sim_ko;
  sim_ko.add(sim, 0.2);
  int sim_reps = 1;
  std::uint64_t sim_seed = 1;
  std::string sim_out;
  std::string sim_curves;
  std::string sim_power;
  std::string sim_mode = "one";
  std::string sim_cmp = "entry_time";
  std::size_t sim_grid = 200;
  std::optional<double> sim_floor;
  bool sim_no_filter = false;
  std::vector<double> sim_power_q;
  auto *o_n = sim->add_option("--n", sim_n, "Observations")->capture_default_str();
  auto *o_p = sim->add_option("--p", sim_p, "Variables")->capture_default_str();
  auto *o_eps = sim->add_option("--epsilon", sim_eps, "Fraction of nonzero coefficients")->capture_default_str();
  auto *o_sigma = sim->add_option("--sigma", sim_sigma, "Noise standard deviation")->capture_default_str();
  auto *o_prior = sim->add_option("--prior", sim_prior, "Nonzero component (see tradeoff --help)")->capture_default_str();
  auto *o_reps = sim->add_option("--reps", sim_reps, "Replicates")->capture_default_str();
  auto *o_seed = sim->add_option("--seed", sim_seed, "Master seed")->capture_default_str();
  sim->add_option("--out", sim_out, "Per-replicate results CSV (stdout when omitted)");
  sim->add_option("--curves-out", sim_curves, "Per-lambda FDP/TPP of the Lasso path on the original design");
  sim->add_option("--power-out", sim_power, "Knockoff versus asymptotic-oracle comparison CSV");
  auto *o_mode = sim->add_option("--pi0-mode", sim_mode, "pi0 used in the results CSV: one, raw, truncated")
                     ->capture_default_str();
  auto *o_cmp = sim->add_option("--comparison-mode", sim_cmp, "Selection rule at the oracle lambda: entry_time or nonzero_at_lambda")
                    ->capture_default_str();
  sim->add_option("--grid", sim_grid, "Lambda grid size for the Lasso paths")->capture_default_str();
  sim->add_option("--filter-floor", sim_floor, "Stop the augmented path at this lambda (entries below it count as 0)");
  sim->add_flag("--no-filter", sim_no_filter, "Skip the knockoff filter");
  sim->add_option("--power-q", sim_power_q, "Target levels for the power comparison");

  // filter
  auto *fl = app.add_subcommand("filter", "Knockoff filter on a user design and response");
  std::string fl_design;
  std::string fl_response;
  KnockoffConfig fl_cfg;
  std::string fl_mode = "one";
  std::uint64_t fl_seed = 1;
  std::size_t fl_grid = 200;
  std::optional<double> fl_sd;
  std::string fl_out;
  fl->add_option("--design", fl_design, "Design matrix: CSV (rows = observations) or .bin container")->required();
  fl->add_option("--response", fl_response, "Response: single-column CSV or .bin container")->required();
  fl->add_option("--q", fl_cfg.q, "Target FDR level")->capture_default_str();
  fl->add_option("--rho", fl_cfg.rho, "Knockoff ratio r/p")->capture_default_str();
  fl->add_option("--t0", fl_cfg.t0, "Penalty level at which pi0 is estimated")->capture_default_str();
  fl->add_option("--pi0-mode", fl_mode, "one, raw or truncated")->capture_default_str();
  fl->add_option("--seed", fl_seed, "Seed for the knockoff columns")->capture_default_str();
  fl->add_option("--grid", fl_grid, "Lambda grid size")->capture_default_str();
  fl->add_option("--knockoff-sd", fl_sd, "Knockoff entry sd (default: RMS entry of the design)");
  fl->add_option("--out", fl_out, "Output CSV (stdout when omitted)");

  // risk-curve
  auto *rc = app.add_subcommand("risk-curve", "Asymptotic Lasso risk along a lambda grid and the oracle lambda");
  ModelFlags rc_model;
  rc_model.add(rc, 0.2, 0.5, true);
  std::size_t rc_grid = 200;
  double rc_hi = 10.0;
  double rc_lo = 0.01;
  std::string rc_out;
  rc->add_option("--grid", rc_grid, "Number of lambda values (log-spaced)")->capture_default_str();
  rc->add_option("--lambda-max", rc_hi, "Largest lambda")->capture_default_str();
  rc->add_option("--lambda-min", rc_lo, "Smallest lambda")->capture_default_str();
  rc->add_option("--out", rc_out, "Output CSV (stdout when omitted)");

  // risk-inflation
  auto *ri = app.add_subcommand("risk-inflation", "Risk of knockoff tuning relative to the oracle penalty");
  ModelFlags ri_model;
  ri_model.add(ri, 0.1, 0.5, false);
  KnockoffFlags ri_ko;
  ri_ko.add(ri, 0.7);
  double ri_from = 0.1;
  double ri_to = 6.0;
  double ri_step = 0.05;
  std::string ri_out;
  ri->add_option("--from", ri_from, "First point-mass location")->capture_default_str();
  ri->add_option("--to", ri_to, "Last point-mass location")->capture_default_str();
  ri->add_option("--step", ri_step, "Location spacing")->capture_default_str();
  ri->add_option("--out", ri_out, "Output CSV (stdout when omitted)");
  ri->footer("With --prior, the ratio for that single prior is printed instead of the point-mass curve.");

  // mixture-sweep
  auto *ms = app.add_subcommand("mixture-sweep", "Risk inflation over the restricted Gamma-mixture family");
  ModelFlags ms_model;
  ms_model.add(ms, 0.1, 1.0, false);
  KnockoffFlags ms_ko;
  ms_ko.add(ms, 0.7);
  std::size_t ms_sub = 2000;
  bool ms_full = false;
  std::uint64_t ms_seed = 1;
  std::string ms_ckpt;
  std::string ms_out;
  std::string ms_hist;
  std::size_t ms_bins = 40;
  ms->add_option("--subsample", ms_sub, "Uniform subsample size")->capture_default_str();
  ms->add_flag("--full", ms_full, "Evaluate all 383,809 members (hours)");
  ms->add_option("--seed", ms_seed, "Subsample seed")->capture_default_str();
  ms->add_option("--checkpoint", ms_ckpt, "Append-only checkpoint CSV; finished members are skipped on restart");
  ms->add_option("--out", ms_out, "Per-member CSV (stdout when omitted)");
  ms->add_option("--histogram-out", ms_hist, "Histogram CSV of the ratios");
  ms->add_option("--bins", ms_bins, "Histogram bins")->capture_default_str();

  // hyper-check
  auto *hc = app.add_subcommand("hyper-check", "Exhaustive check of the hypergeometric closed forms");
  int hc_max = 12;
  hc->add_option("--max-population", hc_max, "Largest n0 + n1 enumerated")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    (void)app.exit(e);
    return 1;
  }
  require(g.threads >= 1, "--threads must be at least 1");
  const std::optional<json> cfg = load_config(g);

  if (*tr) {
    tr_model.merge(cfg);
    const AmpParams params = tr_model.params();
    const PriorSpec prior = tr_model.build_prior();
    require(tr_grid >= 2, "--grid must be at least 2");
    const std::vector<double> lambdas = log_grid(tr_hi, tr_lo, tr_grid);
    const auto oracle = trace_oracle_curve(params, prior, lambdas);
    std::vector<CurveRow> aug;
    if (tr_rho) {
      require(*tr_rho > 0.0, "--rho must be positive");
      aug = trace_augmented_curve(params, prior, *tr_rho, tr_t0, lambdas);
    }
    Sink out(tr_out);
    write_tradeoff_csv(out.os(), oracle, aug);
    return 0;
  }

  if (*sim) {
    ExperimentConfig c;
    if (cfg) {
      c = experiment_from_json(*cfg);
    }
    auto given = [&](CLI::Option *o) { return !cfg || o->count() > 0; };
    if (given(o_n)) c.n = sim_n;
    if (given(o_p)) c.p = sim_p;
    if (given(o_sigma)) c.sigma = sim_sigma;
    if (given(o_reps)) c.replicates = sim_reps;
    if (given(o_seed)) c.master_seed = sim_seed;
    if (given(o_cmp)) c.comparison_mode = parse_comparison_mode(sim_cmp);
    if (given(o_prior) || given(o_eps)) {
      const double eps = given(o_eps) ? sim_eps : c.prior.epsilon();
      c.prior = given(o_prior) ? parse_prior(eps, sim_prior) : c.prior.with_epsilon(eps);
    }
    if (given(sim_ko.rho_opt)) c.knockoff.rho = sim_ko.rho;
    if (given(sim_ko.t0_opt)) c.knockoff.t0 = sim_ko.t0;
    if (given(sim_ko.q_opt)) c.knockoff.q = sim_ko.q;
    const Pi0Mode mode = (cfg && !o_mode->count()) ? c.knockoff.pi0_mode : parse_pi0_mode(sim_mode);
    c.knockoff.pi0_mode = mode;
    if (!cfg || sim->count("--grid")) {
      c.filter_grid.count = sim_grid;
      c.curve_grid.count = sim_grid;
    }
    if (sim_floor) c.filter_grid.floor = *sim_floor;
    if (sim_no_filter) c.run_filter = false;
    if (!sim_curves.empty()) c.record_curves = true;
    if (!sim_power_q.empty()) c.power_q = sim_power_q;
    c.validate();

    const auto table = run_experiment(c, g.threads);
    {
      Sink out(sim_out);
      write_results_csv(out.os(), table, mode);
    }
    if (!sim_curves.empty()) {
      Sink out(sim_curves);
      write_experiment_curves_csv(out.os(), table);
    }
    if (!sim_power.empty()) {
      Sink out(sim_power);
      write_power_csv(out.os(), table);
    }
    if (c.run_filter) {
      for (Pi0Mode m : {Pi0Mode::one, Pi0Mode::raw_estimate, Pi0Mode::truncated_estimate}) {
        print_summary(std::cerr, summarize(table, m));
      }
    }
    for (const auto &r : table) {
      if (!r.ok) {
        std::cerr << "replicate " << r.rep << " failed: " << r.error << '\n';
      }
    }
    return 0;
  }

  if (*fl) {
    fl_cfg.pi0_mode = parse_pi0_mode(fl_mode);
    fl_cfg.knockoff_sd = fl_sd;
    fl_cfg.validate();
    require(fl_grid >= 2, "--grid must be at least 2");
    const Matrix x = read_matrix(fl_design);
    const Vector y = read_response(fl_response);
    FilterOptions fo;
    fo.grid.count = fl_grid;
    const FilterResult res = run_filter(x, y, fl_cfg, fl_seed, fo);
    Sink out(fl_out);
    write_filter_csv(out.os(), res);
    return 0;
  }

  if (*rc) {
    rc_model.merge(cfg);
    const AmpParams params = rc_model.params();
    const PriorSpec prior = rc_model.build_prior();
    require(rc_grid >= 2, "--grid must be at least 2");
    const RiskCurve curve = risk_curve(params, prior, log_grid(rc_hi, rc_lo, rc_grid));
    Sink out(rc_out);
    write_risk_curve_csv(out.os(), curve);
    const OracleResult o = oracle_lambda(params, prior);
    std::cerr << std::setprecision(10) << "oracle lambda=" << o.lambda << " risk=" << o.risk
              << (o.boundary ? " (at scan boundary)" : "") << (o.near_tie ? " (near tie)" : "")
              << '\n';
    return 0;
  }

  if (*ri) {
    ri_model.merge(cfg);
    ri_ko.merge(cfg);
    const AmpParams params = ri_model.params();
    if (ri_model.prior_opt->count() || !ri_model.config_prior.is_null()) {
      const PriorSpec prior = ri_model.build_prior();
      const InflationResult r = risk_inflation_detail(params, prior, ri_ko.q, ri_ko.rho, ri_ko.t0);
      std::cout << std::setprecision(10) << "ratio=" << r.ratio << " lambda_ko=" << r.lambda_ko
                << " risk_ko=" << r.risk_ko << '\n';
      return 0;
    }
    const InflationCurve curve = point_mass_inflation_curve(
        params, ri_ko.q, ri_ko.rho, ri_ko.t0, location_grid(ri_from, ri_to, ri_step), g.threads);
    Sink out(ri_out);
    write_inflation_csv(out.os(), curve);
    std::cerr << std::setprecision(8) << "max ratio=" << curve.max_ratio
              << " at location=" << curve.argmax_location << " failures=" << curve.failures << '\n';
    for (const auto &pt : curve.points) {
      if (!pt.ratio) {
        std::cerr << "location " << pt.location << ": " << pt.error << '\n';
      }
    }
    return curve.failures == 0 ? 0 : 2;
  }

  if (*ms) {
    ms_model.merge(cfg);
    ms_ko.merge(cfg);
    const AmpParams params = ms_model.params();
    SweepOptions so;
    so.subsample = ms_full ? std::nullopt : std::optional<std::size_t>(ms_sub);
    so.seed = ms_seed;
    so.threads = g.threads;
    so.checkpoint_path = ms_ckpt;
    so.histogram_bins = ms_bins;
    const auto start = std::chrono::steady_clock::now();
    so.progress = [&](std::size_t done, std::size_t total) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cerr << "\r" << done << "/" << total << " members, " << std::fixed
                << std::setprecision(0) << secs << " s" << std::defaultfloat << std::flush;
    };
    const SweepSummary s = mixture_sweep(params, ms_ko.q, ms_ko.rho, ms_ko.t0, so);
    std::cerr << '\n';
    {
      Sink out(ms_out);
      write_sweep_csv(out.os(), s);
    }
    if (!ms_hist.empty()) {
      Sink out(ms_hist);
      write_histogram_csv(out.os(), s.histogram);
    }
    std::cerr << std::setprecision(10) << "family size=" << s.family_size
              << " evaluated=" << s.records.size() << " failures=" << s.failures
              << " min ratio=" << s.min_ratio << " max ratio=" << s.max_ratio
              << " (member " << s.argmax_member << ")\n";
    return s.failures == 0 ? 0 : 2;
  }

  if (*hc) {
    const auto t = std::chrono::steady_clock::now();
    const HyperCheckReport r = hyper_check(hc_max);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
    std::cout << "max_population=" << r.max_population << " ratio_cases=" << r.ratio_cases
              << " ratio_mismatches=" << r.ratio_mismatches << " product_cases=" << r.product_cases
              << " product_mismatches=" << r.product_mismatches
              << " bound_violations=" << r.bound_violations << " seconds=" << secs << '\n'
              << (r.ok() ? "OK" : "FAIL") << '\n';
    return r.ok() ? 0 : 2;
  }
  return 1;
}

} // namespace

int main(int argc, char **argv) {
  try {
    return run(argc, argv);
  } catch (const kamp::ValidationError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const kamp::json::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const kamp::LambdaFailure &e) {
    std::cerr << "numerical failure at lambda=" << std::setprecision(17) << e.lambda << ": "
              << e.what() << '\n';
    return 2;
  } catch (const kamp::NumericalError &e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  }
}
