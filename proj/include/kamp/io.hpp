#pragma once

// File formats: CSV and binary problem files, result tables, prior and
// experiment configuration.

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "kamp/error.hpp"
#include "kamp/experiment.hpp"
#include "kamp/knockoff.hpp"
#include "kamp/lasso.hpp"
#include "kamp/priors.hpp"
#include "kamp/risk.hpp"
#include "kamp/state_evolution.hpp"

namespace kamp {

using json = nlohmann::json;

namespace detail {

inline std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return "";
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string &s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    out.push_back(trim(cur));
  }
  if (!s.empty() && s.back() == sep) {
    out.emplace_back();
  }
  return out;
}

inline double parse_number(const std::string &tok, const std::string &where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) {
      throw std::invalid_argument(tok);
    }
    return v;
  } catch (const std::exception &) {
    throw ValidationError(where + ": cannot parse '" + tok + "' as a number");
  }
}

inline bool is_header(const std::vector<std::string> &fields) {
  for (const auto &f : fields) {
    try {
      std::size_t used = 0;
      (void)std::stod(f, &used);
      if (used != f.size()) {
        return true;
      }
    } catch (const std::exception &) {
      return true;
    }
  }
  return false;
}

} // namespace detail

/// Numeric CSV; a non-numeric first row is treated as a header.  Errors name
/// the file and line.
inline std::vector<std::vector<double>> read_numeric_csv(const std::string &path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open " + path);
  }
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) {
      continue;
    }
    const auto fields = detail::split(line, ',');
    if (rows.empty() && width == 0 && detail::is_header(fields)) {
      width = fields.size();
      continue;
    }
    const std::string where = path + ":" + std::to_string(lineno);
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto &f : fields) {
      row.push_back(detail::parse_number(f, where));
    }
    if (width == 0) {
      width = row.size();
    }
    if (row.size() != width) {
      throw ValidationError(where + ": expected " + std::to_string(width) + " fields, found " +
                            std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw ValidationError(path + ": no data rows");
  }
  return rows;
}

/// Design CSV: one row per observation.
inline Matrix read_design_csv(const std::string &path) {
  const auto rows = read_numeric_csv(path);
  Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return x;
}

/// Response CSV: a single column.
inline Vector read_vector_csv(const std::string &path) {
  const auto rows = read_numeric_csv(path);
  if (rows.front().size() != 1) {
    throw ValidationError(path + ": expected a single column, found " +
                          std::to_string(rows.front().size()));
  }
  Vector v(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = rows[i][0];
  }
  return v;
}

inline void write_design_csv(std::ostream &os, const Matrix &x) {
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      os << (j ? "," : "") << x(i, j);
    }
    os << '\n';
  }
}

inline void write_vector_csv(std::ostream &os, const Vector &v) {
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    os << v(i) << '\n';
  }
}

inline constexpr char kBinaryMagic[8] = {'K', 'A', 'M', 'P', '0', '0', '0', '1'};

namespace detail {

inline void put_le32(std::ostream &os, std::uint32_t v) {
  const std::array<unsigned char, 4> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                       static_cast<unsigned char>(v >> 16),
                                       static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char *>(b.data()), 4);
}

inline std::uint32_t get_le32(const unsigned char *b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_le64(std::ostream &os, double d) {
  std::uint64_t v = 0;
  std::memcpy(&v, &d, 8);
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) {
    b[static_cast<std::size_t>(i)] = static_cast<unsigned char>(v >> (8 * i));
  }
  os.write(reinterpret_cast<const char *>(b.data()), 8);
}

inline double get_le64(const unsigned char *b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  }
  double d = 0.0;
  std::memcpy(&d, &v, 8);
  return d;
}

} // namespace detail

/// 8-byte magic "KAMP0001", n and p as little-endian int32, 4 reserved zero
/// bytes, then n*p float64 values in column-major order.
inline void write_binary_matrix(const std::string &path, const Matrix &x) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw ValidationError("cannot open " + path + " for writing");
  }
  os.write(kBinaryMagic, 8);
  detail::put_le32(os, static_cast<std::uint32_t>(x.rows()));
  detail::put_le32(os, static_cast<std::uint32_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      detail::put_le64(os, x(i, j));
    }
  }
}

inline Matrix read_binary_matrix(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError("cannot open " + path);
  }
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 16 || std::memcmp(buf.data(), kBinaryMagic, 8) != 0) {
    throw ValidationError(path + ": missing KAMP0001 header");
  }
  const auto n = static_cast<std::int32_t>(detail::get_le32(buf.data() + 8));
  const auto p = static_cast<std::int32_t>(detail::get_le32(buf.data() + 12));
  if (n <= 0 || p <= 0) {
    throw ValidationError(path + ": invalid dimensions in header");
  }
  const std::size_t need = 16 + 8 * static_cast<std::size_t>(n) * static_cast<std::size_t>(p);
  if (buf.size() != need) {
    throw ValidationError(path + ": expected " + std::to_string(need) + " bytes for " +
                          std::to_string(n) + "x" + std::to_string(p) + ", found " +
                          std::to_string(buf.size()));
  }
  Matrix x(n, p);
  const unsigned char *ptr = buf.data() + 16;
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < n; ++i, ptr += 8) {
      x(i, j) = detail::get_le64(ptr);
    }
  }
  return x;
}

inline bool has_suffix(const std::string &s, const std::string &suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

/// Binary container for .bin / .kamp paths, CSV otherwise.
inline Matrix read_matrix(const std::string &path) {
  if (has_suffix(path, ".bin") || has_suffix(path, ".kamp")) {
    return read_binary_matrix(path);
  }
  return read_design_csv(path);
}

inline Vector read_response(const std::string &path) {
  if (has_suffix(path, ".bin") || has_suffix(path, ".kamp")) {
    const Matrix m = read_binary_matrix(path);
    if (m.cols() != 1) {
      throw ValidationError(path + ": response container must have one column");
    }
    return m.col(0);
  }
  return read_vector_csv(path);
}

// ---------------------------------------------------------------- priors

/// Nonzero-component syntax:
///   point:LOC   exp:RATE   gamma:SHAPES/WEIGHTS[/RATE]   (lists separated by ';')
///   tabulated:PATH  (CSV with columns x,F)
inline NonzeroDistribution parse_star(const std::string &text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw ValidationError("prior '" + text + "' must look like family:params (e.g. exp:1)");
  }
  const std::string fam = text.substr(0, colon);
  const std::string arg = text.substr(colon + 1);
  const std::string where = "prior '" + text + "'";
  auto list = [&](const std::string &s) {
    std::vector<double> v;
    for (const auto &tok : detail::split(s, ';')) {
      v.push_back(detail::parse_number(tok, where));
    }
    return v;
  };
  if (fam == "point" || fam == "pointmass" || fam == "point_mass") {
    return PointMass{detail::parse_number(arg, where)};
  }
  if (fam == "exp" || fam == "exponential") {
    return Exponential{detail::parse_number(arg, where)};
  }
  if (fam == "gamma" || fam == "gamma_mixture") {
    const auto parts = detail::split(arg, '/');
    if (parts.size() < 2 || parts.size() > 3) {
      throw ValidationError(where + ": gamma mixture needs SHAPES/WEIGHTS[/RATE]");
    }
    GammaMixture g{list(parts[0]), list(parts[1]), 1.0};
    if (parts.size() == 3) {
      g.rate = detail::parse_number(parts[2], where);
    }
    return g;
  }
  if (fam == "tabulated" || fam == "tab") {
    const auto rows = read_numeric_csv(arg);
    TabulatedCdf t;
    for (const auto &r : rows) {
      if (r.size() != 2) {
        throw ValidationError(arg + ": tabulated CDF needs two columns x,F");
      }
      t.grid.push_back(r[0]);
      t.values.push_back(r[1]);
    }
    return t;
  }
  throw ValidationError("unknown prior family '" + fam + "' (expected point, exp, gamma or tabulated)");
}

inline PriorSpec parse_prior(double epsilon, const std::string &text) {
  return PriorSpec(epsilon, parse_star(text));
}

namespace detail {

template <class T> T value_or(const json &j, const char *key, T def) {
  return j.contains(key) ? j.at(key).get<T>() : def;
}

} // namespace detail

/// {"epsilon": e, "family": name, "params": {...}} with params
/// point {location}, exponential {rate}, gamma_mixture {shapes, weights, rate},
/// tabulated {grid, values}.  A string value is read with parse_star.
inline PriorSpec prior_from_json(const json &j, std::optional<double> epsilon_default = {}) {
  try {
    if (j.is_string()) {
      require(epsilon_default.has_value(), "prior string needs an epsilon");
      return parse_prior(*epsilon_default, j.get<std::string>());
    }
    const double eps = j.contains("epsilon") ? j.at("epsilon").get<double>()
                                             : epsilon_default.value_or(-1.0);
    const std::string fam = j.at("family").get<std::string>();
    const json params = j.value("params", json::object());
    if (fam == "point" || fam == "point_mass" || fam == "pointmass") {
      return PriorSpec(eps, PointMass{params.at("location").get<double>()});
    }
    if (fam == "exp" || fam == "exponential") {
      return PriorSpec(eps, Exponential{detail::value_or(params, "rate", 1.0)});
    }
    if (fam == "gamma" || fam == "gamma_mixture") {
      return PriorSpec(eps, GammaMixture{params.at("shapes").get<std::vector<double>>(),
                                         params.at("weights").get<std::vector<double>>(),
                                         detail::value_or(params, "rate", 1.0)});
    }
    if (fam == "tabulated") {
      return PriorSpec(eps, TabulatedCdf{params.at("grid").get<std::vector<double>>(),
                                         params.at("values").get<std::vector<double>>()});
    }
    throw ValidationError("unknown prior family '" + fam + "'");
  } catch (const json::exception &e) {
    throw ValidationError(std::string("invalid prior config: ") + e.what());
  }
}

inline json read_json_file(const std::string &path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open config " + path);
  }
  try {
    return json::parse(in);
  } catch (const json::parse_error &e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline LambdaGridSpec grid_from_json(const json &j, LambdaGridSpec g) {
  g.count = detail::value_or<std::size_t>(j, "count", g.count);
  g.ratio = detail::value_or(j, "ratio", g.ratio);
  if (j.contains("floor") && !j.at("floor").is_null()) {
    g.floor = j.at("floor").get<double>();
  }
  return g;
}

/// Experiment config:
/// {n, p, sigma, replicates, master_seed, comparison_mode,
///  prior: {epsilon, family, params},
///  knockoff: {rho, q, t0, pi0_mode},
///  filter_grid: {count, ratio, floor}, curves: bool, curve_grid: {...}, power_q: [...]}
inline ExperimentConfig experiment_from_json(const json &j) {
  ExperimentConfig c;
  try {
    c.n = detail::value_or(j, "n", c.n);
    c.p = detail::value_or(j, "p", c.p);
    c.sigma = detail::value_or(j, "sigma", c.sigma);
    c.replicates = detail::value_or(j, "replicates", c.replicates);
    c.master_seed = detail::value_or<std::uint64_t>(j, "master_seed", c.master_seed);
    if (j.contains("comparison_mode")) {
      c.comparison_mode = parse_comparison_mode(j.at("comparison_mode").get<std::string>());
    }
    if (j.contains("prior")) {
      c.prior = prior_from_json(j.at("prior"), j.contains("epsilon") ? std::optional<double>(j.at("epsilon").get<double>()) : std::nullopt);
    }
    if (j.contains("knockoff")) {
      const json &k = j.at("knockoff");
      c.knockoff.rho = detail::value_or(k, "rho", c.knockoff.rho);
      c.knockoff.q = detail::value_or(k, "q", c.knockoff.q);
      c.knockoff.t0 = detail::value_or(k, "t0", c.knockoff.t0);
      if (k.contains("pi0_mode")) {
        c.knockoff.pi0_mode = parse_pi0_mode(k.at("pi0_mode").get<std::string>());
      }
    }
    if (j.contains("filter_grid")) {
      c.filter_grid = grid_from_json(j.at("filter_grid"), c.filter_grid);
    }
    c.run_filter = detail::value_or(j, "filter", c.run_filter);
    c.record_curves = detail::value_or(j, "curves", c.record_curves);
    if (j.contains("curve_grid")) {
      c.curve_grid = grid_from_json(j.at("curve_grid"), c.curve_grid);
    }
    if (j.contains("power_q")) {
      c.power_q = j.at("power_q").get<std::vector<double>>();
    }
  } catch (const json::exception &e) {
    throw ValidationError(std::string("invalid experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- writers

inline std::string format_number(double v) {
  if (std::isinf(v)) {
    return v > 0 ? "inf" : "-inf";
  }
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// Long format: one row per (curve, lambda); fdp_hat only on augmented rows
/// with lambda >= t0.
inline void write_tradeoff_csv(std::ostream &os, const std::vector<CurveRow> &oracle,
                               const std::vector<CurveRow> &augmented = {}) {
  os << "curve,lambda,alpha,tau,fdp,tpp,fdp_hat\n";
  auto put = [&](const char *name, const std::vector<CurveRow> &rows) {
    for (const auto &r : rows) {
      os << name << ',' << format_number(r.lambda) << ',' << format_number(r.alpha) << ','
         << format_number(r.tau) << ',' << format_number(r.fdp_inf) << ','
         << format_number(r.tpp_inf) << ',';
      if (r.fdp_hat_aug) {
        os << format_number(*r.fdp_hat_aug);
      }
      os << '\n';
    }
  };
  put("oracle", oracle);
  put("augmented", augmented);
}

inline void write_risk_curve_csv(std::ostream &os, const RiskCurve &c) {
  os << "lambda,risk\n";
  for (std::size_t i = 0; i < c.lambda_grid.size(); ++i) {
    os << format_number(c.lambda_grid[i]) << ',' << format_number(c.risk_values[i]) << '\n';
  }
}

/// One row per original variable, then a summary block.
inline void write_filter_csv(std::ostream &os, const FilterResult &res) {
  os << "index,statistic,rejected\n";
  std::vector<char> rej(static_cast<std::size_t>(res.p), 0);
  for (int j : res.rejected) {
    rej[static_cast<std::size_t>(j)] = 1;
  }
  for (int j = 0; j < res.p; ++j) {
    os << j << ',' << format_number(res.statistics(j)) << ',' << int(rej[static_cast<std::size_t>(j)])
       << '\n';
  }
  os << "threshold,pi0_hat,n_rejected\n";
  os << format_number(res.threshold) << ',' << format_number(res.pi0_hat) << ','
     << res.rejected.size() << '\n';
}

inline void write_results_csv(std::ostream &os, const std::vector<ReplicateRecord> &table,
                              Pi0Mode mode) {
  os << "rep,fdp,tpp,threshold,pi0_hat\n";
  for (const auto &r : table) {
    if (!r.ok) {
      continue;
    }
    const FilterOutcome &o = r.outcome(mode);
    os << r.rep << ',' << format_number(o.fdp) << ',' << format_number(o.tpp) << ','
       << format_number(o.threshold) << ',' << format_number(o.pi0_hat) << '\n';
  }
}

inline void write_experiment_curves_csv(std::ostream &os, const std::vector<ReplicateRecord> &table) {
  os << "rep,lambda,fdp_entry,tpp_entry,fdp_nonzero,tpp_nonzero\n";
  for (const auto &r : table) {
    for (const auto &c : r.curve) {
      os << r.rep << ',' << format_number(c.lambda) << ',' << format_number(c.fdp_entry) << ','
         << format_number(c.tpp_entry) << ',' << format_number(c.fdp_nonzero) << ','
         << format_number(c.tpp_nonzero) << '\n';
    }
  }
}

inline void write_power_csv(std::ostream &os, const std::vector<ReplicateRecord> &table) {
  os << "rep,q,ko_fdp,ko_tpp,oracle_lambda,oracle_fdp,oracle_tpp\n";
  for (const auto &r : table) {
    for (const auto &s : r.power) {
      os << r.rep << ',' << format_number(s.q) << ',' << format_number(s.ko_fdp) << ','
         << format_number(s.ko_tpp) << ',' << format_number(s.oracle_lambda) << ','
         << format_number(s.oracle_fdp) << ',' << format_number(s.oracle_tpp) << '\n';
    }
  }
}

inline void write_inflation_csv(std::ostream &os, const InflationCurve &c) {
  os << "location,ratio\n";
  for (const auto &pt : c.points) {
    os << format_number(pt.location) << ',';
    if (pt.ratio) {
      os << format_number(*pt.ratio);
    } else {
      os << "nan";
    }
    os << '\n';
  }
}

inline void write_sweep_csv(std::ostream &os, const SweepSummary &s) {
  os << "member_id";
  const std::size_t dim = s.records.empty() ? 0 : s.records.front().weights.size();
  for (std::size_t i = 0; i < dim; ++i) {
    os << ",w" << i + 1;
  }
  os << ",ratio\n";
  for (const auto &r : s.records) {
    os << r.member_id;
    for (double w : r.weights) {
      os << ',' << format_number(w);
    }
    os << ',' << (std::isnan(r.ratio) ? std::string("nan") : format_number(r.ratio)) << '\n';
  }
}

inline void write_histogram_csv(std::ostream &os, const std::vector<HistogramBin> &bins) {
  os << "bin_lo,bin_hi,count\n";
  for (const auto &b : bins) {
    os << format_number(b.lo) << ',' << format_number(b.hi) << ',' << b.count << '\n';
  }
}

} // namespace kamp
