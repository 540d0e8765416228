#pragma once

// Experiment harness behind the rdlr_bench CLI: INI configs, the method
// registry, multi-seed runs on a worker pool, quartile statistics and
// CSV / plot-data emission.
//
// Output files for an experiment labelled L in directory D:
//   D/L_samples.csv   raw per-seed values (deterministic bytes)
//   D/L_summary.csv   per-time or per-group quartiles of rel_error
//   D/L_timings.csv   wall-clock per seed and phase (not deterministic)
//   D/manifest.ini    one section per emitted file set

#include "rdlr/baselines.hpp"
#include "rdlr/errors.hpp"
#include "rdlr/linalg.hpp"
#include "rdlr/problems.hpp"
#include "rdlr/rangefinder.hpp"
#include "rdlr/steppers.hpp"
#include "rdlr/substeps.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace rdlr::bench {

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Statistics

struct Stats {
  double median = 0, q25 = 0, q75 = 0, min = 0, max = 0;
  std::size_t count = 0;
};

/// Quantile with linear interpolation between order statistics at
/// position q (n - 1), the default of numpy.quantile.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::nan("");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Non-finite values are dropped.
inline Stats summarize(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
  Stats s;
  s.count = v.size();
  if (v.empty()) {
    s.median = s.q25 = s.q75 = s.min = s.max = std::nan("");
    return s;
  }
  std::sort(v.begin(), v.end());
  s.median = quantile_sorted(v, 0.5);
  s.q25 = quantile_sorted(v, 0.25);
  s.q75 = quantile_sorted(v, 0.75);
  s.min = v.front();
  s.max = v.back();
  return s;
}

/// Shortest text that reads back to the same double.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Worker pool

/// Worker count from RDLR_WORKERS; defaults to 1, capped at the hardware count.
inline unsigned worker_count() {
  unsigned n = 1;
  if (const char* env = std::getenv("RDLR_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      throw ConfigError("RDLR_WORKERS must be a positive integer, got '" + std::string(env) + "'");
    n = static_cast<unsigned>(v);
  }
  return n;
}

/// Runs fn(i) for i in [0, n) on `workers` threads. Results must go to
/// per-index slots; the first exception by index is rethrown after joining.
template <class Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < std::min<std::size_t>(workers, n); ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Configuration

using Section = std::map<std::string, std::string>;
using Ini = std::map<std::string, Section>;

inline Ini parse_ini(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  Ini out;
  for (const auto& [name, sec] : tree) {
    if (sec.empty() && !sec.data().empty())
      throw ConfigError("config: key '" + name + "' outside any section");
    auto& dst = out[name];
    for (const auto& [k, v] : sec) dst[k] = v.data();
  }
  return out;
}

inline Ini read_ini_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_ini(in);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

enum class MethodFamily { range, randomized, adaptive, baseline, exact };

inline MethodFamily method_family(const std::string& name) {
  if (name == "rangefinder" || name == "static_rangefinder") return MethodFamily::range;
  if (name == "drsvd" || name == "dgn") return MethodFamily::randomized;
  if (name == "adrsvd" || name == "adgn") return MethodFamily::adaptive;
  if (name == "ksl" || name == "bug" || name == "augmented_bug" || name == "projected_euler")
    return MethodFamily::baseline;
  if (name == "reference" || name == "truncated_reference") return MethodFamily::exact;
  throw ConfigError("unknown method '" + name + "'");
}

inline std::vector<std::string> method_names() {
  return {"rangefinder", "static_rangefinder", "drsvd", "dgn", "adrsvd", "adgn", "ksl", "bug",
          "augmented_bug", "projected_euler", "reference", "truncated_reference"};
}

struct MethodSpec {
  std::string name;
  Index rank = 5;
  Index oversampling = 0;
  Index corange_oversampling = 0;
  Index power_iterations = 0;
  double tolerance = 1e-8;
  double failure_probability = 1e-4;
  Index max_basis = 0;
  int order = 1;
  bool augment = true;
  /// Fixed-rank augmented BUG truncates back to `rank` unless this is set.
  bool adaptive_truncation = false;
  /// New methods start from the exact factored A0 ("exact") or T_r(A0) ("truncated").
  std::string initial = "exact";
  std::optional<SolverSpec> substep;  ///< empty: the problem's substep solver
};

struct ExperimentConfig {
  int schema = kSchemaVersion;
  std::string label = "experiment";
  std::string problem;
  ParamMap problem_params;
  MethodSpec method;
  double step = 0.0;
  std::optional<double> horizon;  ///< empty: the problem's horizon
  std::size_t seeds = 1;
  std::uint64_t master_seed = 0;
  std::vector<std::string> observables;
  std::string output = "results";
  /// Raw method keys, kept so sweeps can override one and re-parse.
  ParamMap method_params;
};

namespace detail {

inline SolverSpec parse_substep(const ParamMap& m) {
  auto get = [&](const char* k) -> std::optional<std::string> {
    auto it = m.find(k);
    if (it == m.end()) return std::nullopt;
    return it->second;
  };
  auto num = [](const std::string& key, const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw ConfigError("method: cannot parse " + key + " '" + s + "'");
    return v;
  };
  const std::string kind = get("substep").value_or("rk45");
  if (kind == "rk45") {
    const double tol = get("substep_tol") ? num("substep_tol", *get("substep_tol")) : 1e-12;
    return SolverSpec::adaptive(tol, tol);
  }
  if (kind == "exponential" || kind == "exponential_rk2") {
    if (!get("substep_dt")) throw ConfigError("method: exponential substeps need substep_dt");
    return SolverSpec::exponential(num("substep_dt", *get("substep_dt")));
  }
  if (kind == "rk4") {
    if (!get("substep_dt")) throw ConfigError("method: rk4 substeps need substep_dt");
    return SolverSpec::fixed_rk4(num("substep_dt", *get("substep_dt")));
  }
  throw ConfigError("method: unknown substep solver '" + kind + "'");
}

}  // namespace detail

/// Validates the [method] section against the keys each family accepts.
inline MethodSpec parse_method(const ParamMap& params) {
  auto it = params.find("name");
  if (it == params.end()) throw ConfigError("[method] needs a name");
  MethodSpec m;
  m.name = it->second;
  const MethodFamily fam = method_family(m.name);

  ParamMap rest = params;
  rest.erase("name");
  if (rest.count("substep") || rest.count("substep_tol") || rest.count("substep_dt")) {
    if (rest.count("substep") && rest.at("substep") == "problem") {
      if (rest.count("substep_tol") || rest.count("substep_dt"))
        throw ConfigError("method: substep = problem takes no tolerance or dt");
    } else {
      m.substep = detail::parse_substep(rest);
    }
    rest.erase("substep");
    rest.erase("substep_tol");
    rest.erase("substep_dt");
  }

  rdlr::detail::ParamReader r(rest);
  switch (fam) {
    case MethodFamily::range:
      r.read("rank", m.rank);
      r.read("oversampling", m.oversampling);
      r.read("power_iterations", m.power_iterations);
      break;
    case MethodFamily::randomized:
      r.read("rank", m.rank);
      r.read("oversampling", m.oversampling);
      r.read("power_iterations", m.power_iterations);
      r.read("augment", m.augment);
      r.read("initial", m.initial);
      if (m.name == "dgn") r.read("corange_oversampling", m.corange_oversampling);
      break;
    case MethodFamily::adaptive:
      r.read("tolerance", m.tolerance);
      r.read("failure_probability", m.failure_probability);
      r.read("max_basis", m.max_basis);
      r.read("initial", m.initial);
      break;
    case MethodFamily::baseline:
      r.read("rank", m.rank);
      if (m.name == "ksl") r.read("order", m.order);
      if (m.name == "augmented_bug") {
        r.read("tolerance", m.tolerance);
        r.read("adaptive_truncation", m.adaptive_truncation);
      }
      break;
    case MethodFamily::exact:
      r.read("rank", m.rank);
      r.read("tolerance", m.tolerance);
      break;
  }
  r.finish("method " + m.name);
  if (m.initial != "exact" && m.initial != "truncated")
    throw ConfigError("method: initial must be 'exact' or 'truncated'");
  if (m.rank < 1) throw ConfigError("method: rank must be at least 1");
  if (m.oversampling < 0 || m.corange_oversampling < 0 || m.power_iterations < 0)
    throw ConfigError("method: oversampling and power iterations must be nonnegative");
  if (!(m.tolerance > 0.0)) throw ConfigError("method: tolerance must be positive");
  if (m.order != 1 && m.order != 2) throw ConfigError("method: KSL order must be 1 or 2");
  return m;
}

inline ExperimentConfig config_from_ini(const Ini& ini) {
  static const std::vector<std::string> sections{"experiment", "problem", "method", "time"};
  for (const auto& [name, sec] : ini)
    if (std::find(sections.begin(), sections.end(), name) == sections.end())
      throw ConfigError("config: unknown section [" + name + "]");
  auto section = [&](const std::string& s) -> const Section& {
    auto it = ini.find(s);
    if (it == ini.end()) throw ConfigError("config: missing section [" + s + "]");
    return it->second;
  };

  ExperimentConfig c;
  {
    ParamMap e = ini.count("experiment") ? ini.at("experiment") : ParamMap{};
    std::string observables;
    rdlr::detail::ParamReader r(e);
    r.read("schema", c.schema);
    r.read("name", c.label);
    r.read("seeds", c.seeds);
    r.read("master_seed", c.master_seed);
    r.read("observables", observables);
    r.read("output", c.output);
    r.finish("experiment");
    if (c.schema != kSchemaVersion)
      throw ConfigError("config: schema " + std::to_string(c.schema) + " is not supported");
    if (c.seeds < 1) throw ConfigError("config: seeds must be at least 1");
    if (c.label.empty() || c.label.find('/') != std::string::npos)
      throw ConfigError("config: name must be a plain file stem");
    c.observables = split_list(observables);
  }
  {
    ParamMap p = section("problem");
    auto it = p.find("name");
    if (it == p.end()) throw ConfigError("[problem] needs a name");
    c.problem = it->second;
    p.erase(it);
    c.problem_params = p;
  }
  c.method_params = section("method");
  c.method = parse_method(c.method_params);
  {
    ParamMap t = section("time");
    rdlr::detail::ParamReader r(t);
    double horizon = -1.0;
    r.read("step", c.step);
    r.read("horizon", horizon);
    r.finish("time");
    if (!(c.step > 0.0)) throw ConfigError("config: [time] step must be positive");
    if (t.count("horizon")) {
      if (!(horizon > 0.0)) throw ConfigError("config: [time] horizon must be positive");
      c.horizon = horizon;
    }
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  return config_from_ini(read_ini_file(path));
}

// ---------------------------------------------------------------------------
// Reference trajectories

struct Reference {
  std::vector<double> times;
  std::vector<Matrix> states;
  std::vector<SvdResult> svds;
  std::map<std::string, std::vector<double>> observables;
};

/// Dense reference solutions keyed by problem, parameters and time grid.
/// Closed forms are used when the problem has one.
class ReferenceCache {
 public:
  std::shared_ptr<const Reference> get(const Problem& p, const std::string& problem_key,
                                       const std::vector<double>& times) {
    std::string key = problem_key;
    for (double t : times) key += "|" + fmt(t);
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) {
        ++hits_;
        return it->second;
      }
    }
    auto ref = std::make_shared<Reference>(compute(p, times));
    std::lock_guard lock(mu_);
    ++misses_;
    return cache_.emplace(key, std::move(ref)).first->second;
  }

  static Reference compute(const Problem& p, const std::vector<double>& times) {
    Reference r;
    r.times = times;
    if (p.closed_form) {
      for (double t : times) r.states.push_back(p.closed_form(t));
    } else {
      std::vector<double> positive;
      for (double t : times)
        if (t > 0.0) positive.push_back(t);
      auto sol = reference_solve(p.field, p.initial, positive, p.reference_solver);
      std::size_t k = 0;
      for (double t : times) r.states.push_back(t > 0.0 ? sol[k++] : p.initial);
    }
    for (const auto& a : r.states) {
      rdlr::detail::require_finite(a, "reference solve");
      r.svds.push_back(svd(a));
      for (const auto& [name, fn] : p.observables) r.observables[name].push_back(fn(a));
    }
    return r;
  }

  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

 private:
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Reference>> cache_;
  std::size_t hits_ = 0, misses_ = 0;
};

inline std::string problem_key(const std::string& name, const ParamMap& params) {
  std::string key = name;
  for (const auto& [k, v] : params) key += ";" + k + "=" + v;
  return key;
}

// ---------------------------------------------------------------------------
// Run records

struct PhaseTimes {
  double rangefinder = 0, substeps = 0, assembly = 0, total = 0;
};

/// Raw per-seed data; aggregates are recomputed from it on demand.
struct RunRecord {
  std::string label, problem, method;
  MethodSpec spec;
  std::string group_name = "group";  ///< sweep parameter, "group" otherwise
  std::string group_value = "-";
  std::vector<double> times;                             ///< output times (trajectory)
  std::vector<std::vector<double>> errors;               ///< [seed][time]
  std::vector<std::vector<double>> ranks;                ///< [seed][time]
  std::map<std::string, std::vector<std::vector<double>>> observables;  ///< name -> [seed][time]
  std::map<std::string, std::vector<double>> reference_observables;     ///< name -> [time]
  std::vector<double> reference_ranks;                   ///< sigma > tolerance, per time
  std::vector<PhaseTimes> timings;                       ///< per seed
  std::vector<std::string> failures;                     ///< per seed; empty when ok
  bool range_experiment = false;

  std::size_t seeds() const { return errors.size(); }
  bool failed() const {
    return std::any_of(failures.begin(), failures.end(), [](const auto& f) { return !f.empty(); });
  }
  std::vector<double> errors_at(std::size_t k) const {
    std::vector<double> v;
    for (const auto& e : errors) v.push_back(k < e.size() ? e[k] : std::nan(""));
    return v;
  }
  Stats error_stats(std::size_t k) const { return summarize(errors_at(k)); }
  std::vector<double> total_seconds() const {
    std::vector<double> v;
    for (const auto& t : timings) v.push_back(t.total);
    return v;
  }
};

inline std::string first_failure(const RunRecord& r) {
  for (std::size_t s = 0; s < r.failures.size(); ++s)
    if (!r.failures[s].empty()) return "seed " + std::to_string(s) + ": " + r.failures[s];
  return {};
}

// ---------------------------------------------------------------------------
// Running

namespace detail {

inline StepperConfig stepper_config(const MethodSpec& m, const SolverSpec& substep) {
  StepperConfig c;
  c.rank = m.rank;
  c.oversampling = m.oversampling;
  c.corange_oversampling = m.corange_oversampling;
  c.power_iterations = m.power_iterations;
  c.substep = substep;
  c.augment = m.augment;
  return c;
}

inline AdaptiveConfig adaptive_config(const MethodSpec& m, const SolverSpec& substep) {
  AdaptiveConfig c;
  c.tolerance = m.tolerance;
  c.failure_probability = m.failure_probability;
  c.max_basis = m.max_basis;
  c.substep = substep;
  return c;
}

inline BaselineConfig baseline_config(const MethodSpec& m, const SolverSpec& substep) {
  BaselineConfig c;
  c.rank = m.rank;
  c.order = m.order;
  c.substep = substep;
  c.tolerance = (m.name == "augmented_bug" && m.adaptive_truncation) ? m.tolerance : 0.0;
  return c;
}

inline StepFunction make_step(const MethodSpec& m, const FieldPtr& f, const SolverSpec& substep) {
  if (m.name == "drsvd") return drsvd_stepper(f, stepper_config(m, substep));
  if (m.name == "dgn") return dgn_stepper(f, stepper_config(m, substep));
  if (m.name == "adrsvd") return adrsvd_stepper(f, adaptive_config(m, substep));
  if (m.name == "adgn") return adgn_stepper(f, adaptive_config(m, substep));
  const auto b = baseline_config(m, substep);
  if (m.name == "ksl") return ksl_stepper(f, b);
  if (m.name == "bug") return bug_stepper(f, b);
  if (m.name == "augmented_bug") return augmented_bug_stepper(f, b);
  if (m.name == "projected_euler") return projected_euler_stepper(f, b);
  throw ConfigError("method '" + m.name + "' has no step function");
}

inline double relative_error(const Matrix& approx, const Matrix& exact) {
  const double n = exact.norm();
  return n == 0.0 ? (approx - exact).norm() : (approx - exact).norm() / n;
}

inline Index count_above(const Vector& sigma, double tau) {
  Index k = 0;
  while (k < sigma.size() && sigma(k) > tau) ++k;
  return k;
}

}  // namespace detail

/// Everything a run needs that does not depend on the seed.
struct PreparedExperiment {
  ExperimentConfig cfg;
  Problem problem;
  SolverSpec substep;
  double horizon = 0.0;
  double offset = 0.0;              ///< baselines start at the warm-up time
  std::vector<double> output_times; ///< 0 and every step end, relative to `offset`
};

inline PreparedExperiment prepare(const ExperimentConfig& cfg) {
  PreparedExperiment e;
  e.cfg = cfg;
  e.problem = make_problem(cfg.problem, cfg.problem_params);
  for (const auto& name : cfg.observables)
    if (!e.problem.observables.count(name))
      throw ConfigError("observable '" + name + "' is not defined for problem '" + cfg.problem + "'");
  e.substep = cfg.method.substep.value_or(e.problem.substep_solver);
  e.substep.validate();
  e.horizon = cfg.horizon.value_or(e.problem.horizon);
  const auto fam = method_family(cfg.method.name);
  if (fam == MethodFamily::range) {
    e.output_times = {cfg.step};
  } else {
    e.offset = fam == MethodFamily::baseline ? e.problem.baseline_warmup : 0.0;
    e.output_times = {0.0};
    for (double t : step_times(e.horizon, cfg.step)) e.output_times.push_back(t);
  }
  const Index m = e.problem.field->rows(), n = e.problem.field->cols();
  const auto& ms = cfg.method;
  if (fam == MethodFamily::range && ms.rank + ms.oversampling > std::min(m, n))
    throw ConfigError("method: rank + oversampling exceeds the problem dimensions");
  if (fam == MethodFamily::randomized && ms.rank + ms.oversampling + ms.corange_oversampling > std::min(m, n))
    throw ConfigError("method: rank + oversampling exceeds the problem dimensions");
  return e;
}

inline std::vector<double> absolute_times(const PreparedExperiment& e) {
  std::vector<double> t;
  for (double s : e.output_times) t.push_back(e.offset + s);
  return t;
}

namespace detail {

struct SeedResult {
  std::vector<double> errors, ranks;
  std::map<std::string, std::vector<double>> observables;
  PhaseTimes time;
  std::string failure;
};

inline SeedResult run_range_seed(const PreparedExperiment& e, const Reference& ref,
                                 std::uint64_t seed) {
  const auto& ms = e.cfg.method;
  RangefinderConfig rc{ms.rank, ms.oversampling, ms.power_iterations, e.substep, seed};
  const Matrix& xh = ref.states.front();
  const auto start = std::chrono::steady_clock::now();
  const OrthonormalBasis q =
      ms.name == "static_rangefinder"
          ? static_rangefinder(xh, rc)
          : dynamical_rangefinder(e.problem.field, factor(e.problem.initial), e.cfg.step, rc);
  SeedResult r;
  r.time.rangefinder = r.time.total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.errors = {relative_error(q.project(xh), xh)};
  r.ranks = {static_cast<double>(q.cols())};
  return r;
}

inline FactoredMatrix initial_state(const PreparedExperiment& e, const Reference& ref) {
  const auto& ms = e.cfg.method;
  switch (method_family(ms.name)) {
    case MethodFamily::baseline: {
      const SvdResult& s = ref.svds.front();
      if (ms.name == "augmented_bug" && ms.adaptive_truncation) return truncate_tol(s, ms.tolerance);
      return truncate_rank(s, ms.rank);
    }
    case MethodFamily::adaptive:
      return ms.initial == "exact" ? factor(e.problem.initial)
                                   : truncate_tol(svd(e.problem.initial), ms.tolerance);
    default:
      return ms.initial == "exact" ? factor(e.problem.initial)
                                   : truncate_rank(svd(e.problem.initial), ms.rank);
  }
}

inline SeedResult run_trajectory_seed(const PreparedExperiment& e, const Reference& ref,
                                      std::uint64_t seed) {
  const auto& ms = e.cfg.method;
  SeedResult r;
  const auto start = std::chrono::steady_clock::now();
  std::vector<FactoredMatrix> states;
  std::vector<StepReport> reports;
  if (method_family(ms.name) == MethodFamily::exact) {
    for (const auto& s : ref.svds)
      states.push_back(ms.name == "reference" ? FactoredMatrix{s.u, Matrix(s.sigma.asDiagonal()), s.v}
                                              : truncate_rank(s, ms.rank));
  } else {
    const auto traj = integrate(initial_state(e, ref), e.horizon, e.cfg.step,
                                make_step(ms, e.problem.field, e.substep), seed);
    states = traj.states;
    reports = traj.reports;
    if (traj.failure) r.failure = *traj.failure;
  }
  for (const auto& rep : reports) {
    r.time.rangefinder += rep.rangefinder_seconds;
    r.time.substeps += rep.substep_seconds;
    r.time.assembly += rep.assembly_seconds;
  }
  r.time.total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (std::size_t k = 0; k < ref.states.size(); ++k) {
    if (k < states.size()) {
      const Matrix dense = ms.name == "reference" ? ref.states[k] : states[k].reconstruct();
      r.errors.push_back(relative_error(dense, ref.states[k]));
      r.ranks.push_back(static_cast<double>(states[k].rank()));
      for (const auto& name : e.cfg.observables)
        r.observables[name].push_back(e.problem.observables.at(name)(dense));
    } else {
      r.errors.push_back(std::nan(""));
      r.ranks.push_back(std::nan(""));
      for (const auto& name : e.cfg.observables) r.observables[name].push_back(std::nan(""));
    }
  }
  return r;
}

}  // namespace detail

/// Runs every seed of a prepared experiment. Seed s uses
/// derive_seed(master_seed, {s}); results are assembled in seed order.
inline RunRecord run_prepared(const PreparedExperiment& e, ReferenceCache& cache,
                              unsigned workers) {
  const auto ref = cache.get(e.problem, problem_key(e.cfg.problem, e.cfg.problem_params),
                             absolute_times(e));
  const bool range = method_family(e.cfg.method.name) == MethodFamily::range;
  std::vector<detail::SeedResult> results(e.cfg.seeds);
  parallel_for(e.cfg.seeds, workers, [&](std::size_t s) {
    const std::uint64_t seed = derive_seed(e.cfg.master_seed, {static_cast<std::uint64_t>(s)});
    try {
      results[s] = range ? detail::run_range_seed(e, *ref, seed)
                         : detail::run_trajectory_seed(e, *ref, seed);
    } catch (const NumericalError& err) {
      results[s].failure = err.what();
      const std::size_t n = e.output_times.size();
      results[s].errors.assign(n, std::nan(""));
      results[s].ranks.assign(n, std::nan(""));
      for (const auto& name : e.cfg.observables) results[s].observables[name].assign(n, std::nan(""));
    }
  });

  RunRecord rec;
  rec.label = e.cfg.label;
  rec.problem = e.cfg.problem;
  rec.method = e.cfg.method.name;
  rec.spec = e.cfg.method;
  rec.range_experiment = range;
  rec.times = e.output_times;
  for (auto& r : results) {
    rec.errors.push_back(std::move(r.errors));
    rec.ranks.push_back(std::move(r.ranks));
    for (const auto& name : e.cfg.observables) rec.observables[name].push_back(r.observables[name]);
    rec.timings.push_back(r.time);
    rec.failures.push_back(std::move(r.failure));
  }
  for (const auto& name : e.cfg.observables) rec.reference_observables[name] = ref->observables.at(name);
  const double tau = method_family(e.cfg.method.name) == MethodFamily::adaptive ||
                             e.cfg.method.adaptive_truncation
                         ? e.cfg.method.tolerance
                         : 0.0;
  for (const auto& s : ref->svds)
    rec.reference_ranks.push_back(tau > 0.0 ? static_cast<double>(detail::count_above(s.sigma, tau))
                                            : static_cast<double>(std::min<Index>(e.cfg.method.rank, s.size())));
  return rec;
}

inline RunRecord run_experiment(const ExperimentConfig& cfg, ReferenceCache& cache,
                                unsigned workers = 1) {
  return run_prepared(prepare(cfg), cache, workers);
}

inline RunRecord run_experiment(const ExperimentConfig& cfg, unsigned workers = 1) {
  ReferenceCache cache;
  return run_experiment(cfg, cache, workers);
}

/// Runs several experiments against one shared reference per problem and time grid.
inline std::vector<RunRecord> compare_methods(const std::vector<ExperimentConfig>& cfgs,
                                              ReferenceCache& cache, unsigned workers = 1) {
  if (cfgs.empty()) throw ConfigError("compare: no configs");
  std::vector<RunRecord> out;
  for (const auto& c : cfgs) {
    if (c.problem != cfgs.front().problem || c.problem_params != cfgs.front().problem_params)
      throw ConfigError("compare: all configs must use the same problem and parameters");
    out.push_back(run_experiment(c, cache, workers));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepSpec {
  std::string key;
  std::vector<std::string> values;
};

/// "p=0..12" (integer range) or "rank=5,10,20".
inline SweepSpec parse_sweep(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
    throw ConfigError("sweep: expected key=a..b or key=v1,v2, got '" + s + "'");
  SweepSpec out;
  out.key = s.substr(0, eq);
  if (out.key == "p") out.key = "oversampling";
  if (out.key == "q") out.key = "power_iterations";
  const std::string rhs = s.substr(eq + 1);
  if (const auto dots = rhs.find(".."); dots != std::string::npos) {
    long a = 0, b = 0;
    try {
      std::size_t i = 0, j = 0;
      a = std::stol(rhs.substr(0, dots), &i);
      b = std::stol(rhs.substr(dots + 2), &j);
      if (i != dots || j != rhs.size() - dots - 2) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("sweep: bad integer range '" + rhs + "'");
    }
    if (b < a) throw ConfigError("sweep: empty range '" + rhs + "'");
    for (long v = a; v <= b; ++v) out.values.push_back(std::to_string(v));
  } else {
    out.values = split_list(rhs);
    if (out.values.empty()) throw ConfigError("sweep: no values in '" + rhs + "'");
  }
  return out;
}

/// One run per sweep value; invalid values raise ConfigError before any compute.
inline std::vector<RunRecord> sweep(const ExperimentConfig& base, const SweepSpec& spec,
                                    ReferenceCache& cache, unsigned workers = 1) {
  std::vector<PreparedExperiment> runs;
  for (const auto& v : spec.values) {
    ExperimentConfig c = base;
    c.method_params[spec.key] = v;
    c.method = parse_method(c.method_params);
    runs.push_back(prepare(c));
  }
  std::vector<RunRecord> out;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    auto rec = run_prepared(runs[i], cache, workers);
    rec.group_name = spec.key == "oversampling" ? "p" : spec.key == "power_iterations" ? "q" : spec.key;
    rec.group_value = spec.values[i];
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV output

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ConfigError("table: no column '" + name + "'");
  }
  bool has(const std::string& name) const {
    return std::find(header.begin(), header.end(), name) != header.end();
  }
};

inline void write_csv(const std::filesystem::path& path, const Table& t) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
}

inline Table read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  Table t;
  std::string line;
  auto cells = [](const std::string& l) {
    std::vector<std::string> c;
    std::stringstream ss(l);
    std::string x;
    while (std::getline(ss, x, ',')) c.push_back(x);
    if (!l.empty() && l.back() == ',') c.emplace_back();
    return c;
  };
  if (!std::getline(in, line)) throw ConfigError("'" + path.string() + "' is empty");
  t.header = cells(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto c = cells(line);
    if (c.size() != t.header.size())
      throw ConfigError("'" + path.string() + "': ragged row '" + line + "'");
    t.rows.push_back(std::move(c));
  }
  return t;
}

/// Raw samples of one or more records. Range experiments use columns
/// (method, p, q, seed, rel_error); trajectories use
/// (method, <group>, seed, t, rel_error, rank, <observables>, ref_<observables>, ref_rank).
inline Table samples_table(const std::vector<RunRecord>& recs) {
  Table t;
  if (recs.empty()) return t;
  const RunRecord& first = recs.front();
  if (first.range_experiment) {
    t.header = {"method", "p", "q", "seed", "rel_error", "basis_columns"};
    for (const auto& r : recs)
      for (std::size_t s = 0; s < r.seeds(); ++s)
        t.rows.push_back({r.method, std::to_string(r.spec.oversampling),
                          std::to_string(r.spec.power_iterations), std::to_string(s),
                          fmt(r.errors[s][0]), fmt(r.ranks[s][0])});
    return t;
  }
  t.header = {"method", first.group_name, "seed", "t", "rel_error", "rank"};
  for (const auto& [name, v] : first.observables) t.header.push_back(name);
  for (const auto& [name, v] : first.reference_observables) t.header.push_back("ref_" + name);
  t.header.push_back("ref_rank");
  for (const auto& r : recs)
    for (std::size_t s = 0; s < r.seeds(); ++s)
      for (std::size_t k = 0; k < r.times.size(); ++k) {
        std::vector<std::string> row{r.method, r.group_value, std::to_string(s), fmt(r.times[k]),
                                     fmt(r.errors[s][k]), fmt(r.ranks[s][k])};
        for (const auto& [name, v] : r.observables) row.push_back(fmt(v[s][k]));
        for (const auto& [name, v] : r.reference_observables) row.push_back(fmt(v[k]));
        row.push_back(fmt(r.reference_ranks[k]));
        t.rows.push_back(std::move(row));
      }
  return t;
}

/// Quartiles of rel_error per (method, group, t).
inline Table summary_table(const std::vector<RunRecord>& recs) {
  Table t;
  t.header = {"method", recs.empty() ? "group" : recs.front().group_name, "t", "median", "q25",
              "q75", "min", "max", "failed_seeds"};
  for (const auto& r : recs) {
    std::size_t failed = 0;
    for (const auto& f : r.failures) failed += !f.empty();
    for (std::size_t k = 0; k < (r.range_experiment ? 1 : r.times.size()); ++k) {
      const Stats s = r.error_stats(k);
      const std::string group = r.range_experiment ? std::to_string(r.spec.oversampling) : r.group_value;
      t.rows.push_back({r.method, group, fmt(r.times[k]), fmt(s.median), fmt(s.q25), fmt(s.q75),
                        fmt(s.min), fmt(s.max), std::to_string(failed)});
    }
  }
  if (!recs.empty() && recs.front().range_experiment) t.header[1] = "p";
  return t;
}

inline Table timings_table(const std::vector<RunRecord>& recs) {
  Table t;
  t.header = {"method", recs.empty() ? "group" : recs.front().group_name, "rank", "seed",
              "rangefinder_seconds", "substep_seconds", "assembly_seconds", "total_seconds",
              "final_rel_error"};
  for (const auto& r : recs)
    for (std::size_t s = 0; s < r.seeds(); ++s) {
      const auto& p = r.timings[s];
      t.rows.push_back({r.method, r.group_value, std::to_string(r.spec.rank), std::to_string(s),
                        fmt(p.rangefinder), fmt(p.substeps), fmt(p.assembly), fmt(p.total),
                        fmt(r.errors[s].back())});
    }
  return t;
}

/// Relative error medians over time, one column per record.
inline Table error_vs_time_table(const std::vector<RunRecord>& recs) {
  Table t;
  t.header = {"t"};
  if (recs.empty()) return t;
  for (const auto& r : recs) t.header.push_back(r.label + "_median");
  for (std::size_t k = 0; k < recs.front().times.size(); ++k) {
    std::vector<std::string> row{fmt(recs.front().times[k])};
    for (const auto& r : recs) row.push_back(k < r.times.size() ? fmt(r.error_stats(k).median) : "nan");
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// Appends a [label] section listing the files of one output set.
inline void append_manifest(const std::filesystem::path& dir, const std::string& label,
                            const std::map<std::string, std::string>& entries) {
  std::filesystem::create_directories(dir);
  const auto path = dir / "manifest.ini";
  Ini ini;
  if (std::filesystem::exists(path)) ini = read_ini_file(path.string());
  ini[label] = entries;
  std::ofstream out(path, std::ios::binary);
  for (const auto& [sec, kv] : ini) {
    out << '[' << sec << "]\n";
    for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
    out << '\n';
  }
}

struct WrittenFiles {
  std::filesystem::path samples, summary, timings;
};

inline WrittenFiles write_records(const std::vector<RunRecord>& recs, const std::filesystem::path& dir,
                                  const std::string& label, const std::string& command,
                                  const ExperimentConfig& cfg) {
  WrittenFiles f{dir / (label + "_samples.csv"), dir / (label + "_summary.csv"),
                 dir / (label + "_timings.csv")};
  const Table samples = samples_table(recs);
  write_csv(f.samples, samples);
  write_csv(f.summary, summary_table(recs));
  write_csv(f.timings, timings_table(recs));
  std::vector<std::string> seen;
  std::string methods;
  for (const auto& r : recs)
    if (std::find(seen.begin(), seen.end(), r.method) == seen.end()) {
      methods += (seen.empty() ? "" : ",") + r.method;
      seen.push_back(r.method);
    }
  append_manifest(dir, label,
                  {{"command", command},
                   {"schema", std::to_string(kSchemaVersion)},
                   {"problem", cfg.problem},
                   {"methods", methods},
                   {"seeds", std::to_string(cfg.seeds)},
                   {"master_seed", std::to_string(cfg.master_seed)},
                   {"samples", f.samples.filename().string()},
                   {"summary", f.summary.filename().string()},
                   {"timings", f.timings.filename().string()},
                   {"rows", std::to_string(samples.rows.size())}});
  return f;
}

// ---------------------------------------------------------------------------
// Plot data from a samples file

inline std::vector<std::string> plot_kinds() {
  return {"boxplot", "error_vs_time", "energy_vs_time", "rank_vs_time", "pareto"};
}

namespace detail {

inline double to_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ConfigError("plot data: cannot parse '" + s + "'");
  return v;
}

// Groups rows by the given key columns (in first-appearance order) and
// collects one value column per group.
inline std::vector<std::pair<std::vector<std::string>, std::vector<double>>> grouped(
    const Table& t, const std::vector<std::string>& keys, const std::string& value) {
  std::vector<std::size_t> kc;
  for (const auto& k : keys) kc.push_back(t.column(k));
  const std::size_t vc = t.column(value);
  std::vector<std::pair<std::vector<std::string>, std::vector<double>>> out;
  std::map<std::vector<std::string>, std::size_t> index;
  for (const auto& row : t.rows) {
    std::vector<std::string> key;
    for (auto c : kc) key.push_back(row[c]);
    auto [it, fresh] = index.emplace(key, out.size());
    if (fresh) out.push_back({key, {}});
    out[it->second].second.push_back(to_double(row[vc]));
  }
  return out;
}

inline std::string group_column(const Table& t) {
  if (t.has("p")) return "p";
  for (const auto& h : t.header)
    if (h != "method" && h != "seed" && h != "t" && h != "rel_error" && h != "rank" &&
        h.rfind("ref_", 0) != 0 && h != "basis_columns")
      return h;
  return "t";
}

}  // namespace detail

/// Plot-ready table of `kind` from a samples (or, for pareto, timings) file.
inline Table plot_table(const std::filesystem::path& samples_path, const std::string& kind) {
  using detail::grouped;
  Table out;
  if (kind == "pareto") {
    auto stem = samples_path.filename().string();
    const auto pos = stem.rfind("_samples.csv");
    const auto timings_path =
        pos == std::string::npos ? samples_path
                                 : samples_path.parent_path() / (stem.substr(0, pos) + "_timings.csv");
    const Table t = read_csv(timings_path);
    const auto err = grouped(t, {"method", "rank"}, "final_rel_error");
    const auto sec = grouped(t, {"method", "rank"}, "total_seconds");
    out.header = {"method", "rank", "median_error", "median_seconds"};
    for (std::size_t i = 0; i < err.size(); ++i)
      out.rows.push_back({err[i].first[0], err[i].first[1], fmt(summarize(err[i].second).median),
                          fmt(summarize(sec[i].second).median)});
    return out;
  }
  const Table t = read_csv(samples_path);
  if (kind == "boxplot") {
    const std::string g = detail::group_column(t);
    const bool with_time = t.has("t") && g != "t";
    std::vector<std::string> keys{"method", g};
    if (with_time) keys.push_back("t");
    out.header = {"method", "group"};
    if (with_time) out.header.push_back("t");
    for (const char* h : {"median", "q1", "q3", "lo", "hi"}) out.header.push_back(h);
    for (const auto& [key, vals] : grouped(t, keys, "rel_error")) {
      if (with_time && key[2] != fmt(detail::to_double(t.rows.back()[t.column("t")]))) continue;
      const Stats s = summarize(vals);
      std::vector<std::string> row = key;
      for (double x : {s.median, s.q25, s.q75, s.min, s.max}) row.push_back(fmt(x));
      out.rows.push_back(std::move(row));
    }
    return out;
  }
  if (!t.has("t")) throw ConfigError("plot data: '" + kind + "' needs a trajectory samples file");
  const std::string g = detail::group_column(t);
  std::vector<std::string> keys{"method"};
  if (g != "t") keys.push_back(g);
  keys.push_back("t");
  auto prefix = [&](const std::vector<std::string>& key) {
    std::vector<std::string> row{key[0]};
    if (g != "t") row.push_back(key[1]);
    row.push_back(key.back());
    return row;
  };
  out.header = {"method"};
  if (g != "t") out.header.push_back("group");
  out.header.push_back("t");
  if (kind == "error_vs_time" || kind == "rank_vs_time") {
    const std::string col = kind == "error_vs_time" ? "rel_error" : "rank";
    for (const char* h : {"median", "q25", "q75"}) out.header.push_back(h);
    if (kind == "rank_vs_time") out.header.push_back("reference_rank");
    const auto ref = kind == "rank_vs_time" ? grouped(t, keys, "ref_rank") : decltype(grouped(t, keys, col)){};
    std::size_t i = 0;
    for (const auto& [key, vals] : grouped(t, keys, col)) {
      const Stats s = summarize(vals);
      auto row = prefix(key);
      for (double x : {s.median, s.q25, s.q75}) row.push_back(fmt(x));
      if (kind == "rank_vs_time") row.push_back(fmt(ref[i].second.front()));
      out.rows.push_back(std::move(row));
      ++i;
    }
    return out;
  }
  if (kind == "energy_vs_time") {
    if (!t.has("electric_energy") || !t.has("ref_electric_energy"))
      throw ConfigError("plot data: energy_vs_time needs the electric_energy observable");
    out.header.push_back("electric_energy");
    out.header.push_back("reference_energy");
    const auto ref = grouped(t, keys, "ref_electric_energy");
    std::size_t i = 0;
    for (const auto& [key, vals] : grouped(t, keys, "electric_energy")) {
      auto row = prefix(key);
      row.push_back(fmt(summarize(vals).median));
      row.push_back(fmt(ref[i++].second.front()));
      out.rows.push_back(std::move(row));
    }
    return out;
  }
  throw ConfigError("plot data: unknown kind '" + kind + "'");
}

/// Writes <stem>_<kind>.csv next to the samples file and records it in the manifest.
inline std::filesystem::path emit_plotdata(const std::filesystem::path& samples_path,
                                           const std::string& kind) {
  const Table t = plot_table(samples_path, kind);
  auto stem = samples_path.filename().string();
  const auto pos = stem.rfind("_samples.csv");
  if (pos != std::string::npos) stem = stem.substr(0, pos);
  else stem = samples_path.stem().string();
  const auto out = samples_path.parent_path() / (stem + "_" + kind + ".csv");
  write_csv(out, t);
  append_manifest(samples_path.parent_path().empty() ? "." : samples_path.parent_path(),
                  stem + "_" + kind,
                  {{"command", "emit"}, {"kind", kind}, {"source", samples_path.filename().string()},
                   {"file", out.filename().string()}, {"rows", std::to_string(t.rows.size())}});
  return out;
}

}  // namespace rdlr::bench
