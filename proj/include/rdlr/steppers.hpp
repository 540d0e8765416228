#pragma once

// Randomized low-rank time steppers: dynamical randomized SVD (DRSVD),
// dynamical generalized Nystrom (DGN), their tolerance-driven variants, and
// the fixed-step driver that strings steps into a trajectory.

#include "rdlr/errors.hpp"
#include "rdlr/fields.hpp"
#include "rdlr/linalg.hpp"
#include "rdlr/rangefinder.hpp"
#include "rdlr/substeps.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rdlr {

struct StepperConfig {
  Index rank = 5;
  Index oversampling = 0;         ///< p
  Index corange_oversampling = 0; ///< l, DGN only
  Index power_iterations = 0;     ///< q
  double step = 0.1;              ///< h
  SolverSpec substep;
  std::uint64_t seed = 0;
  bool augment = true;  ///< include U0 / V0 in the bases

  void validate() const {
    if (rank < 1) throw ConfigError("stepper: rank must be at least 1");
    if (oversampling < 0 || corange_oversampling < 0 || power_iterations < 0)
      throw ConfigError("stepper: oversampling and power iterations must be nonnegative");
    if (!(step > 0.0)) throw ConfigError("stepper: step size must be positive");
    substep.validate();
  }
};

/// Per-step bookkeeping: wall-clock per phase and rank deflations.
struct StepReport {
  double rangefinder_seconds = 0.0;
  double substep_seconds = 0.0;
  double assembly_seconds = 0.0;
  Index range_columns = 0;
  Index corange_columns = 0;
  Index deflated = 0;  ///< singular values of D dropped as numerically zero
};

namespace detail {

class PhaseClock {
 public:
  PhaseClock() : t_(std::chrono::steady_clock::now()) {}
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - t_).count();
    t_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point t_;
};

inline OrthonormalBasis augmented(const Matrix& initial, const OrthonormalBasis& estimate, bool on) {
  if (!on || initial.cols() == 0) return estimate;
  return augment_basis(OrthonormalBasis(initial), estimate.matrix());
}

// C-step on Q followed by the SVD of Q C(h)^T.
inline SvdResult projected_svd(const FieldPtr& f, const FactoredMatrix& y0, const OrthonormalBasis& q,
                               double h, const SolverSpec& spec) {
  const Matrix& qm = q.matrix();
  const Matrix c = solve_left(f, y0.transpose_times(qm), qm, h, spec);
  SvdResult s = svd(Matrix(c.transpose()));
  s.u = qm * s.u;
  return s;
}

struct Bcd {
  Matrix b, c, d;
};

inline Bcd solve_bcd(const FieldPtr& f, const FactoredMatrix& y0, const Matrix& q, const Matrix& w,
                     double h, const SolverSpec& spec) {
  Bcd out;
  out.b = solve_right(f, y0.times(w), w, w, h, spec);
  out.c = solve_left(f, y0.transpose_times(q), q, h, spec);
  out.d = solve_core(f, y0.compress(q, w), q, w, h, spec);
  return out;
}

// B T(D)^+ C^T in factored form, from the kept leading triplets of svd(D).
// Triplets with sigma <= 1e-14 sigma_1 are deflated.
inline FactoredMatrix nystrom_assemble(const Bcd& x, const SvdResult& dsvd, Index keep,
                                       StepReport* report) {
  const Index m = x.b.rows(), n = x.c.rows();
  if (keep == 0 || dsvd.size() == 0 || dsvd.sigma(0) == 0.0)
    return {Matrix(m, 0), Matrix(0, 0), Matrix(n, 0)};
  Index k = keep;
  while (k > 0 && dsvd.sigma(k - 1) <= 1e-14 * dsvd.sigma(0)) --k;
  if (report) report->deflated = keep - k;
  const auto [u1, r1] = thin_qr(Matrix(x.b * dsvd.v.leftCols(k)));
  const auto [v1, r2] = thin_qr(Matrix(x.c * dsvd.u.leftCols(k)));
  const Matrix s1 = r1 * dsvd.sigma.head(k).cwiseInverse().asDiagonal() * r2.transpose();
  return {u1, s1, v1};
}

}  // namespace detail

inline FactoredMatrix drsvd_step(const FieldPtr& f, const FactoredMatrix& y0,
                                 const StepperConfig& cfg, StepReport* report = nullptr) {
  cfg.validate();
  detail::PhaseClock clock;
  RangefinderConfig rcfg{cfg.rank, cfg.oversampling, cfg.power_iterations, cfg.substep,
                         derive_seed(cfg.seed, {0})};
  const OrthonormalBasis q =
      detail::augmented(y0.u, dynamical_rangefinder(f, y0, cfg.step, rcfg), cfg.augment);
  const double t_range = clock.lap();
  const SvdResult s = detail::projected_svd(f, y0, q, cfg.step, cfg.substep);
  const double t_sub = clock.lap();
  FactoredMatrix y1 = truncate_rank(s, cfg.rank);
  if (report) *report = {t_range, t_sub, clock.lap(), q.cols(), 0, 0};
  return y1;
}

inline FactoredMatrix dgn_step(const FieldPtr& f, const FactoredMatrix& y0, const StepperConfig& cfg,
                               StepReport* report = nullptr) {
  cfg.validate();
  detail::PhaseClock clock;
  RangefinderConfig range{cfg.rank, cfg.oversampling, cfg.power_iterations, cfg.substep,
                          derive_seed(cfg.seed, {0})};
  RangefinderConfig corange{cfg.rank, cfg.oversampling + cfg.corange_oversampling,
                            cfg.power_iterations, cfg.substep, derive_seed(cfg.seed, {1})};
  const FactoredMatrix y0t = y0.transposed();
  const OrthonormalBasis q =
      detail::augmented(y0.u, dynamical_rangefinder(f, y0, cfg.step, range), cfg.augment);
  const OrthonormalBasis w = detail::augmented(
      y0.v, dynamical_rangefinder(f->transposed(), y0t, cfg.step, corange), cfg.augment);
  StepReport local;
  local.rangefinder_seconds = clock.lap();
  local.range_columns = q.cols();
  local.corange_columns = w.cols();
  const auto bcd = detail::solve_bcd(f, y0, q.matrix(), w.matrix(), cfg.step, cfg.substep);
  local.substep_seconds = clock.lap();
  const SvdResult ds = svd(bcd.d);
  Index keep = 0;
  while (keep < std::min(cfg.rank, ds.size()) && ds.sigma(keep) > 0.0) ++keep;
  FactoredMatrix y1 = detail::nystrom_assemble(bcd, ds, keep, &local);
  local.assembly_seconds = clock.lap();
  if (report) *report = local;
  return y1;
}

inline FactoredMatrix adrsvd_step(const FieldPtr& f, const FactoredMatrix& y0,
                                  const AdaptiveConfig& acfg, double h,
                                  StepReport* report = nullptr) {
  detail::PhaseClock clock;
  AdaptiveConfig range = acfg;
  range.seed = derive_seed(acfg.seed, {0});
  const OrthonormalBasis q =
      detail::augmented(y0.u, adaptive_dynamical_rangefinder(f, y0, h, range).basis, true);
  const double t_range = clock.lap();
  const SvdResult s = detail::projected_svd(f, y0, q, h, acfg.substep);
  const double t_sub = clock.lap();
  FactoredMatrix y1 = truncate_tol(s, acfg.tolerance);
  if (report) *report = {t_range, t_sub, clock.lap(), q.cols(), 0, 0};
  return y1;
}

inline FactoredMatrix adgn_step(const FieldPtr& f, const FactoredMatrix& y0,
                                const AdaptiveConfig& acfg, double h,
                                StepReport* report = nullptr) {
  detail::PhaseClock clock;
  AdaptiveConfig range = acfg, corange = acfg;
  range.seed = derive_seed(acfg.seed, {0});
  corange.seed = derive_seed(acfg.seed, {1});
  const OrthonormalBasis q =
      detail::augmented(y0.u, adaptive_dynamical_rangefinder(f, y0, h, range).basis, true);
  const OrthonormalBasis w = detail::augmented(
      y0.v, adaptive_dynamical_rangefinder(f->transposed(), y0.transposed(), h, corange).basis,
      true);
  StepReport local;
  local.rangefinder_seconds = clock.lap();
  local.range_columns = q.cols();
  local.corange_columns = w.cols();
  const auto bcd = detail::solve_bcd(f, y0, q.matrix(), w.matrix(), h, acfg.substep);
  local.substep_seconds = clock.lap();
  const SvdResult ds = svd(bcd.d);
  Index keep = 0;
  while (keep < ds.size() && ds.sigma(keep) > acfg.tolerance) ++keep;
  FactoredMatrix y1 = detail::nystrom_assemble(bcd, ds, keep, &local);
  local.assembly_seconds = clock.lap();
  if (report) *report = local;
  return y1;
}

// ---------------------------------------------------------------------------
// Driver

/// One step of length h from y; `step_seed` is fresh for every step.
using StepFunction = std::function<FactoredMatrix(const FactoredMatrix& y, double h,
                                                  std::uint64_t step_seed, StepReport* report)>;

using StateObservable = std::function<double(const Matrix&)>;

struct Trajectory {
  std::vector<double> times;
  std::vector<FactoredMatrix> states;
  std::vector<Index> ranks;
  std::vector<Vector> singular_values;
  std::map<std::string, std::vector<double>> observables;
  std::vector<StepReport> reports;   ///< one per step (states.size() - 1)
  std::vector<std::uint64_t> seeds;  ///< step seeds, one per step
  bool short_final_step = false;
  std::optional<std::string> failure;  ///< set when a step raised a numerical error

  std::size_t steps() const { return reports.size(); }
};

/// Step times h, 2h, ..., N h and a final short step when T is not a multiple of h.
inline std::vector<double> step_times(double horizon, double h) {
  if (!(h > 0.0) || !(horizon > 0.0)) throw ConfigError("step_times: T and h must be positive");
  const double ratio = horizon / h;
  const auto full = static_cast<long>(std::floor(ratio + 1e-9));
  std::vector<double> t;
  for (long i = 1; i <= full; ++i) t.push_back(std::min(horizon, static_cast<double>(i) * h));
  if (horizon - static_cast<double>(full) * h > 1e-9 * horizon) t.push_back(horizon);
  if (!t.empty()) t.back() = horizon;
  return t;
}

/// Repeat `step` from y0 over [0, T]. Step i draws seed derive_seed(master, {i}).
/// A NumericalError stops the run; the partial trajectory carries the message.
inline Trajectory integrate(const FactoredMatrix& y0, double horizon, double h,
                            const StepFunction& step, std::uint64_t master_seed,
                            const std::map<std::string, StateObservable>& observables = {}) {
  Trajectory traj;
  const auto times = step_times(horizon, h);
  traj.short_final_step =
      times.size() >= 2 ? (times.back() - times[times.size() - 2] < h * (1.0 - 1e-9))
                        : (times.back() < h * (1.0 - 1e-9));
  auto record = [&](double t, FactoredMatrix y) {
    traj.times.push_back(t);
    traj.ranks.push_back(y.rank());
    traj.singular_values.push_back(svd(y.s).sigma);
    if (!observables.empty()) {
      const Matrix dense = y.reconstruct();
      for (const auto& [name, fn] : observables) traj.observables[name].push_back(fn(dense));
    }
    traj.states.push_back(std::move(y));
  };
  record(0.0, y0);
  double t = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double dt = times[i] - t;
    const std::uint64_t seed = derive_seed(master_seed, {static_cast<std::uint64_t>(i)});
    StepReport report;
    try {
      FactoredMatrix next = step(traj.states.back(), dt, seed, &report);
      traj.seeds.push_back(seed);
      traj.reports.push_back(report);
      record(times[i], std::move(next));
    } catch (const NumericalError& e) {
      traj.failure = "step " + std::to_string(i) + " at t=" + std::to_string(t) + ": " + e.what();
      return traj;
    }
    t = times[i];
  }
  return traj;
}

/// Step functions for the four randomized methods. The config's `step` and
/// `seed` are replaced per step by the driver's values.
inline StepFunction drsvd_stepper(const FieldPtr& f, StepperConfig cfg) {
  return [f, cfg](const FactoredMatrix& y, double h, std::uint64_t seed, StepReport* r) {
    StepperConfig c = cfg;
    c.step = h;
    c.seed = seed;
    return drsvd_step(f, y, c, r);
  };
}

inline StepFunction dgn_stepper(const FieldPtr& f, StepperConfig cfg) {
  return [f, cfg](const FactoredMatrix& y, double h, std::uint64_t seed, StepReport* r) {
    StepperConfig c = cfg;
    c.step = h;
    c.seed = seed;
    return dgn_step(f, y, c, r);
  };
}

inline StepFunction adrsvd_stepper(const FieldPtr& f, AdaptiveConfig acfg) {
  return [f, acfg](const FactoredMatrix& y, double h, std::uint64_t seed, StepReport* r) {
    AdaptiveConfig c = acfg;
    c.seed = seed;
    return adrsvd_step(f, y, c, h, r);
  };
}

inline StepFunction adgn_stepper(const FieldPtr& f, AdaptiveConfig acfg) {
  return [f, acfg](const FactoredMatrix& y, double h, std::uint64_t seed, StepReport* r) {
    AdaptiveConfig c = acfg;
    c.seed = seed;
    return adgn_step(f, y, c, h, r);
  };
}

}  // namespace rdlr
