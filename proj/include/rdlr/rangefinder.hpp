#pragma once

// Range estimation for the unknown flow A(h) of A' = F(A), A(0) = Y0,
// from sketched ODE solves that never form an m x n state.

#include "rdlr/errors.hpp"
#include "rdlr/fields.hpp"
#include "rdlr/linalg.hpp"
#include "rdlr/odes.hpp"
#include "rdlr/rng.hpp"
#include "rdlr/substeps.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>

namespace rdlr {

struct RangefinderConfig {
  Index rank = 5;
  Index oversampling = 0;
  Index power_iterations = 0;
  SolverSpec substep;
  std::uint64_t seed = 0;

  Index width() const { return rank + oversampling; }

  void validate(Index m, Index n) const {
    if (rank < 1) throw ConfigError("rangefinder: rank must be at least 1");
    if (oversampling < 0 || power_iterations < 0)
      throw ConfigError("rangefinder: oversampling and power iterations must be nonnegative");
    if (width() > std::min(m, n))
      throw ConfigError("rangefinder: rank + oversampling exceeds the matrix dimensions");
    substep.validate();
  }
};

struct AdaptiveConfig {
  double tolerance = 1e-8;
  double failure_probability = 1e-4;
  SolverSpec substep;
  std::uint64_t seed = 0;
  /// Basis size cap; <= 0 means min(m, n) / 2.
  Index max_basis = 0;

  /// Block size K = -ceil(log(beta) / log(10)). log10 keeps powers of ten exact
  /// (log(1e-4) / log(10) rounds to -3.9999999999999996).
  Index block() const {
    return static_cast<Index>(-std::ceil(std::log10(failure_probability)));
  }
  /// Estimator threshold sqrt(pi/2) tau / 10.
  double threshold() const { return std::sqrt(std::numbers::pi / 2.0) * tolerance / 10.0; }

  Index cap(Index m, Index n) const { return max_basis > 0 ? max_basis : std::min(m, n) / 2; }

  void validate() const {
    if (!(tolerance > 0.0)) throw ConfigError("adaptive: tolerance must be positive");
    if (!(failure_probability > 0.0 && failure_probability < 1.0))
      throw ConfigError("adaptive: failure probability must lie in (0, 1)");
    if (block() < 1) throw ConfigError("adaptive: failure probability gives an empty block");
    substep.validate();
  }
};

/// Randomized HMT rangefinder on an explicit matrix, orth((A A^T)^q A Omega),
/// re-orthogonalizing after every application of A or A^T.
inline OrthonormalBasis static_rangefinder(const Matrix& a, const RangefinderConfig& cfg) {
  cfg.validate(a.rows(), a.cols());
  const auto sk = gaussian_sketch(a.cols(), cfg.width(), derive_seed(cfg.seed, {0}));
  Matrix q = thin_qr(a * sk.omega).first;
  for (Index i = 0; i < cfg.power_iterations; ++i) {
    const Matrix w = thin_qr(a.transpose() * q).first;
    q = thin_qr(a * w).first;
  }
  return OrthonormalBasis(std::move(q));
}

/// Sketch of the flow from Y0 over [0, h]: B(h) ~ A(h) Omega.
inline Matrix sketched_flow(const FieldPtr& f, const FactoredMatrix& y0, const SketchOperator& sk,
                            double h, const SolverSpec& spec) {
  return solve_right(f, y0.times(sk.omega), sk.pinv.transpose(), sk.omega, h, spec);
}

/// Dynamical rangefinder with q dynamical power iterations. The sketch key is
/// derive_seed(cfg.seed, {0}).
inline OrthonormalBasis dynamical_rangefinder(const FieldPtr& f, const FactoredMatrix& y0, double h,
                                              const RangefinderConfig& cfg) {
  cfg.validate(f->rows(), f->cols());
  const auto sk = gaussian_sketch(f->cols(), cfg.width(), derive_seed(cfg.seed, {0}));
  OrthonormalBasis q = orth(sketched_flow(f, y0, sk, h, cfg.substep));
  for (Index i = 0; i < cfg.power_iterations && !q.empty(); ++i) {
    const Matrix& qm = q.matrix();
    const Matrix c = solve_left(f, y0.transpose_times(qm), qm, h, cfg.substep);
    const OrthonormalBasis w = orth(c);
    if (w.empty()) return OrthonormalBasis(Matrix(f->rows(), 0));
    const Matrix& wm = w.matrix();
    q = orth(solve_right(f, y0.times(wm), wm, wm, h, cfg.substep));
  }
  return q;
}

struct AdaptiveRangeResult {
  OrthonormalBasis basis;
  double estimate = 0.0;  ///< final max_i ||(I - QQ^T) B(h)_i||, at most the threshold
  Index iterations = 0;   ///< j: number of K-blocks drawn
};

/// Adaptive dynamical rangefinder: grows the basis by K-blocks until the
/// Gaussian-sampling estimate of ||(I - QQ^T) A(h)||_2 drops below tau with
/// probability at least 1 - beta. Block j uses derive_seed(acfg.seed, {j}).
inline AdaptiveRangeResult adaptive_dynamical_rangefinder(const FieldPtr& f,
                                                          const FactoredMatrix& y0, double h,
                                                          const AdaptiveConfig& acfg) {
  acfg.validate();
  const Index m = f->rows(), n = f->cols();
  const Index k = acfg.block();
  const Index cap = acfg.cap(m, n);
  if (k > std::min(m, n)) throw ConfigError("adaptive: block size exceeds the matrix dimensions");
  const double eps = acfg.threshold();

  RangefinderConfig first;
  first.rank = k;
  first.substep = acfg.substep;
  first.seed = derive_seed(acfg.seed, {0});
  AdaptiveRangeResult out;
  out.basis = dynamical_rangefinder(f, y0, h, first);
  out.iterations = 1;

  double e = std::numeric_limits<double>::infinity();
  for (std::uint64_t draw = 1; e > eps; ++draw) {
    const auto sk = gaussian_sketch(n, k, derive_seed(acfg.seed, {draw}));
    const Matrix b = sketched_flow(f, y0, sk, h, acfg.substep);
    const Matrix residual = out.basis.empty() ? b : Matrix(b - out.basis.project(b));
    e = residual.colwise().norm().maxCoeff();
    if (e > eps) {
      if (out.basis.cols() + k > cap)
        throw NonConvergence("adaptive rangefinder: basis would exceed " + std::to_string(cap) +
                             " columns");
      out.basis = augment_basis(out.basis, b, std::min(kRankRevealTolerance * spectral_norm(b), eps));
      ++out.iterations;
    }
  }
  out.estimate = e;
  return out;
}

/// alpha sqrt(2/pi) max_i ||M omega_i||_2 over K standard Gaussian vectors,
/// an upper bound on ||M||_2 with probability at least 1 - alpha^{-K}.
inline double gaussian_norm_estimate(const std::function<Matrix(const Matrix&)>& apply, Index n,
                                     Index k, std::uint64_t seed, double alpha = 10.0) {
  if (k < 1) throw ConfigError("gaussian_norm_estimate: K must be at least 1");
  if (!(alpha > 1.0)) throw ConfigError("gaussian_norm_estimate: alpha must exceed 1");
  const Matrix omega = CounterRng(seed).gaussian(n, k);
  const Matrix y = apply(omega);
  const double largest = y.size() == 0 ? 0.0 : y.colwise().norm().maxCoeff();
  return alpha * std::sqrt(2.0 / std::numbers::pi) * largest;
}

}  // namespace rdlr
