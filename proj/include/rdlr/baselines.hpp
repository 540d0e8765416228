#pragma once

// Classical dynamical low-rank integrators used for comparison: projector
// splitting (KSL), BUG, rank-adaptive augmented BUG and projected explicit
// Euler. All take and return factored states U S V^T.

#include "rdlr/errors.hpp"
#include "rdlr/fields.hpp"
#include "rdlr/linalg.hpp"
#include "rdlr/odes.hpp"
#include "rdlr/steppers.hpp"
#include "rdlr/substeps.hpp"

namespace rdlr {

/// P_Y(Z) = U U^T Z + Z V V^T - U U^T Z V V^T, the orthogonal projection onto
/// the tangent space of the rank-k manifold at Y.
inline Matrix tangent_project(const FactoredMatrix& y, const Matrix& z) {
  const Matrix utz = y.u.transpose() * z;
  const Matrix zv = z * y.v;
  return y.u * utz + zv * y.v.transpose() - y.u * (utz * y.v) * y.v.transpose();
}

struct BaselineConfig {
  Index rank = 5;
  SolverSpec substep;
  /// Augmented BUG keeps sigma > tolerance; <= 0 truncates back to `rank`.
  double tolerance = 0.0;
  int order = 1;  ///< KSL: 1 Lie-Trotter, 2 Strang

  void validate() const {
    if (rank < 1) throw ConfigError("baseline: rank must be at least 1");
    if (order != 1 && order != 2) throw ConfigError("baseline: KSL order must be 1 or 2");
    substep.validate();
  }
};

namespace detail {

// K' = F(K V^T) V from K(0) = U S, then K = U1 S1.
inline std::pair<Matrix, Matrix> k_flow(const FieldPtr& f, const Matrix& u, const Matrix& s,
                                        const Matrix& v, double h, const SolverSpec& spec) {
  return thin_qr(solve_right(f, Matrix(u * s), v, v, h, spec));
}

// L' = F(U L^T)^T U from L(0) = V S^T, then L = V1 S1^T. Returns (S1, V1).
inline std::pair<Matrix, Matrix> l_flow(const FieldPtr& f, const Matrix& u, const Matrix& s,
                                        const Matrix& v, double h, const SolverSpec& spec) {
  auto [v1, r] = thin_qr(solve_left(f, Matrix(v * s.transpose()), u, h, spec));
  return {Matrix(r.transpose()), std::move(v1)};
}

inline SylvesterStructure negated(SylvesterStructure s) {
  auto e = std::make_shared<SymmetricEigen>(*s.left);
  e->values = -e->values;
  s.left = std::move(e);
  s.right = -s.right;
  if (s.nonlinear) s.nonlinear = [g = s.nonlinear](const Matrix& x) -> Matrix { return -g(x); };
  return s;
}

// S' = -U^T F(U S V^T) V: the backward Galerkin sub-flow of projector splitting.
inline Matrix s_flow_backward(const FieldPtr& f, const Matrix& s0, const Matrix& u, const Matrix& v,
                              double h, const SolverSpec& spec) {
  OdeProblem prob;
  prob.derivative = [f, u, v](double, const Matrix& s) -> Matrix {
    return -f->sketch_both(s, u, v);
  };
  prob.initial = s0;
  prob.horizon = h;
  if (spec.kind == SolverKind::exponential_rk2) {
    if (auto st = f->both_structure(u, v)) prob.structure = negated(std::move(*st));
  }
  const Matrix out = solve(prob, spec);
  require_finite(out, "KSL S-step");
  return out;
}

}  // namespace detail

/// Projector-splitting step. Order 2 is the symmetric Strang composition
/// K(h/2) S(h/2) L(h) S(h/2) K(h/2).
inline FactoredMatrix ksl_step(const FieldPtr& f, const FactoredMatrix& y0, double h,
                               const BaselineConfig& cfg) {
  cfg.validate();
  const auto& spec = cfg.substep;
  if (cfg.order == 1) {
    auto [u1, s] = detail::k_flow(f, y0.u, y0.s, y0.v, h, spec);
    s = detail::s_flow_backward(f, s, u1, y0.v, h, spec);
    auto [s1, v1] = detail::l_flow(f, u1, s, y0.v, h, spec);
    detail::require_finite(s1, "KSL step");
    return {std::move(u1), std::move(s1), std::move(v1)};
  }
  const double half = 0.5 * h;
  auto [u1, s] = detail::k_flow(f, y0.u, y0.s, y0.v, half, spec);
  s = detail::s_flow_backward(f, s, u1, y0.v, half, spec);
  auto [s1, v1] = detail::l_flow(f, u1, s, y0.v, h, spec);
  s1 = detail::s_flow_backward(f, s1, u1, v1, half, spec);
  auto [u2, s2] = detail::k_flow(f, u1, s1, v1, half, spec);
  detail::require_finite(s2, "KSL step");
  return {std::move(u2), std::move(s2), std::move(v1)};
}

/// Fixed-rank basis-update and Galerkin step.
inline FactoredMatrix bug_step(const FieldPtr& f, const FactoredMatrix& y0, double h,
                               const BaselineConfig& cfg) {
  cfg.validate();
  const auto& spec = cfg.substep;
  const Matrix u1 = thin_qr(solve_right(f, Matrix(y0.u * y0.s), y0.v, y0.v, h, spec)).first;
  const Matrix v1 =
      thin_qr(solve_left(f, Matrix(y0.v * y0.s.transpose()), y0.u, h, spec)).first;
  const Matrix s1 = solve_core(f, y0.compress(u1, v1), u1, v1, h, spec);
  return {u1, s1, v1};
}

/// Rank-adaptive BUG: bases [K(h), U0] and [L(h), V0] of width 2r, Galerkin
/// step, then truncation to `tolerance` (or back to `rank`).
inline FactoredMatrix augmented_bug_step(const FieldPtr& f, const FactoredMatrix& y0, double h,
                                         const BaselineConfig& cfg) {
  cfg.validate();
  const auto& spec = cfg.substep;
  const Matrix k = solve_right(f, Matrix(y0.u * y0.s), y0.v, y0.v, h, spec);
  const Matrix l = solve_left(f, Matrix(y0.v * y0.s.transpose()), y0.u, h, spec);
  const Matrix u1 = augment_basis(OrthonormalBasis(y0.u), k).matrix();
  const Matrix v1 = augment_basis(OrthonormalBasis(y0.v), l).matrix();
  const Matrix s1 = solve_core(f, y0.compress(u1, v1), u1, v1, h, spec);
  SvdResult x = svd(s1);
  x.u = u1 * x.u;
  x.v = v1 * x.v;
  return cfg.tolerance > 0.0 ? truncate_tol(x, cfg.tolerance) : truncate_rank(x, cfg.rank);
}

/// T_r(Y0 + h P_Y0 F(Y0)), assembled on the 2r-dimensional bases of the
/// tangent space instead of densely.
inline FactoredMatrix projected_euler_step(const FieldPtr& f, const FactoredMatrix& y0, double h,
                                           const BaselineConfig& cfg) {
  cfg.validate();
  const Matrix z = f->eval(y0);
  detail::require_finite(z, "projected Euler");
  const Matrix utz = y0.u.transpose() * z;
  const Matrix zv = z * y0.v;
  const Matrix utzv = utz * y0.v;
  const Matrix q = augment_basis(OrthonormalBasis(y0.u), zv).matrix();
  const Matrix w = augment_basis(OrthonormalBasis(y0.v), Matrix(utz.transpose())).matrix();
  const Matrix qu = q.transpose() * y0.u, vw = y0.v.transpose() * w;
  const Matrix core = qu * y0.s * vw +
                      h * (qu * (utz * w) + (q.transpose() * zv) * vw - qu * utzv * vw);
  SvdResult x = svd(core);
  x.u = q * x.u;
  x.v = w * x.v;
  return truncate_rank(x, cfg.rank);
}

// Driver adapters; the step seed is unused.
inline StepFunction ksl_stepper(const FieldPtr& f, BaselineConfig cfg) {
  return [f, cfg](const FactoredMatrix& y, double h, std::uint64_t, StepReport*) {
    return ksl_step(f, y, h, cfg);
  };
}

inline StepFunction bug_stepper(const FieldPtr& f, BaselineConfig cfg) {
  return [f, cfg](const FactoredMatrix& y, double h, std::uint64_t, StepReport*) {
    return bug_step(f, y, h, cfg);
  };
}

inline StepFunction augmented_bug_stepper(const FieldPtr& f, BaselineConfig cfg) {
  return [f, cfg](const FactoredMatrix& y, double h, std::uint64_t, StepReport*) {
    return augmented_bug_step(f, y, h, cfg);
  };
}

inline StepFunction projected_euler_stepper(const FieldPtr& f, BaselineConfig cfg) {
  return [f, cfg](const FactoredMatrix& y, double h, std::uint64_t, StepReport*) {
    return projected_euler_step(f, y, h, cfg);
  };
}

}  // namespace rdlr
