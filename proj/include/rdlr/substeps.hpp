#pragma once

// The reduced ODEs every stepper solves over one step of length h:
//
//   B' = F(B R^T) P          (range side; R = pinv^T, P = Omega, or R = P = W)
//   C' = F(Q C^T)^T Q        (corange side)
//   D' = Q^T F(Q D W^T) W    (core)
//
// plus the dense reference solve of the full equation.

#include "rdlr/fields.hpp"
#include "rdlr/odes.hpp"

#include <vector>

namespace rdlr {

inline Matrix solve_right(const FieldPtr& f, const Matrix& b0, const Matrix& r, const Matrix& p,
                          double h, const SolverSpec& spec) {
  OdeProblem prob;
  prob.derivative = [f, r, p](double, const Matrix& b) -> Matrix {
    return f->sketch_right(b, r, p);
  };
  prob.initial = b0;
  prob.horizon = h;
  if (spec.kind == SolverKind::exponential_rk2) prob.structure = f->right_structure(r, p);
  return solve(prob, spec);
}

inline Matrix solve_left(const FieldPtr& f, const Matrix& c0, const Matrix& q, double h,
                         const SolverSpec& spec) {
  return solve_right(f->transposed(), c0, q, q, h, spec);
}

inline Matrix solve_core(const FieldPtr& f, const Matrix& d0, const Matrix& q, const Matrix& w,
                         double h, const SolverSpec& spec) {
  OdeProblem prob;
  prob.derivative = [f, q, w](double, const Matrix& d) -> Matrix {
    return f->sketch_both(d, q, w);
  };
  prob.initial = d0;
  prob.horizon = h;
  if (spec.kind == SolverKind::exponential_rk2) prob.structure = f->both_structure(q, w);
  return solve(prob, spec);
}

/// Dense solution of A' = F(A) at each time in `times` (nondecreasing, > 0).
inline std::vector<Matrix> reference_solve(const FieldPtr& f, const Matrix& a0,
                                           const std::vector<double>& times,
                                           const SolverSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case SolverKind::rk45:
      return dormand_prince([f](double, const Matrix& x) -> Matrix { return f->eval(x); }, 0.0,
                            a0, times, spec.rtol, spec.atol, spec.max_steps);
    case SolverKind::rk4:
      return classic_rk4([f](double, const Matrix& x) -> Matrix { return f->eval(x); }, 0.0, a0,
                         times, spec.dt);
    case SolverKind::exponential_rk2: {
      auto s = f->full_structure();
      if (!s) throw UnsupportedStructure("reference_solve: field has no Sylvester structure");
      ExponentialRk2 etd(*s);
      return etd.advance_through(a0, times, spec.dt);
    }
  }
  return {};
}

}  // namespace rdlr
