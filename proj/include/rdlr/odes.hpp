#pragma once

// Matrix-valued ODE integrators: adaptive Dormand-Prince 5(4), classic RK4
// and a second-order exponential integrator (ETD2RK, Cox-Matthews) for
// Sylvester-shaped problems  X' = A X + X M + N(X)  with symmetric A.

#include "rdlr/errors.hpp"
#include "rdlr/linalg.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace rdlr {

enum class SolverKind { rk45, rk4, exponential_rk2 };

inline std::string_view to_string(SolverKind k) {
  switch (k) {
    case SolverKind::rk45: return "rk45";
    case SolverKind::rk4: return "rk4";
    case SolverKind::exponential_rk2: return "exponential_rk2";
  }
  return "?";
}

inline std::optional<SolverKind> parse_solver_kind(std::string_view s) {
  if (s == "rk45") return SolverKind::rk45;
  if (s == "rk4") return SolverKind::rk4;
  if (s == "exponential_rk2" || s == "etd2rk") return SolverKind::exponential_rk2;
  return std::nullopt;
}

struct SolverSpec {
  SolverKind kind = SolverKind::rk45;
  double rtol = 1e-12;
  double atol = 1e-12;
  double dt = 1e-4;  ///< internal step of the fixed-step kinds
  long max_steps = 20'000'000;

  static SolverSpec adaptive(double rtol, double atol) {
    SolverSpec s;
    s.rtol = rtol;
    s.atol = atol;
    return s;
  }
  static SolverSpec exponential(double dt) {
    SolverSpec s;
    s.kind = SolverKind::exponential_rk2;
    s.dt = dt;
    return s;
  }
  static SolverSpec fixed_rk4(double dt) {
    SolverSpec s;
    s.kind = SolverKind::rk4;
    s.dt = dt;
    return s;
  }

  void validate() const {
    if (!(rtol > 0.0) || !(atol > 0.0)) throw std::invalid_argument("solver tolerances must be > 0");
    if (kind != SolverKind::rk45 && !(dt > 0.0)) throw std::invalid_argument("solver dt must be > 0");
  }
};

/// Eigendecomposition A = V diag(values) V^T of a symmetric matrix.
struct SymmetricEigen {
  Vector values;
  Matrix vectors;
};

inline std::shared_ptr<const SymmetricEigen> symmetric_eigen(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  if (es.info() != Eigen::Success) throw NumericalError("symmetric eigensolver failed");
  return std::make_shared<const SymmetricEigen>(SymmetricEigen{es.eigenvalues(), es.eigenvectors()});
}

using MatrixMap = std::function<Matrix(const Matrix&)>;

/// X' = A X + X M + N(X), A symmetric with cached eigendecomposition.
struct SylvesterStructure {
  std::shared_ptr<const SymmetricEigen> left;
  Matrix right;                 ///< M, acting from the right
  MatrixMap nonlinear;          ///< N; empty means zero
  bool constant_nonlinear = false;  ///< N(X) does not depend on X
};

struct OdeProblem {
  std::function<Matrix(double, const Matrix&)> derivative;
  Matrix initial;
  double horizon = 0.0;
  std::optional<SylvesterStructure> structure;
};

namespace detail {

inline bool all_finite(const Matrix& x) { return x.allFinite(); }

inline void require_finite(const Matrix& x, const char* where) {
  if (!all_finite(x)) throw NumericalError(std::string(where) + ": non-finite state");
}

// Dormand-Prince 5(4) tableau.
struct Dopri {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
};

struct DopriStage {
  Matrix k1, k2, k3, k4, k5, k6, k7, ynew;
};

template <class Rhs>
void dopri_stages(const Rhs& f, double t, const Matrix& y, double h, DopriStage& s) {
  using D = Dopri;
  s.k2 = f(t + D::c2 * h, y + h * (D::a21 * s.k1));
  s.k3 = f(t + D::c3 * h, y + h * (D::a31 * s.k1 + D::a32 * s.k2));
  s.k4 = f(t + D::c4 * h, y + h * (D::a41 * s.k1 + D::a42 * s.k2 + D::a43 * s.k3));
  s.k5 = f(t + D::c5 * h,
           y + h * (D::a51 * s.k1 + D::a52 * s.k2 + D::a53 * s.k3 + D::a54 * s.k4));
  s.k6 = f(t + h, y + h * (D::a61 * s.k1 + D::a62 * s.k2 + D::a63 * s.k3 + D::a64 * s.k4 +
                           D::a65 * s.k5));
  s.ynew = y + h * (D::b1 * s.k1 + D::b3 * s.k3 + D::b4 * s.k4 + D::b5 * s.k5 + D::b6 * s.k6);
  s.k7 = f(t + h, s.ynew);
}

// RMS of err / (atol + rtol max(|y|, |ynew|)).
inline double scaled_rms(const Matrix& err, const Matrix& y, const Matrix& ynew, double rtol,
                         double atol) {
  if (err.size() == 0) return 0.0;
  const auto sc = atol + rtol * y.array().abs().max(ynew.array().abs());
  return std::sqrt((err.array() / sc).square().mean());
}

template <class Rhs>
double initial_step(const Rhs& f, double t0, const Matrix& y0, const Matrix& f0, double span,
                    double rtol, double atol) {
  if (y0.size() == 0) return span;
  const auto sc = atol + rtol * y0.array().abs();
  const double d0 = std::sqrt((y0.array() / sc).square().mean());
  const double d1 = std::sqrt((f0.array() / sc).square().mean());
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);
  const Matrix y1 = y0 + h0 * f0;
  const Matrix f1 = f(t0 + h0, y1);
  const double d2 = std::sqrt(((f1 - f0).array() / sc).square().mean()) / h0;
  const double dm = std::max(d1, d2);
  const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 1.0 / 5.0);
  return std::min({100.0 * h0, h1, span});
}

}  // namespace detail

/// Adaptive Dormand-Prince 5(4) with PI step control. Integrates from t0
/// through every time in `outputs` (nondecreasing, >= t0) without restarting
/// and returns the states there.
template <class Rhs>
std::vector<Matrix> dormand_prince(const Rhs& f, double t0, const Matrix& y0,
                                   const std::vector<double>& outputs, double rtol, double atol,
                                   long max_steps = 20'000'000) {
  using std::abs;
  constexpr double beta = 0.04, expo1 = 0.2 - beta * 0.75, safe = 0.9;
  constexpr double facc1 = 5.0, facc2 = 0.1;  // 1/fac1, 1/fac2 with fac1 = 0.2, fac2 = 10

  std::vector<Matrix> out;
  out.reserve(outputs.size());
  if (outputs.empty()) return out;
  const double span = outputs.back() - t0;
  Matrix y = y0;
  double t = t0;
  detail::DopriStage s;
  s.k1 = f(t, y);
  detail::require_finite(s.k1, "rk45");
  double h = span > 0 ? detail::initial_step(f, t, y, s.k1, span, rtol, atol) : 0.0;
  double facold = 1e-4;
  bool last_rejected = false;
  long steps = 0;

  for (double target : outputs) {
    while (t < target) {
      const double remaining = target - t;
      if (remaining <= 1e-15 * std::max(1.0, abs(target))) {
        t = target;
        break;
      }
      if (h < 1e-14 * span || !(h > 0)) throw StiffnessError("rk45: step size underflow");
      if (++steps > max_steps) throw StiffnessError("rk45: step budget exhausted");
      const bool clipped = h >= remaining;
      const double step = clipped ? remaining : h;

      detail::dopri_stages(f, t, y, step, s);
      using D = detail::Dopri;
      const Matrix err = step * (D::e1 * s.k1 + D::e3 * s.k3 + D::e4 * s.k4 + D::e5 * s.k5 +
                                 D::e6 * s.k6 + D::e7 * s.k7);
      double e = detail::scaled_rms(err, y, s.ynew, rtol, atol);
      if (!std::isfinite(e)) e = 1e10;

      const double fac11 = std::pow(e, expo1);
      if (e <= 1.0) {
        double fac = fac11 / std::pow(facold, beta);
        fac = std::max(facc2, std::min(facc1, fac / safe));
        double hnew = step / fac;
        facold = std::max(e, 1e-4);
        if (last_rejected) hnew = std::min(hnew, step);
        detail::require_finite(s.ynew, "rk45");
        t = clipped ? target : t + step;
        y.swap(s.ynew);
        s.k1.swap(s.k7);
        last_rejected = false;
        // A step clipped to an output time says little about the natural size.
        h = clipped ? std::max(h, hnew) : hnew;
      } else {
        h = step / std::min(facc1, fac11 / safe);
        last_rejected = true;
      }
    }
    out.push_back(y);
  }
  return out;
}

/// Fixed-step Dormand-Prince 5 (no error control); used for order checks.
template <class Rhs>
Matrix dormand_prince_fixed(const Rhs& f, const Matrix& y0, double horizon, long steps) {
  const double h = horizon / static_cast<double>(steps);
  Matrix y = y0;
  detail::DopriStage s;
  for (long i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) * h;
    s.k1 = f(t, y);
    detail::dopri_stages(f, t, y, h, s);
    y.swap(s.ynew);
  }
  return y;
}

/// Classic fourth-order Runge-Kutta through `outputs` with step <= dt.
template <class Rhs>
std::vector<Matrix> classic_rk4(const Rhs& f, double t0, const Matrix& y0,
                                const std::vector<double>& outputs, double dt) {
  std::vector<Matrix> out;
  Matrix y = y0;
  double t = t0;
  for (double target : outputs) {
    const double span = target - t;
    const long n = std::max<long>(span > 0 ? static_cast<long>(std::ceil(span / dt - 1e-9)) : 0, 0);
    const double h = n > 0 ? span / static_cast<double>(n) : 0.0;
    for (long i = 0; i < n; ++i) {
      const Matrix k1 = f(t, y);
      const Matrix k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
      const Matrix k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
      const Matrix k4 = f(t + h, y + h * k3);
      y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t = i + 1 == n ? target : t + h;
    }
    detail::require_finite(y, "rk4");
    out.push_back(y);
  }
  return out;
}

namespace detail {

// phi1(z) = (e^z - 1)/z, phi2(z) = (e^z - 1 - z)/z^2, Taylor series near 0.
template <class T>
void phi12(T z, T& e, T& p1, T& p2) {
  using std::abs;
  using std::exp;
  e = exp(z);
  if (abs(z) < 0.1) {
    T sum1(0.0), sum2(0.0), power(1.0);
    double fact1 = 1.0, fact2 = 2.0;
    for (int k = 0; k < 14; ++k) {
      sum1 += power / fact1;
      sum2 += power / fact2;
      power *= z;
      fact1 *= static_cast<double>(k + 2);
      fact2 *= static_cast<double>(k + 3);
    }
    p1 = sum1;
    p2 = sum2;
  } else {
    p1 = (e - T(1.0)) / z;
    p2 = (e - T(1.0) - z) / (z * z);
  }
}

template <class Scalar>
struct ModalEtd {
  using CMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using CVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix v;         // left eigenvectors (orthogonal)
  Vector lambda;    // left eigenvalues
  CMatrix z, zinv;  // right eigenvectors and inverse
  CVector mu;       // right eigenvalues
  MatrixMap nonlinear;
  bool constant = false;
  CMatrix constant_modal;

  double cached_h = -1.0;
  CMatrix ex, p1, p2;

  CMatrix to_modal(const Matrix& x) const {
    if constexpr (std::is_same_v<Scalar, double>) {
      return v.transpose() * x * z;
    } else {
      const Matrix vx = v.transpose() * x;
      return vx.template cast<Scalar>() * z;
    }
  }

  Matrix from_modal(const CMatrix& y) const {
    if constexpr (std::is_same_v<Scalar, double>) {
      return v * (y * zinv);
    } else {
      const Matrix re = (y * zinv).real();
      return v * re;
    }
  }

  void prepare(double h) {
    if (h == cached_h) return;
    const Index m = lambda.size(), k = mu.size();
    ex.resize(m, k);
    p1.resize(m, k);
    p2.resize(m, k);
    for (Index j = 0; j < k; ++j)
      for (Index i = 0; i < m; ++i) {
        Scalar e, a, b;
        phi12<Scalar>(Scalar(h) * (Scalar(lambda(i)) + mu(j)), e, a, b);
        ex(i, j) = e;
        p1(i, j) = h * a;
        p2(i, j) = h * b;
      }
    cached_h = h;
  }

  CMatrix modal_nonlinear(const CMatrix& u) const {
    if (!nonlinear) return CMatrix::Zero(u.rows(), u.cols());
    if (constant) return constant_modal;
    return to_modal(nonlinear(from_modal(u)));
  }

  void step(CMatrix& u, double h) {
    prepare(h);
    const CMatrix nu = modal_nonlinear(u);
    CMatrix a = ex.cwiseProduct(u) + p1.cwiseProduct(nu);
    if (nonlinear && !constant) {
      const CMatrix na = modal_nonlinear(a);
      a += p2.cwiseProduct(na - nu);
    }
    u.swap(a);
  }
};

}  // namespace detail

/// Second-order exponential Runge-Kutta (ETD2RK) for Sylvester-shaped
/// problems. The modal decomposition is built once, so repeated calls to
/// `advance` (e.g. between output times) reuse it.
class ExponentialRk2 {
 public:
  /// Largest accepted condition number of the right eigenvector matrix.
  static constexpr double kMaxEigenvectorCondition = 1e10;

  explicit ExponentialRk2(const SylvesterStructure& s) {
    if (!s.left) throw UnsupportedStructure("exponential_rk2: left operator has no eigendecomposition");
    const Matrix& m = s.right;
    const double scale = std::max(m.norm(), 1e-300);
    if (m.size() == 0 || (m - m.transpose()).norm() <= 1e-13 * scale) {
      auto& r = real_.emplace();
      fill_left(r, s);
      if (m.size() > 0) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
        r.mu = es.eigenvalues();
        r.z = es.eigenvectors();
        r.zinv = r.z.transpose();
      } else {
        r.mu = Vector(0);
        r.z = Matrix(0, 0);
        r.zinv = Matrix(0, 0);
      }
      finish(r, s);
    } else {
      auto& c = complex_.emplace();
      fill_left(c, s);
      Eigen::EigenSolver<Matrix> es(m);
      if (es.info() != Eigen::Success) throw NumericalError("exponential_rk2: eigensolver failed");
      c.mu = es.eigenvalues();
      c.z = es.eigenvectors();
      Eigen::JacobiSVD<Eigen::MatrixXcd> sv(c.z);
      const auto& sig = sv.singularValues();
      if (!(sig(sig.size() - 1) > 0) ||
          sig(0) / sig(sig.size() - 1) > kMaxEigenvectorCondition)
        throw UnsupportedStructure("exponential_rk2: right operator is not diagonalizable");
      c.zinv = c.z.inverse();
      finish(c, s);
    }
  }

  /// Integrate from x0 over an interval of length `horizon` with steps <= dt.
  Matrix advance(const Matrix& x0, double horizon, double dt) {
    if (real_) return run(*real_, x0, horizon, dt);
    return run(*complex_, x0, horizon, dt);
  }

  /// States at each cumulative time in `outputs` (starting at 0).
  std::vector<Matrix> advance_through(const Matrix& x0, const std::vector<double>& outputs,
                                      double dt) {
    std::vector<Matrix> out;
    if (real_) run_through(*real_, x0, outputs, dt, out);
    else run_through(*complex_, x0, outputs, dt, out);
    return out;
  }

 private:
  template <class E>
  static void fill_left(E& e, const SylvesterStructure& s) {
    e.v = s.left->vectors;
    e.lambda = s.left->values;
    e.nonlinear = s.nonlinear;
    e.constant = s.constant_nonlinear;
  }

  template <class E>
  static void finish(E& e, const SylvesterStructure& s) {
    if (e.nonlinear && e.constant) {
      const Matrix probe = Matrix::Zero(e.v.rows(), e.z.rows());
      e.constant_modal = e.to_modal(s.nonlinear(probe));
    }
  }

  template <class E>
  static Matrix run(E& e, const Matrix& x0, double horizon, double dt) {
    std::vector<Matrix> out;
    run_through(e, x0, {horizon}, dt, out);
    return out.back();
  }

  template <class E>
  static void run_through(E& e, const Matrix& x0, const std::vector<double>& outputs, double dt,
                          std::vector<Matrix>& out) {
    auto u = e.to_modal(x0);
    double t = 0.0;
    for (double target : outputs) {
      const double span = target - t;
      const long n = span > 0 ? static_cast<long>(std::ceil(span / dt - 1e-9)) : 0;
      // Full steps of dt, then one shorter step to land on the target.
      const long full = n > 0 ? n - 1 : 0;
      for (long i = 0; i < full; ++i) e.step(u, dt);
      if (n > 0) {
        const double rest = span - static_cast<double>(full) * dt;
        if (rest > 0) e.step(u, rest);
      }
      t = target;
      Matrix x = e.from_modal(u);
      detail::require_finite(x, "exponential_rk2");
      out.push_back(std::move(x));
    }
  }

  std::optional<detail::ModalEtd<double>> real_;
  std::optional<detail::ModalEtd<std::complex<double>>> complex_;
};

/// State at t = problem.horizon.
inline Matrix solve(const OdeProblem& problem, const SolverSpec& spec) {
  spec.validate();
  if (problem.horizon == 0.0) return problem.initial;
  switch (spec.kind) {
    case SolverKind::rk45:
      return dormand_prince(problem.derivative, 0.0, problem.initial, {problem.horizon},
                            spec.rtol, spec.atol, spec.max_steps)
          .back();
    case SolverKind::rk4:
      return classic_rk4(problem.derivative, 0.0, problem.initial, {problem.horizon}, spec.dt)
          .back();
    case SolverKind::exponential_rk2: {
      if (!problem.structure)
        throw UnsupportedStructure("exponential_rk2: problem has no Sylvester structure");
      ExponentialRk2 etd(*problem.structure);
      return etd.advance(problem.initial, problem.horizon, spec.dt);
    }
  }
  return problem.initial;
}

}  // namespace rdlr
