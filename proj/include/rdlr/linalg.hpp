#pragma once

// Dense kernels shared by every integrator: orthonormal bases, SVDs,
// rank/tolerance truncation and Gaussian sketches.
//
// Matrices are Eigen column-major doubles throughout.

#include "rdlr/errors.hpp"
#include "rdlr/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>

namespace rdlr {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative rank-reveal threshold used by `orth`.
inline constexpr double kRankRevealTolerance = 1e-12;

/// Matrix with orthonormal columns. The constructor does not check; use
/// `orthogonality_defect` in tests.
class OrthonormalBasis {
 public:
  OrthonormalBasis() = default;
  explicit OrthonormalBasis(Matrix q) : q_(std::move(q)) {}

  const Matrix& matrix() const noexcept { return q_; }
  Index rows() const noexcept { return q_.rows(); }
  Index cols() const noexcept { return q_.cols(); }
  bool empty() const noexcept { return q_.cols() == 0; }

  /// Q Q^T x
  Matrix project(const Matrix& x) const { return q_ * (q_.transpose() * x); }

  /// ||Q^T Q - I||_F
  double orthogonality_defect() const {
    return (q_.transpose() * q_ - Matrix::Identity(q_.cols(), q_.cols())).norm();
  }

 private:
  Matrix q_;
};

/// Y = U S V^T with orthonormal U (m x k), V (n x k) and a k x k core S.
struct FactoredMatrix {
  Matrix u;
  Matrix s;
  Matrix v;

  FactoredMatrix() = default;
  FactoredMatrix(Matrix u_, Matrix s_, Matrix v_)
      : u(std::move(u_)), s(std::move(s_)), v(std::move(v_)) {}

  Index rows() const noexcept { return u.rows(); }
  Index cols() const noexcept { return v.rows(); }
  Index rank() const noexcept { return s.rows(); }

  Matrix reconstruct() const {
    if (rank() == 0) return Matrix::Zero(rows(), cols());
    return u * s * v.transpose();
  }
  FactoredMatrix transposed() const { return {v, s.transpose(), u}; }

  /// Y P
  Matrix times(const Matrix& p) const { return u * (s * (v.transpose() * p)); }
  /// Y^T Q
  Matrix transpose_times(const Matrix& q) const {
    return v * (s.transpose() * (u.transpose() * q));
  }
  /// Q^T Y W
  Matrix compress(const Matrix& q, const Matrix& w) const {
    return (q.transpose() * u) * s * (v.transpose() * w);
  }
  /// Frobenius norm (exact because U, V are orthonormal).
  double norm() const { return s.norm(); }
};

struct SvdResult {
  Matrix u;
  Vector sigma;  ///< nonincreasing, nonnegative
  Matrix v;

  Index size() const noexcept { return sigma.size(); }
  Matrix reconstruct() const { return u * sigma.asDiagonal() * v.transpose(); }
};

/// Gaussian test matrix with its cached left pseudoinverse.
struct SketchOperator {
  Matrix omega;  ///< n x s, i.i.d. N(0, 1)
  Matrix pinv;   ///< s x n, (omega^T omega)^{-1} omega^T
  std::uint64_t seed = 0;  ///< key actually used
  int reseeds = 0;         ///< regenerations caused by a singular Gram matrix
};

/// Spectral norm via singular values (exact; meant for tall-skinny or desk-scale input).
inline double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  if (m.rows() > 2 * m.cols()) {
    Eigen::HouseholderQR<Matrix> qr(m);
    Matrix r = qr.matrixQR().topRows(m.cols()).triangularView<Eigen::Upper>();
    return Eigen::JacobiSVD<Matrix>(r).singularValues()(0);
  }
  if (m.cols() > 2 * m.rows()) return spectral_norm(Matrix(m.transpose()));
  return Eigen::BDCSVD<Matrix>(m).singularValues()(0);
}

/// Thin (unpivoted) Householder QR: m = Q R with Q m x min(m, k).
inline std::pair<Matrix, Matrix> thin_qr(const Matrix& m) {
  const Index k = std::min(m.rows(), m.cols());
  Eigen::HouseholderQR<Matrix> qr(m);
  Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), k);
  Matrix r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  return {std::move(q), std::move(r)};
}

namespace detail {

// Columns of `m` (in pivot order) whose pivoted-QR diagonal exceeds `abs_tol`.
inline Matrix revealed_columns(const Matrix& m, double abs_tol) {
  Eigen::ColPivHouseholderQR<Matrix> qr(m);
  const auto diag = qr.matrixQR().diagonal().cwiseAbs();
  Index rank = 0;
  while (rank < diag.size() && diag(rank) > abs_tol) ++rank;
  Matrix selected(m.rows(), rank);
  const auto& perm = qr.colsPermutation().indices();
  for (Index j = 0; j < rank; ++j) selected.col(j) = m.col(perm(j));
  return selected;
}

inline Matrix householder_basis(const Matrix& m) {
  if (m.cols() == 0) return Matrix(m.rows(), 0);
  return thin_qr(m).first;
}

}  // namespace detail

/// Orthonormal basis of Range(m); columns whose pivots fall below `abs_tol` are dropped.
inline OrthonormalBasis orth(const Matrix& m, double abs_tol) {
  if (m.cols() == 0 || m.rows() == 0) return OrthonormalBasis(Matrix(m.rows(), 0));
  Matrix selected = detail::revealed_columns(m, abs_tol);
  return OrthonormalBasis(detail::householder_basis(selected));
}

/// Orthonormal basis of Range(m) with rank-reveal tolerance 1e-12 ||m||_2.
/// All-zero input yields a basis with zero columns.
inline OrthonormalBasis orth(const Matrix& m) {
  const double scale = spectral_norm(m);
  if (scale == 0.0) return OrthonormalBasis(Matrix(m.rows(), 0));
  return orth(m, kRankRevealTolerance * scale);
}

/// orth([Q0, M]) whose first cols(Q0) columns span Range(Q0). Directions of M whose
/// component outside Range(Q0) is below `abs_tol` are not added.
inline OrthonormalBasis augment_basis(const OrthonormalBasis& q0, const Matrix& m, double abs_tol) {
  if (q0.empty()) return orth(m, abs_tol);
  if (m.cols() == 0) return q0;
  const Matrix& q = q0.matrix();
  Matrix residual = m - q * (q.transpose() * m);
  residual -= q * (q.transpose() * residual);
  Matrix selected = detail::revealed_columns(residual, abs_tol);
  if (selected.cols() == 0) return q0;
  Matrix stacked(q.rows(), q.cols() + selected.cols());
  stacked << q, selected;
  return OrthonormalBasis(detail::householder_basis(stacked));
}

inline OrthonormalBasis augment_basis(const OrthonormalBasis& q0, const Matrix& m) {
  const double scale = spectral_norm(m);
  if (scale == 0.0) return q0;
  return augment_basis(q0, m, kRankRevealTolerance * scale);
}

inline SvdResult svd(const Matrix& m) {
  SvdResult out;
  if (m.size() == 0) {
    out.u = Matrix(m.rows(), 0);
    out.v = Matrix(m.cols(), 0);
    out.sigma = Vector(0);
    return out;
  }
  Eigen::BDCSVD<Matrix> dec(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  out.u = dec.matrixU();
  out.sigma = dec.singularValues();
  out.v = dec.matrixV();
  return out;
}

/// SVD of a factored matrix through its small core.
inline SvdResult svd(const FactoredMatrix& y) {
  SvdResult core = svd(y.s);
  return {y.u * core.u, core.sigma, y.v * core.v};
}

/// SVD of the product L R^T (L m x k, R n x k) without forming it.
inline SvdResult svd_of_product(const Matrix& left, const Matrix& right) {
  auto [q1, r1] = thin_qr(left);
  auto [q2, r2] = thin_qr(right);
  SvdResult core = svd(Matrix(r1 * r2.transpose()));
  return {q1 * core.u, core.sigma, q2 * core.v};
}

inline FactoredMatrix leading_triplets(const SvdResult& x, Index k) {
  return {x.u.leftCols(k), Matrix(x.sigma.head(k).asDiagonal()), x.v.leftCols(k)};
}

/// Best rank-r approximation of an SVD. Exactly zero singular values are never kept,
/// so a request above the available rank returns the input unchanged.
inline FactoredMatrix truncate_rank(const SvdResult& x, Index r) {
  Index k = 0;
  while (k < std::min(r, x.size()) && x.sigma(k) > 0.0) ++k;
  return leading_triplets(x, k);
}

inline FactoredMatrix truncate_rank(const FactoredMatrix& y, Index r) {
  return truncate_rank(svd(y), r);
}

/// Smallest-rank truncation with spectral error <= tau: keeps exactly the sigma_i > tau.
inline FactoredMatrix truncate_tol(const SvdResult& x, double tau) {
  Index k = 0;
  while (k < x.size() && x.sigma(k) > tau) ++k;
  return leading_triplets(x, k);
}

inline FactoredMatrix truncate_tol(const FactoredMatrix& y, double tau) {
  return truncate_tol(svd(y), tau);
}

/// Factorization of a dense matrix at its numerical rank
/// (singular values above max(m, n) * eps * sigma_1).
inline FactoredMatrix factor(const Matrix& m) {
  const SvdResult s = svd(m);
  if (s.size() == 0) return leading_triplets(s, 0);
  const double floor = static_cast<double>(std::max(m.rows(), m.cols())) *
                       std::numeric_limits<double>::epsilon() * s.sigma(0);
  return truncate_tol(s, floor);
}

/// n x s Gaussian sketch keyed by `seed`. A numerically singular Gram matrix
/// (probability ~0) is handled by regenerating with seed + 1.
inline SketchOperator gaussian_sketch(Index n, Index s, std::uint64_t seed) {
  if (s > n) throw std::invalid_argument("gaussian_sketch: s must not exceed n");
  SketchOperator out;
  for (int attempt = 0; attempt < 16; ++attempt) {
    const std::uint64_t key = seed + static_cast<std::uint64_t>(attempt);
    Matrix omega = CounterRng(key).gaussian(n, s);
    Eigen::LLT<Matrix> gram(omega.transpose() * omega);
    if (gram.info() == Eigen::Success) {
      Matrix pinv = gram.solve(Matrix(omega.transpose()));
      const double defect =
          (pinv * omega - Matrix::Identity(s, s)).cwiseAbs().maxCoeff();
      if (s == 0 || defect <= 1e-10) {
        out.omega = std::move(omega);
        out.pinv = std::move(pinv);
        out.seed = key;
        out.reseeds = attempt;
        return out;
      }
    }
  }
  throw NumericalError("gaussian_sketch: repeated singular Gram matrices");
}

}  // namespace rdlr
