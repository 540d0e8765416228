#pragma once

// Vector fields F: R^{m x n} -> R^{m x n} with the sketched entry points the
// low-rank steppers use:
//
//   sketch_right(B, R, P) = F(B R^T) P          (requires R^T P = I)
//   sketch_left(C, Q)     = F(Q C^T)^T Q
//   sketch_both(D, Q, W)  = Q^T F(Q D W^T) W
//
// SplitLinearField handles F(X) = A1 X + X A2^T + G(X) and evaluates the
// linear part of every sketch on the small factors.

#include "rdlr/linalg.hpp"
#include "rdlr/odes.hpp"

#include <Eigen/Sparse>

#include <memory>
#include <optional>
#include <string>
#include <utility>

namespace rdlr {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Square operator stored sparse; symmetric operators carry an eigendecomposition.
class LinearOperator {
 public:
  LinearOperator() = default;

  static LinearOperator zero(Index n) {
    SparseMatrix s(n, n);
    return LinearOperator(std::move(s), false, /*is_zero=*/true);
  }

  /// `symmetric` requests (and checks) symmetry and computes the eigendecomposition.
  static LinearOperator sparse(SparseMatrix a, bool symmetric) {
    a.makeCompressed();
    return LinearOperator(std::move(a), symmetric, false);
  }

  static LinearOperator dense(const Matrix& a, bool symmetric) {
    return sparse(a.sparseView(), symmetric);
  }

  Index size() const noexcept { return data_ ? data_->a.rows() : 0; }
  bool is_zero() const noexcept { return !data_ || data_->zero; }
  bool symmetric() const noexcept { return data_ && data_->eigen != nullptr; }
  const SparseMatrix& matrix() const { return data_->a; }
  const std::shared_ptr<const SymmetricEigen>& eigen() const { return data_->eigen; }
  Matrix to_dense() const { return Matrix(data_->a); }

  /// A x
  Matrix apply(const Matrix& x) const {
    if (is_zero()) return Matrix::Zero(size(), x.cols());
    return data_->a * x;
  }
  /// A^T x
  Matrix apply_transpose(const Matrix& x) const {
    if (is_zero()) return Matrix::Zero(size(), x.cols());
    return data_->a.transpose() * x;
  }
  /// Q^T A W
  Matrix compress(const Matrix& q, const Matrix& w) const {
    if (is_zero()) return Matrix::Zero(q.cols(), w.cols());
    return q.transpose() * (data_->a * w);
  }

 private:
  struct Data {
    SparseMatrix a;
    std::shared_ptr<const SymmetricEigen> eigen;
    bool zero = false;
  };

  LinearOperator(SparseMatrix a, bool symmetric, bool is_zero) {
    auto d = std::make_shared<Data>();
    if (a.rows() != a.cols()) throw std::invalid_argument("LinearOperator must be square");
    if (symmetric) {
      const double asym = (a - SparseMatrix(a.transpose())).norm();
      if (asym > 1e-12 * std::max(a.norm(), 1.0))
        throw std::invalid_argument("LinearOperator: matrix is not symmetric");
      d->eigen = symmetric_eigen(Matrix(a));
    }
    d->a = std::move(a);
    d->zero = is_zero;
    data_ = std::move(d);
  }

  std::shared_ptr<const Data> data_;
};

/// G(X). A constant nonlinearity ignores its argument; it is evaluated once.
struct Nonlinearity {
  MatrixMap fn;
  std::optional<Matrix> constant;

  static Nonlinearity none() { return {}; }
  static Nonlinearity source(Matrix c) {
    Nonlinearity g;
    g.constant = std::move(c);
    return g;
  }
  static Nonlinearity of(MatrixMap f) {
    Nonlinearity g;
    g.fn = std::move(f);
    return g;
  }

  bool empty() const { return !fn && !constant; }
  bool is_constant() const { return constant.has_value(); }

  Matrix operator()(const Matrix& x) const {
    if (constant) return *constant;
    if (fn) return fn(x);
    return Matrix::Zero(x.rows(), x.cols());
  }

  /// X -> G(X^T)^T
  Nonlinearity transposed() const {
    Nonlinearity g;
    if (constant) g.constant = Matrix(constant->transpose());
    if (fn) g.fn = [f = fn](const Matrix& x) -> Matrix { return f(x.transpose()).transpose(); };
    return g;
  }
};

class VectorField;
using FieldPtr = std::shared_ptr<const VectorField>;

class VectorField : public std::enable_shared_from_this<VectorField> {
 public:
  virtual ~VectorField() = default;

  virtual Index rows() const = 0;
  virtual Index cols() const = 0;
  virtual Matrix eval(const Matrix& x) const = 0;

  virtual Matrix eval(const FactoredMatrix& y) const { return eval(y.reconstruct()); }

  /// F(B R^T) P; implementations may assume R^T P = I.
  virtual Matrix sketch_right(const Matrix& b, const Matrix& r, const Matrix& p) const {
    return eval(Matrix(b * r.transpose())) * p;
  }

  /// Q^T F(Q D W^T) W
  virtual Matrix sketch_both(const Matrix& d, const Matrix& q, const Matrix& w) const {
    return q.transpose() * eval(Matrix(q * d * w.transpose())) * w;
  }

  /// X -> F(X^T)^T
  virtual FieldPtr transposed() const;

  /// Sylvester form of B' = sketch_right(B, R, P), if the field has one.
  virtual std::optional<SylvesterStructure> right_structure(const Matrix&, const Matrix&) const {
    return std::nullopt;
  }
  virtual std::optional<SylvesterStructure> both_structure(const Matrix&, const Matrix&) const {
    return std::nullopt;
  }
  virtual std::optional<SylvesterStructure> full_structure() const { return std::nullopt; }

  /// Stiff fields default to exponential substeps.
  virtual bool stiff() const { return false; }
  virtual std::string name() const { return "field"; }
};

class TransposedField final : public VectorField {
 public:
  explicit TransposedField(FieldPtr inner) : inner_(std::move(inner)) {}

  Index rows() const override { return inner_->cols(); }
  Index cols() const override { return inner_->rows(); }
  Matrix eval(const Matrix& x) const override {
    return inner_->eval(Matrix(x.transpose())).transpose();
  }
  Matrix eval(const FactoredMatrix& y) const override {
    return inner_->eval(y.transposed()).transpose();
  }
  Matrix sketch_both(const Matrix& d, const Matrix& q, const Matrix& w) const override {
    return inner_->sketch_both(Matrix(d.transpose()), w, q).transpose();
  }
  FieldPtr transposed() const override { return inner_; }
  bool stiff() const override { return inner_->stiff(); }
  std::string name() const override { return inner_->name() + "^T"; }

 private:
  FieldPtr inner_;
};

inline FieldPtr VectorField::transposed() const {
  return std::make_shared<TransposedField>(shared_from_this());
}

/// F(X) = A1 X + X A2^T + G(X)
class SplitLinearField final : public VectorField {
 public:
  SplitLinearField(LinearOperator a1, LinearOperator a2, Nonlinearity g, bool stiff = false,
                   std::string name = "split_linear")
      : a1_(std::move(a1)), a2_(std::move(a2)), g_(std::move(g)), stiff_(stiff),
        name_(std::move(name)) {}

  const LinearOperator& left() const { return a1_; }
  const LinearOperator& right() const { return a2_; }
  const Nonlinearity& nonlinearity() const { return g_; }

  Index rows() const override { return a1_.size(); }
  Index cols() const override { return a2_.size(); }

  Matrix eval(const Matrix& x) const override {
    Matrix out = a1_.apply(x);
    if (!a2_.is_zero()) out += a2_.apply(Matrix(x.transpose())).transpose();
    if (!g_.empty()) out += g_(x);
    return out;
  }

  Matrix sketch_right(const Matrix& b, const Matrix& r, const Matrix& p) const override {
    Matrix out = a1_.apply(b);
    if (!a2_.is_zero()) out += b * right_core(r, p);
    if (g_.is_constant()) out += *g_.constant * p;
    else if (!g_.empty()) out += g_(Matrix(b * r.transpose())) * p;
    return out;
  }

  Matrix sketch_both(const Matrix& d, const Matrix& q, const Matrix& w) const override {
    Matrix out = a1_.compress(q, q) * d;
    if (!a2_.is_zero()) out += d * a2_.compress(w, w).transpose();
    if (g_.is_constant()) out += q.transpose() * (*g_.constant * w);
    else if (!g_.empty()) out += q.transpose() * g_(Matrix(q * d * w.transpose())) * w;
    return out;
  }

  FieldPtr transposed() const override {
    return std::make_shared<SplitLinearField>(a2_, a1_, g_.transposed(), stiff_, name_ + "^T");
  }

  std::optional<SylvesterStructure> right_structure(const Matrix& r,
                                                    const Matrix& p) const override {
    if (!a1_.symmetric()) return std::nullopt;
    SylvesterStructure s;
    s.left = a1_.eigen();
    s.right = a2_.is_zero() ? Matrix::Zero(p.cols(), p.cols()) : right_core(r, p);
    if (g_.is_constant()) {
      s.nonlinear = [c = Matrix(*g_.constant * p)](const Matrix&) -> Matrix { return c; };
      s.constant_nonlinear = true;
    } else if (!g_.empty()) {
      s.nonlinear = [g = g_, r, p](const Matrix& b) -> Matrix {
        return g(Matrix(b * r.transpose())) * p;
      };
    }
    return s;
  }

  std::optional<SylvesterStructure> both_structure(const Matrix& q,
                                                   const Matrix& w) const override {
    if (!a1_.symmetric()) return std::nullopt;
    SylvesterStructure s;
    const Matrix left = a1_.compress(q, q);
    s.left = symmetric_eigen(0.5 * (left + left.transpose()));
    s.right = a2_.is_zero() ? Matrix::Zero(w.cols(), w.cols())
                            : Matrix(a2_.compress(w, w).transpose());
    if (g_.is_constant()) {
      s.nonlinear = [c = Matrix(q.transpose() * (*g_.constant * w))](const Matrix&) -> Matrix {
        return c;
      };
      s.constant_nonlinear = true;
    } else if (!g_.empty()) {
      s.nonlinear = [g = g_, q, w](const Matrix& d) -> Matrix {
        return q.transpose() * g(Matrix(q * d * w.transpose())) * w;
      };
    }
    return s;
  }

  std::optional<SylvesterStructure> full_structure() const override {
    if (!a1_.symmetric()) return std::nullopt;
    SylvesterStructure s;
    s.left = a1_.eigen();
    s.right = a2_.is_zero() ? Matrix::Zero(cols(), cols()) : Matrix(a2_.to_dense().transpose());
    if (g_.is_constant()) {
      s.nonlinear = [c = *g_.constant](const Matrix&) -> Matrix { return c; };
      s.constant_nonlinear = true;
    } else if (!g_.empty()) {
      s.nonlinear = g_.fn;
    }
    return s;
  }

  bool stiff() const override { return stiff_; }
  std::string name() const override { return name_; }

 private:
  // (A2 R)^T P
  Matrix right_core(const Matrix& r, const Matrix& p) const {
    return a2_.apply(r).transpose() * p;
  }

  LinearOperator a1_, a2_;
  Nonlinearity g_;
  bool stiff_;
  std::string name_;
};

inline Matrix eval_full(const FieldPtr& f, const Matrix& x) { return f->eval(x); }
inline Matrix eval_full(const FieldPtr& f, const FactoredMatrix& y) { return f->eval(y); }

inline Matrix sketch_right(const FieldPtr& f, const Matrix& b, const Matrix& r, const Matrix& p) {
  return f->sketch_right(b, r, p);
}
inline Matrix sketch_right(const FieldPtr& f, const Matrix& b, const SketchOperator& s) {
  return f->sketch_right(b, Matrix(s.pinv.transpose()), s.omega);
}
/// F(Q C^T)^T Q
inline Matrix sketch_left(const FieldPtr& f, const Matrix& c, const Matrix& q) {
  return f->transposed()->sketch_right(c, q, q);
}
inline Matrix sketch_both(const FieldPtr& f, const Matrix& d, const Matrix& q, const Matrix& w) {
  return f->sketch_both(d, q, w);
}
inline FieldPtr transpose_field(const FieldPtr& f) { return f->transposed(); }

}  // namespace rdlr
