#pragma once

// Concrete matrix ODEs: closed-form toy flow, Lyapunov (heat with source),
// Allen-Cahn, stochastic Burgers and Vlasov-Poisson (Landau damping and the
// two-stream instability). Each comes with its initial value, reference
// solver and observables.

#include "rdlr/errors.hpp"
#include "rdlr/fields.hpp"
#include "rdlr/linalg.hpp"
#include "rdlr/odes.hpp"
#include "rdlr/rng.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace rdlr {

using Observable = std::function<double(const Matrix&)>;

struct Problem {
  std::string name;
  FieldPtr field;
  Matrix initial;
  double horizon = 0.0;
  SolverSpec reference_solver;
  SolverSpec substep_solver;
  /// Exact solution, when one is known.
  std::function<Matrix(double)> closed_form;
  std::map<std::string, Observable> observables;
  /// Fixed-rank baselines start from the dense solution at this time
  /// (their tangent-space assumptions fail at a rough initial value).
  double baseline_warmup = 0.0;
};

/// Uniform 1-D grid. Dirichlet grids include both endpoints; periodic grids omit the right one.
struct GridSpec1D {
  enum class Boundary { dirichlet, periodic };
  double left = 0.0, right = 1.0;
  Index n = 3;
  Boundary boundary = Boundary::dirichlet;

  double spacing() const {
    const double len = right - left;
    return boundary == Boundary::dirichlet ? len / static_cast<double>(n - 1)
                                           : len / static_cast<double>(n);
  }
  Vector points() const {
    Vector x(n);
    for (Index i = 0; i < n; ++i) x(i) = left + spacing() * static_cast<double>(i);
    return x;
  }
  void validate() const {
    if (n < 3) throw ConfigError("grid needs at least 3 points");
    if (!(right > left)) throw ConfigError("grid endpoints out of order");
  }
};

namespace grid {

inline SparseMatrix tridiagonal(Index n, double lower, double diag, double upper, bool periodic) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(3 * n);
  for (Index i = 0; i < n; ++i) {
    if (diag != 0.0) t.emplace_back(i, i, diag);
    if (i > 0) t.emplace_back(i, i - 1, lower);
    else if (periodic) t.emplace_back(i, n - 1, lower);
    if (i + 1 < n) t.emplace_back(i, i + 1, upper);
    else if (periodic) t.emplace_back(i, 0, upper);
  }
  SparseMatrix a(n, n);
  a.setFromTriplets(t.begin(), t.end());
  return a;
}

/// scale * tridiag(1, -2, 1), zero Dirichlet data outside the grid.
inline SparseMatrix dirichlet_laplacian(Index n, double scale) {
  return tridiagonal(n, scale, -2.0 * scale, scale, false);
}

inline SparseMatrix periodic_laplacian(Index n, double scale) {
  return tridiagonal(n, scale, -2.0 * scale, scale, true);
}

/// Fourth-order centered first derivative on a periodic grid with spacing dx.
inline SparseMatrix periodic_derivative4(Index n, double dx) {
  std::vector<Eigen::Triplet<double>> t;
  const double c1 = 8.0 / (12.0 * dx), c2 = 1.0 / (12.0 * dx);
  auto wrap = [n](Index i) { return ((i % n) + n) % n; };
  for (Index i = 0; i < n; ++i) {
    t.emplace_back(i, wrap(i + 1), c1);
    t.emplace_back(i, wrap(i - 1), -c1);
    t.emplace_back(i, wrap(i + 2), -c2);
    t.emplace_back(i, wrap(i - 2), c2);
  }
  SparseMatrix a(n, n);
  a.setFromTriplets(t.begin(), t.end());
  return a;
}

/// Second-order centered first derivative on a periodic grid.
inline SparseMatrix periodic_derivative2(Index n, double dx) {
  return tridiagonal(n, -0.5 / dx, 0.0, 0.5 / dx, true);
}

inline Vector periodic_points(Index n, double a, double b) {
  return GridSpec1D{a, b, n, GridSpec1D::Boundary::periodic}.points();
}

inline Vector closed_points(Index n, double a, double b) {
  return GridSpec1D{a, b, n, GridSpec1D::Boundary::dirichlet}.points();
}

}  // namespace grid

// ---------------------------------------------------------------------------
// Toy flow  X' = W1 X + X + X W2^T,  X(t) = e^{tW1} e^t D e^{tW2^T}

struct ToyOptions {
  Index n = 100;
  std::uint64_t seed = 1;
  Index keep = -1;  ///< number of nonzero entries of D (-1: all)
  double horizon = 0.1;
};

inline Matrix antisymmetric_gaussian(Index n, std::uint64_t key) {
  const Matrix g = CounterRng(key).gaussian(n, n);
  return 0.5 * (g - g.transpose());
}

inline Problem make_toy(const ToyOptions& o = {}) {
  const Matrix w1 = antisymmetric_gaussian(o.n, derive_seed(o.seed, {1}));
  const Matrix w2 = antisymmetric_gaussian(o.n, derive_seed(o.seed, {2}));
  Matrix d = Matrix::Zero(o.n, o.n);
  const Index k = o.keep < 0 ? o.n : std::min(o.keep, o.n);
  for (Index i = 0; i < k; ++i) d(i, i) = std::ldexp(1.0, -static_cast<int>(i + 1));

  Problem p;
  p.name = "toy";
  p.field = std::make_shared<SplitLinearField>(
      LinearOperator::dense(w1 + Matrix::Identity(o.n, o.n), false),
      LinearOperator::dense(w2, false), Nonlinearity::none(), false, "toy");
  p.initial = d;
  p.horizon = o.horizon;
  p.reference_solver = SolverSpec::adaptive(1e-12, 1e-12);
  p.substep_solver = SolverSpec::adaptive(1e-12, 1e-12);
  p.closed_form = [w1, w2, d](double t) -> Matrix {
    const Matrix e1 = (t * w1).exp();
    const Matrix e2 = (t * Matrix(w2.transpose())).exp();
    return std::exp(t) * e1 * d * e2;
  };
  return p;
}

// ---------------------------------------------------------------------------
// Lyapunov  A' = L A + A L + alpha C / ||C||_F,  L = (n-1)^2 tridiag(1,-2,1)

struct LyapunovOptions {
  Index n = 256;
  double alpha = 1.0;
  std::uint64_t seed = 7;
  bool symmetric = false;  ///< symmetric initial value and source
  double horizon = 0.1;
  /// Source directions mix the lowest `source_modes` Dirichlet sine modes with
  /// weights source_decay^j; rough directions would make A(t) full rank.
  Index source_modes = 8;
  double source_decay = 0.2;
};

namespace detail {

inline Matrix unit_columns(Index n, Index k, std::uint64_t key) {
  Matrix g = CounterRng(key).gaussian(n, k);
  g.colwise().normalize();
  return g;
}

// sum_k weight(k) x_k y_k^T with seeded unit Gaussian directions.
inline Matrix seeded_low_rank(Index n, Index rank, double ratio, std::uint64_t key, bool symmetric) {
  const Matrix x = unit_columns(n, rank, derive_seed(key, {1}));
  const Matrix y = symmetric ? x : unit_columns(n, rank, derive_seed(key, {2}));
  Vector w(rank);
  for (Index k = 0; k < rank; ++k) w(k) = std::pow(ratio, static_cast<double>(k + 1));
  return x * w.asDiagonal() * y.transpose();
}

// Unit columns sum_j decay^j g_jk sin((j+1) pi (i+1) / (n+1)) with Gaussian g.
inline Matrix smooth_unit_columns(Index n, Index k, Index modes, double decay, std::uint64_t key) {
  Matrix phi(n, modes);
  for (Index j = 0; j < modes; ++j)
    for (Index i = 0; i < n; ++i)
      phi(i, j) = std::sin(static_cast<double>((j + 1) * (i + 1)) * std::numbers::pi /
                           static_cast<double>(n + 1));
  Matrix g = CounterRng(key).gaussian(modes, k);
  for (Index j = 0; j < modes; ++j) g.row(j) *= std::pow(decay, static_cast<double>(j));
  Matrix x = phi * g;
  x.colwise().normalize();
  return x;
}

inline Matrix smooth_low_rank(Index n, Index rank, double ratio, Index modes, double decay,
                              std::uint64_t key, bool symmetric) {
  const Matrix x = smooth_unit_columns(n, rank, modes, decay, derive_seed(key, {1}));
  const Matrix y = symmetric ? x : smooth_unit_columns(n, rank, modes, decay, derive_seed(key, {2}));
  Vector w(rank);
  for (Index k = 0; k < rank; ++k) w(k) = std::pow(ratio, static_cast<double>(k + 1));
  return x * w.asDiagonal() * y.transpose();
}

}  // namespace detail

inline Problem make_lyapunov(const LyapunovOptions& o = {}) {
  const double scale = static_cast<double>((o.n - 1) * (o.n - 1));
  const auto l = LinearOperator::sparse(grid::dirichlet_laplacian(o.n, scale), true);
  const Matrix a0 = detail::seeded_low_rank(o.n, 10, 0.25, derive_seed(o.seed, {1}), o.symmetric);
  if (o.source_modes < 1 || o.source_modes > o.n)
    throw ConfigError("lyapunov: source_modes must lie in [1, n]");
  if (!(o.source_decay > 0.0)) throw ConfigError("lyapunov: source_decay must be positive");
  const Matrix c = detail::smooth_low_rank(o.n, 5, 0.5, o.source_modes, o.source_decay,
                                           derive_seed(o.seed, {2}), o.symmetric);
  const Matrix source = o.alpha * c / c.norm();

  Problem p;
  p.name = "lyapunov";
  p.field = std::make_shared<SplitLinearField>(l, l, Nonlinearity::source(source), true, "lyapunov");
  p.initial = a0;
  p.horizon = o.horizon;
  p.reference_solver = SolverSpec::exponential(1e-4);
  p.substep_solver = SolverSpec::exponential(1e-4);
  p.baseline_warmup = 1e-4;
  const Matrix ld = l.to_dense();
  p.observables["steady_residual"] = [ld, source](const Matrix& a) {
    return (ld * a + a * ld + source).norm();
  };
  return p;
}

// ---------------------------------------------------------------------------
// Allen-Cahn  X' = A X + X A + X - X.^3  on [0, 2pi]^2, periodic

struct AllenCahnOptions {
  Index n = 128;
  double epsilon = 0.01;
  double horizon = 10.0;
  double dt = 0.005;  ///< internal step of the exponential integrator
};

/// 2 e^{-tan^2 x} sin x sin y / (1 + e^{|csc(-x/2)|} + e^{|csc(-y/2)|}),
/// with the limiting value 0 where tan or csc is singular.
inline double allen_cahn_initial_value(double x, double y) {
  auto csc_term = [](double s) {
    const double sn = std::sin(-s / 2.0);
    if (std::abs(sn) < 1e-300) return std::numeric_limits<double>::infinity();
    return std::exp(std::abs(1.0 / sn));
  };
  const double c = std::cos(x);
  double numerator = 0.0;
  if (std::abs(c) > 1e-12) {
    const double tn = std::sin(x) / c;
    numerator = 2.0 * std::exp(-tn * tn) * std::sin(x) * std::sin(y);
  }
  const double denominator = 1.0 + csc_term(x) + csc_term(y);
  if (!std::isfinite(denominator)) return 0.0;
  const double v = numerator / denominator;
  return std::isfinite(v) ? v : 0.0;
}

inline Problem make_allen_cahn(const AllenCahnOptions& o = {}) {
  const double dx = 2.0 * std::numbers::pi / static_cast<double>(o.n);
  const auto a = LinearOperator::sparse(grid::periodic_laplacian(o.n, o.epsilon / (dx * dx)), true);
  const Vector x = grid::periodic_points(o.n, 0.0, 2.0 * std::numbers::pi);
  Matrix f0(o.n, o.n);
  for (Index j = 0; j < o.n; ++j)
    for (Index i = 0; i < o.n; ++i) f0(i, j) = allen_cahn_initial_value(x(i), x(j));

  Problem p;
  p.name = "allen_cahn";
  p.field = std::make_shared<SplitLinearField>(
      a, a,
      Nonlinearity::of([](const Matrix& f) -> Matrix { return f - f.array().cube().matrix(); }),
      true, "allen_cahn");
  p.initial = f0;
  p.horizon = o.horizon;
  p.reference_solver = SolverSpec::exponential(o.dt);
  p.substep_solver = SolverSpec::exponential(o.dt);
  // Forward differences: with A = -eps D^T D this energy decreases along exact solutions.
  const SparseMatrix d = grid::tridiagonal(o.n, 0.0, -1.0 / dx, 1.0 / dx, true);
  p.observables["free_energy"] = [d, eps = o.epsilon, dx](const Matrix& f) {
    const Matrix fx = d * f, fy = f * Matrix(d.transpose());
    const double grad = 0.5 * eps * (fx.squaredNorm() + fy.squaredNorm());
    const double pot = 0.25 * (1.0 - f.array().square()).square().sum();
    return (grad + pot) * dx * dx;
  };
  return p;
}

// ---------------------------------------------------------------------------
// Stochastic Burgers  A' = nu L A - A .* (D A), columns are samples

struct BurgersOptions {
  Index n = 256;
  Index samples = 64;
  double nu = 0.01;
  double sigma_x = 0.001;
  Index modes = 4;
  std::uint64_t seed = 11;
  double horizon = 0.2;
};

inline Problem make_burgers(const BurgersOptions& o = {}) {
  const double h = 1.0 / static_cast<double>(o.n - 1);
  const Vector x = grid::closed_points(o.n, 0.0, 1.0);
  const auto l = LinearOperator::sparse(grid::dirichlet_laplacian(o.n, o.nu / (h * h)), true);
  const SparseMatrix d = grid::tridiagonal(o.n, -0.5 / h, 0.0, 0.5 / h, false);

  Matrix kernel(o.n, o.n);
  for (Index j = 0; j < o.n; ++j)
    for (Index i = 0; i < o.n; ++i) kernel(i, j) = std::exp(-0.5 * std::pow(x(i) - x(j), 2));
  Eigen::SelfAdjointEigenSolver<Matrix> es(kernel);
  const Index modes = std::min(o.modes, o.n);
  // Largest eigenpairs sit at the end of the ascending spectrum.
  const Vector lambda = es.eigenvalues().tail(modes).reverse().cwiseMax(0.0);
  const Matrix psi = es.eigenvectors().rightCols(modes).rowwise().reverse();
  const Matrix xi = CounterRng(derive_seed(o.seed, {1})).gaussian(modes, o.samples);

  Vector mean(o.n);
  for (Index i = 0; i < o.n; ++i) {
    const double s = 2.0 * std::numbers::pi * x(i);
    mean(i) = 0.5 * std::sin(s) * (std::exp(std::cos(s)) - 1.5);
  }
  Matrix a0 = mean * Vector::Ones(o.samples).transpose();
  if (modes > 0) a0 += o.sigma_x * psi * lambda.cwiseSqrt().asDiagonal() * xi;

  Problem p;
  p.name = "burgers";
  p.field = std::make_shared<SplitLinearField>(
      l, LinearOperator::zero(o.samples),
      Nonlinearity::of([d](const Matrix& a) -> Matrix { return -a.cwiseProduct(d * a); }), false,
      "burgers");
  p.initial = a0;
  p.horizon = o.horizon;
  p.reference_solver = SolverSpec::adaptive(1e-12, 1e-12);
  p.substep_solver = SolverSpec::adaptive(1e-12, 1e-12);
  p.observables["sup_norm"] = [](const Matrix& a) { return a.cwiseAbs().maxCoeff(); };
  return p;
}

// ---------------------------------------------------------------------------
// Vlasov-Poisson  f' = -D_x f V + diag(E) f D_v^T,  E' = 1 - int f dv (zero mean)

struct VlasovOptions {
  enum class Case { landau, two_stream };
  Case kind = Case::landau;
  Index nx = 64;
  Index nv = 256;
  double length = 4.0 * std::numbers::pi;
  double vmax = 6.0;
  double alpha = 1e-2;
  double wavenumber = 0.5;
  double drift = 2.4;  ///< two-stream beam velocity
  double horizon = 40.0;
  int order = 4;  ///< finite-difference order (2 or 4)
  double tolerance = 1e-8;

  static VlasovOptions landau() { return {}; }
  static VlasovOptions two_stream() {
    VlasovOptions o;
    o.kind = Case::two_stream;
    o.nx = 128;
    o.nv = 128;
    o.length = 10.0 * std::numbers::pi;
    o.alpha = 1e-3;
    o.wavenumber = 0.2;
    o.horizon = 60.0;
    return o;
  }
};

/// Discrete Vlasov-Poisson field on an (x, v) grid; rows are x, columns v.
class VlasovField final : public VectorField {
 public:
  struct Grid {
    Index nx, nv;
    double dx, dv;
    Vector x, v;
    SparseMatrix dmat_x, dmat_v;
    Matrix poisson;       ///< rho -> E, zero-mean spectral solve of E' = rho
    double background;    ///< ion density
  };

  explicit VlasovField(std::shared_ptr<const Grid> g, bool transposed = false)
      : g_(std::move(g)), transposed_(transposed) {}

  const Grid& grid() const { return *g_; }

  Index rows() const override { return transposed_ ? g_->nv : g_->nx; }
  Index cols() const override { return transposed_ ? g_->nx : g_->nv; }

  /// Charge density 1 - int f dv from the velocity moment f 1.
  Vector charge(const Vector& moment) const {
    return Vector::Constant(g_->nx, g_->background) - g_->dv * moment;
  }
  Vector electric_field_from_moment(const Vector& moment) const {
    return g_->poisson * charge(moment);
  }
  Vector electric_field(const Matrix& f) const {
    return electric_field_from_moment(f * Vector::Ones(f.cols()));
  }
  double electric_energy(const Matrix& f) const {
    return 0.5 * electric_field(f).squaredNorm() * g_->dx;
  }
  double mass(const Matrix& f) const { return f.sum() * g_->dx * g_->dv; }

  /// Throws GaugeError if the total charge exceeds `tol` (relative to the background mass).
  void check_gauge(const Matrix& f, double tol) const {
    const double total = charge(f * Vector::Ones(f.cols())).sum() * g_->dx;
    const double scale = g_->background * g_->dx * static_cast<double>(g_->nx);
    if (std::abs(total) > tol * scale)
      throw GaugeError("vlasov: total charge " + std::to_string(total) + " is not neutral");
  }

  Matrix eval(const Matrix& z) const override {
    if (transposed_) return apply(Matrix(z.transpose())).transpose();
    return apply(z);
  }

  Matrix sketch_right(const Matrix& b, const Matrix& r, const Matrix& p) const override {
    const auto& g = *g_;
    if (!transposed_) {
      // X = B R^T with B nx x k, R nv x k.
      const Vector moment = b * (r.transpose() * Vector::Ones(g.nv));
      const Vector e = electric_field_from_moment(moment);
      const Matrix rvp = r.transpose() * g.v.asDiagonal() * p;
      const Matrix rdp = (g.dmat_v * r).transpose() * p;
      return -(g.dmat_x * (b * rvp)) + e.asDiagonal() * (b * rdp);
    }
    // Z = C R^T is nv x nx; F^T(Z) = -V Z D_x^T + D_v Z diag(E), E from X = R C^T.
    const Vector moment = r * (b.transpose() * Vector::Ones(g.nv));
    const Vector e = electric_field_from_moment(moment);
    const Matrix rdp = (g.dmat_x * r).transpose() * p;
    const Matrix rep = r.transpose() * e.asDiagonal() * p;
    return -(g.v.asDiagonal() * (b * rdp)) + g.dmat_v * (b * rep);
  }

  Matrix sketch_both(const Matrix& d, const Matrix& q, const Matrix& w) const override {
    if (transposed_)
      return VlasovField(g_, false).sketch_both(Matrix(d.transpose()), w, q).transpose();
    const auto& g = *g_;
    const Vector moment = q * (d * (w.transpose() * Vector::Ones(g.nv)));
    const Vector e = electric_field_from_moment(moment);
    const Matrix qdq = q.transpose() * (g.dmat_x * q);
    const Matrix wvw = w.transpose() * g.v.asDiagonal() * w;
    const Matrix qeq = q.transpose() * e.asDiagonal() * q;
    const Matrix wdw = (g.dmat_v * w).transpose() * w;
    return -qdq * d * wvw + qeq * d * wdw;
  }

  FieldPtr transposed() const override { return std::make_shared<VlasovField>(g_, !transposed_); }
  std::string name() const override { return transposed_ ? "vlasov^T" : "vlasov"; }

 private:
  Matrix apply(const Matrix& f) const {
    const auto& g = *g_;
    const Vector e = electric_field(f);
    return -(g.dmat_x * f) * g.v.asDiagonal() + e.asDiagonal() * (f * Matrix(g.dmat_v.transpose()));
  }

  std::shared_ptr<const Grid> g_;
  bool transposed_;
};

inline Problem make_vlasov(const VlasovOptions& o = VlasovOptions::landau()) {
  auto g = std::make_shared<VlasovField::Grid>();
  g->nx = o.nx;
  g->nv = o.nv;
  g->x = grid::periodic_points(o.nx, 0.0, o.length);
  g->v = grid::periodic_points(o.nv, -o.vmax, o.vmax);
  g->dx = o.length / static_cast<double>(o.nx);
  g->dv = 2.0 * o.vmax / static_cast<double>(o.nv);
  if (o.order == 2) {
    g->dmat_x = grid::periodic_derivative2(o.nx, g->dx);
    g->dmat_v = grid::periodic_derivative2(o.nv, g->dv);
  } else {
    g->dmat_x = grid::periodic_derivative4(o.nx, g->dx);
    g->dmat_v = grid::periodic_derivative4(o.nv, g->dv);
  }
  // E_i = sum_j G_ij rho_j with G_ij = (1/n) sum_k 2 sin(kappa_k (x_i - x_j)) / kappa_k
  // over 1 <= k < n/2 (the mean and Nyquist modes are dropped).
  g->poisson = Matrix::Zero(o.nx, o.nx);
  for (Index k = 1; 2 * k < o.nx; ++k) {
    const double kappa = 2.0 * std::numbers::pi * static_cast<double>(k) / o.length;
    for (Index j = 0; j < o.nx; ++j)
      for (Index i = 0; i < o.nx; ++i)
        g->poisson(i, j) += 2.0 * std::sin(kappa * (g->x(i) - g->x(j))) / kappa;
  }
  g->poisson /= static_cast<double>(o.nx);

  Matrix f0(o.nx, o.nv);
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  for (Index j = 0; j < o.nv; ++j) {
    const double v = g->v(j);
    double profile;
    if (o.kind == VlasovOptions::Case::landau) {
      profile = inv_sqrt_2pi * std::exp(-0.5 * v * v);
    } else {
      profile = 0.5 * inv_sqrt_2pi *
                (std::exp(-(v - o.drift) * (v - o.drift)) + std::exp(-(v + o.drift) * (v + o.drift)));
    }
    for (Index i = 0; i < o.nx; ++i)
      f0(i, j) = profile * (1.0 + o.alpha * std::cos(o.wavenumber * g->x(i)));
  }
  // Neutralizing background: the mean electron density of the initial value.
  g->background = f0.sum() * g->dv / static_cast<double>(o.nx);

  auto field = std::make_shared<VlasovField>(g);
  Problem p;
  p.name = o.kind == VlasovOptions::Case::landau ? "landau" : "two_stream";
  p.field = field;
  p.initial = f0;
  p.horizon = o.horizon;
  p.reference_solver = SolverSpec::adaptive(o.tolerance, o.tolerance);
  p.substep_solver = SolverSpec::adaptive(o.tolerance, o.tolerance);
  p.observables["electric_energy"] = [field](const Matrix& f) { return field->electric_energy(f); };
  p.observables["mass"] = [field](const Matrix& f) { return field->mass(f); };
  return p;
}

/// Exponential rate of an oscillating decaying or growing amplitude: the
/// least-squares slope of log(value)/2 through the local maxima of `values`
/// inside [t_begin, t_end]. Energies are squared amplitudes, hence the 1/2.
inline double envelope_rate(const std::vector<double>& times, const std::vector<double>& values,
                            double t_begin, double t_end) {
  std::vector<double> tx, ly;
  for (std::size_t i = 1; i + 1 < values.size(); ++i) {
    if (times[i] < t_begin || times[i] > t_end) continue;
    if (values[i] > values[i - 1] && values[i] >= values[i + 1] && values[i] > 0.0) {
      tx.push_back(times[i]);
      ly.push_back(0.5 * std::log(values[i]));
    }
  }
  if (tx.size() < 2) throw NonConvergence("envelope_rate: fewer than two maxima in the window");
  const double n = static_cast<double>(tx.size());
  double st = 0, sy = 0, stt = 0, sty = 0;
  for (std::size_t i = 0; i < tx.size(); ++i) {
    st += tx[i];
    sy += ly[i];
    stt += tx[i] * tx[i];
    sty += tx[i] * ly[i];
  }
  return (n * sty - st * sy) / (n * stt - st * st);
}

// ---------------------------------------------------------------------------
// Registry

using ParamMap = std::map<std::string, std::string>;

namespace detail {

class ParamReader {
 public:
  explicit ParamReader(const ParamMap& m) : m_(m) {}

  template <class T>
  void read(const std::string& key, T& out) {
    auto it = m_.find(key);
    if (it == m_.end()) return;
    used_.push_back(key);
    std::istringstream is(it->second);
    T v{};
    if constexpr (std::is_same_v<T, std::string>) {
      v = it->second;  // verbatim; lists like "a, b" keep their spaces
    } else if constexpr (std::is_same_v<T, bool>) {
      std::string s;
      is >> s;
      if (s == "true" || s == "1" || s == "yes") v = true;
      else if (s == "false" || s == "0" || s == "no") v = false;
      else throw ConfigError("parameter '" + key + "': expected a boolean");
    } else {
      is >> v;
      if (is.fail() || !(is >> std::ws).eof())
        throw ConfigError("parameter '" + key + "': cannot parse '" + it->second + "'");
    }
    out = v;
  }

  /// Throws on any key that was never read; `owner` names the section.
  void finish(const std::string& owner) const {
    for (const auto& [k, v] : m_)
      if (std::find(used_.begin(), used_.end(), k) == used_.end())
        throw ConfigError("unknown parameter '" + k + "' for '" + owner + "'");
  }

 private:
  const ParamMap& m_;
  std::vector<std::string> used_;
};

}  // namespace detail

inline std::vector<std::string> problem_names() {
  return {"toy", "lyapunov", "allen_cahn", "burgers", "landau", "two_stream"};
}

/// Build a problem by name with string-valued parameter overrides.
inline Problem make_problem(const std::string& name, const ParamMap& params = {}) {
  detail::ParamReader r(params);
  Problem p;
  if (name == "toy") {
    ToyOptions o;
    r.read("n", o.n);
    r.read("seed", o.seed);
    r.read("keep", o.keep);
    r.read("horizon", o.horizon);
    r.finish(name);
    p = make_toy(o);
  } else if (name == "lyapunov") {
    LyapunovOptions o;
    r.read("n", o.n);
    r.read("alpha", o.alpha);
    r.read("seed", o.seed);
    r.read("symmetric", o.symmetric);
    r.read("horizon", o.horizon);
    r.read("source_modes", o.source_modes);
    r.read("source_decay", o.source_decay);
    r.finish(name);
    p = make_lyapunov(o);
  } else if (name == "allen_cahn") {
    AllenCahnOptions o;
    r.read("n", o.n);
    r.read("epsilon", o.epsilon);
    r.read("horizon", o.horizon);
    r.read("dt", o.dt);
    r.finish(name);
    p = make_allen_cahn(o);
  } else if (name == "burgers") {
    BurgersOptions o;
    r.read("n", o.n);
    r.read("samples", o.samples);
    r.read("nu", o.nu);
    r.read("sigma_x", o.sigma_x);
    r.read("modes", o.modes);
    r.read("seed", o.seed);
    r.read("horizon", o.horizon);
    r.finish(name);
    p = make_burgers(o);
  } else if (name == "landau" || name == "two_stream") {
    VlasovOptions o = name == "landau" ? VlasovOptions::landau() : VlasovOptions::two_stream();
    r.read("nx", o.nx);
    r.read("nv", o.nv);
    r.read("alpha", o.alpha);
    r.read("wavenumber", o.wavenumber);
    r.read("horizon", o.horizon);
    r.read("order", o.order);
    r.read("tolerance", o.tolerance);
    r.finish(name);
    p = make_vlasov(o);
  } else {
    throw ConfigError("unknown problem '" + name + "'");
  }
  return p;
}

}  // namespace rdlr
