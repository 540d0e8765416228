#include "rdlr/problems.hpp"
#include "rdlr/steppers.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>

namespace rdlr {
namespace {

using testing::relative_error;

double defect(const Matrix& u) {
  return (u.transpose() * u - Matrix::Identity(u.cols(), u.cols())).norm();
}

StepperConfig cfg(Index r, Index p, Index q, double h, std::uint64_t seed) {
  StepperConfig c;
  c.rank = r;
  c.oversampling = p;
  c.power_iterations = q;
  c.step = h;
  c.substep = SolverSpec::adaptive(1e-12, 1e-12);
  c.seed = seed;
  return c;
}

AdaptiveConfig adaptive(double tau, double beta, std::uint64_t seed) {
  AdaptiveConfig c;
  c.tolerance = tau;
  c.failure_probability = beta;
  c.substep = SolverSpec::adaptive(1e-12, 1e-12);
  c.seed = seed;
  return c;
}

// F(X) = M (I - U U^T) X vanishes on every X with range in span(U).
FieldPtr annihilating_field(const Matrix& u, std::uint64_t seed) {
  const Index n = u.rows();
  const Matrix m = testing::random_matrix(n, n, seed);
  const Matrix a1 = m * (Matrix::Identity(n, n) - u * u.transpose());
  return std::make_shared<SplitLinearField>(LinearOperator::dense(a1, false),
                                            LinearOperator::zero(n), Nonlinearity::none());
}

// Toy-like flow whose range stays in span(e_1..e_k): W1 is block diagonal.
struct InvariantRangeFlow {
  Matrix w1, w2, d;
  FieldPtr field;

  InvariantRangeFlow(Index n, Index k, std::uint64_t seed) : d(Matrix::Zero(n, n)) {
    w1 = Matrix::Zero(n, n);
    w1.topLeftCorner(k, k) = testing::antisymmetric(k, seed);
    w1.bottomRightCorner(n - k, n - k) = testing::antisymmetric(n - k, seed + 1);
    w2 = testing::antisymmetric(n, seed + 2);
    for (Index i = 0; i < k; ++i) d(i, i) = std::ldexp(1.0, -static_cast<int>(i + 1));
    field = std::make_shared<SplitLinearField>(LinearOperator::dense(w1, false),
                                               LinearOperator::dense(w2, false), Nonlinearity::none());
  }
  Matrix at(double t) const { return (t * w1).exp() * d * (t * Matrix(w2.transpose())).exp(); }
};

FieldPtr zero_field(Index n) {
  return std::make_shared<SplitLinearField>(LinearOperator::zero(n), LinearOperator::zero(n),
                                            Nonlinearity::none());
}

// ---------------------------------------------------------------------------

TEST(StepperConfig, RejectsInvalidValues) {
  auto c = cfg(5, 0, 0, 0.1, 0);
  c.rank = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = cfg(5, -1, 0, 0.1, 0);
  EXPECT_THROW(c.validate(), ConfigError);
  c = cfg(5, 0, 0, 0.0, 0);
  EXPECT_THROW(c.validate(), ConfigError);
}

// The range e^{tW1} span(e_1..e_5) rotates over [0, h], so span([U0, Q_h]) does
// not contain it at intermediate times. Known to fail at about 2.5e-2.
TEST(Drsvd, ExactOnRankFiveToyFlow) {
  const auto p = make_toy({.keep = 5});
  const auto y0 = factor(p.initial);
  const Matrix xh = p.closed_form(0.1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto y1 = drsvd_step(p.field, y0, cfg(5, 2, 0, 0.1, seed));
    EXPECT_EQ(y1.rank(), 5);
    EXPECT_LE(relative_error(y1.reconstruct(), xh), 1e-7) << seed;
  }
}

TEST(Dgn, ExactOnRankFiveToyFlow) {
  const auto p = make_toy({.keep = 5});
  const auto y0 = factor(p.initial);
  const Matrix xh = p.closed_form(0.1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    StepReport rep;
    const auto y1 = dgn_step(p.field, y0, cfg(5, 2, 0, 0.1, seed), &rep);
    EXPECT_EQ(y1.rank(), 5);
    EXPECT_EQ(rep.deflated, 0);
    EXPECT_LE(relative_error(y1.reconstruct(), xh), 1e-7) << seed;
  }
}

// When the range of A(t) stays inside span(Q) on [0, h] the projected C-step is exact.
TEST(Drsvd, ExactWhenRangeIsInvariant) {
  const InvariantRangeFlow flow(80, 5, 21);
  const auto y0 = factor(flow.d);
  const Matrix xh = flow.at(0.1);
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    EXPECT_LE(relative_error(drsvd_step(flow.field, y0, cfg(5, 2, 0, 0.1, seed)).reconstruct(), xh),
              1e-9)
        << seed;
}

TEST(Dgn, ExactOnRankThreeFlowWithoutAugmentation) {
  const auto p = make_toy({.keep = 3});
  const auto y0 = factor(p.initial);
  auto c = cfg(3, 2, 0, 0.1, 4);
  c.augment = false;
  EXPECT_LE(relative_error(dgn_step(p.field, y0, c).reconstruct(), p.closed_form(0.1)), 1e-9);
}

TEST(Steppers, ZeroFieldIsIdentity) {
  const Matrix a0 = testing::with_spectrum(40, 40, Vector::LinSpaced(5, 1.0, 0.2), 3);
  const auto y0 = factor(a0);
  const auto f = zero_field(40);
  const auto c = cfg(5, 2, 1, 0.1, 9);
  EXPECT_LE(relative_error(drsvd_step(f, y0, c).reconstruct(), a0), 1e-13);
  EXPECT_LE(relative_error(dgn_step(f, y0, c).reconstruct(), a0), 1e-13);
  const auto a = adaptive(1e-8, 1e-3, 2);
  EXPECT_LE(relative_error(adrsvd_step(f, y0, a, 0.1).reconstruct(), a0), 1e-13);
  EXPECT_LE(relative_error(adgn_step(f, y0, a, 0.1).reconstruct(), a0), 1e-13);
}

TEST(Steppers, StaticFixedPointIsPreserved) {
  const Matrix a0 = testing::with_spectrum(30, 30, Vector::LinSpaced(4, 2.0, 0.5), 5);
  const auto y0 = factor(a0);
  const auto f = annihilating_field(y0.u, 6);
  ASSERT_LE(eval_full(f, a0).norm(), 1e-12);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    EXPECT_LE(relative_error(drsvd_step(f, y0, cfg(4, 2, 0, 0.1, seed)).reconstruct(), a0), 1e-10);
    EXPECT_LE(relative_error(dgn_step(f, y0, cfg(4, 2, 0, 0.1, seed)).reconstruct(), a0), 1e-10);
  }
}

TEST(Steppers, FactorsStayOrthonormal) {
  const auto p = make_allen_cahn({.n = 48});
  const auto y0 = factor(p.initial);
  auto c = cfg(6, 3, 1, 0.25, 1);
  c.substep = p.substep_solver;
  for (const auto& y1 : {drsvd_step(p.field, y0, c), dgn_step(p.field, y0, c)}) {
    EXPECT_LE(defect(y1.u), 1e-10);
    EXPECT_LE(defect(y1.v), 1e-10);
  }
  auto a = adaptive(1e-6, 1e-3, 1);
  a.substep = p.substep_solver;
  for (const auto& y1 : {adrsvd_step(p.field, y0, a, 0.25), adgn_step(p.field, y0, a, 0.25)}) {
    EXPECT_LE(defect(y1.u), 1e-10);
    EXPECT_LE(defect(y1.v), 1e-10);
  }
}

TEST(Steppers, SameSeedIsBitwiseDeterministic) {
  const auto p = make_toy({.n = 60});
  const auto y0 = truncate_rank(svd(p.initial), 5);
  const auto c = cfg(5, 2, 1, 0.1, 77);
  const auto a = drsvd_step(p.field, y0, c), b = drsvd_step(p.field, y0, c);
  EXPECT_EQ(a.reconstruct(), b.reconstruct());
  const auto x = dgn_step(p.field, y0, c), z = dgn_step(p.field, y0, c);
  EXPECT_EQ(x.reconstruct(), z.reconstruct());
  const auto other = dgn_step(p.field, y0, cfg(5, 2, 1, 0.1, 78));
  EXPECT_NE(x.reconstruct(), other.reconstruct());
}

// Q and W contain the range and corange of a rank-3 A, so D = Q^T A W has two
// singular values at roundoff level and B D^+ C^T reproduces A.
TEST(Dgn, AssemblyDeflatesNumericallyZeroCore) {
  const Matrix u = testing::random_orthonormal(30, 5, 9);
  const Matrix v = testing::random_orthonormal(25, 5, 10);
  const Matrix a = u.leftCols(3) * Vector::LinSpaced(3, 1.0, 0.1).asDiagonal() *
                   v.leftCols(3).transpose();
  const Matrix q = u * testing::random_orthonormal(5, 5, 11);
  const Matrix w = v * testing::random_orthonormal(5, 5, 12);
  const detail::Bcd bcd{a * w, a.transpose() * q, q.transpose() * a * w};
  StepReport rep;
  const auto y = detail::nystrom_assemble(bcd, svd(bcd.d), 5, &rep);
  EXPECT_EQ(rep.deflated, 2);
  EXPECT_EQ(y.rank(), 3);
  EXPECT_LE(relative_error(y.reconstruct(), a), 1e-12);
}

TEST(Drsvd, KeepsSmallerNaturalRank) {
  const InvariantRangeFlow flow(60, 3, 4);
  const auto y1 = drsvd_step(flow.field, factor(flow.d), cfg(5, 2, 0, 0.1, 3));
  EXPECT_EQ(y1.rank(), 3);
  EXPECT_LE(relative_error(y1.reconstruct(), flow.at(0.1)), 1e-9);
}

TEST(AdaptiveSteppers, RankThreeFlow) {
  const auto p = make_toy({.keep = 3});
  const auto y0 = factor(p.initial);
  const Matrix xh = p.closed_form(0.1);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto a = adaptive(1e-6, 1e-4, seed);
    const auto r = adrsvd_step(p.field, y0, a, 0.1);
    EXPECT_EQ(r.rank(), 3);
    const auto g = adgn_step(p.field, y0, a, 0.1);
    EXPECT_EQ(g.rank(), 3);
    EXPECT_LE((g.reconstruct() - xh).norm(), std::max(1e-6, 100 * 1e-12) * xh.norm());
  }
}

TEST(AdaptiveSteppers, HugeToleranceCollapsesToOneBlock) {
  const auto p = make_toy({.n = 50, .keep = 3});
  const auto y0 = factor(p.initial);
  const auto a = adaptive(10.0, 1e-3, 5);
  StepReport rep;
  const auto y1 = adrsvd_step(p.field, y0, a, 0.1, &rep);
  EXPECT_GE(rep.range_columns, a.block());
  EXPECT_LE(rep.range_columns, a.block() + y0.rank());
  EXPECT_EQ(y1.rank(), 0);
  const auto g = adgn_step(p.field, y0, a, 0.1, &rep);
  EXPECT_LE(rep.corange_columns, a.block() + y0.rank());
  EXPECT_EQ(g.rank(), 0);
}

TEST(AdaptiveSteppers, CapPropagatesNonConvergence) {
  const auto p = make_toy({.n = 40});
  auto a = adaptive(1e-14, 1e-3, 1);
  a.max_basis = 6;
  EXPECT_THROW(adrsvd_step(p.field, factor(p.initial), a, 0.1), NonConvergence);
  EXPECT_THROW(adgn_step(p.field, factor(p.initial), a, 0.1), NonConvergence);
}

// DGN with one power iteration reproduces the rank-5 truncation of the
// reference and never beats it.
TEST(Dgn, LyapunovErrorSitsOnTruncationFloor) {
  const auto p = make_lyapunov();
  const auto y0 = factor(p.initial);
  const Matrix ref = reference_solve(p.field, p.initial, {0.1}, p.reference_solver)[0];
  const double floor = (truncate_rank(svd(ref), 5).reconstruct() - ref).norm();
  for (Index over : {0, 2, 5, 10}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto c = cfg(5, over, 1, 0.1, seed);
      c.substep = p.substep_solver;
      const double err = (dgn_step(p.field, y0, c).reconstruct() - ref).norm();
      EXPECT_GE(err, floor * (1 - 1e-6)) << over << " " << seed;
      EXPECT_LE(err, floor * 1.01) << over << " " << seed;
    }
  }
}

// ---------------------------------------------------------------------------

TEST(StepTimes, DivisibleAndShortFinalStep) {
  const auto t = step_times(0.3, 0.1);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_DOUBLE_EQ(t.back(), 0.3);
  const auto s = step_times(0.25, 0.1);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_DOUBLE_EQ(s[1], 0.2);
  EXPECT_DOUBLE_EQ(s[2], 0.25);
  EXPECT_THROW(step_times(0.0, 0.1), ConfigError);
}

TEST(Integrate, OneStepEqualsSingleStep) {
  const auto p = make_toy({.keep = 5});
  const auto y0 = factor(p.initial);
  const auto c = cfg(5, 2, 0, 0.1, 0);
  const auto traj = integrate(y0, 0.1, 0.1, dgn_stepper(p.field, c), 42);
  ASSERT_EQ(traj.steps(), 1u);
  auto single = c;
  single.seed = derive_seed(42, {0});
  EXPECT_EQ(traj.states.back().reconstruct(), dgn_step(p.field, y0, single).reconstruct());
  EXPECT_EQ(traj.seeds[0], single.seed);
}

TEST(Integrate, RecordsTimesRanksObservablesAndShortStep) {
  const auto p = make_toy({.n = 40, .keep = 5});
  std::map<std::string, StateObservable> obs{{"norm", [](const Matrix& a) { return a.norm(); }}};
  const auto traj =
      integrate(factor(p.initial), 0.25, 0.1, dgn_stepper(p.field, cfg(5, 2, 0, 0.1, 0)), 1, obs);
  EXPECT_FALSE(traj.failure);
  EXPECT_TRUE(traj.short_final_step);
  ASSERT_EQ(traj.times.size(), 4u);
  EXPECT_TRUE(std::is_sorted(traj.times.begin(), traj.times.end()));
  EXPECT_EQ(traj.ranks.size(), 4u);
  ASSERT_EQ(traj.observables.at("norm").size(), 4u);
  // The flow scales every singular value by e^t.
  EXPECT_NEAR(traj.observables.at("norm").back(), std::exp(0.25) * p.initial.norm(), 1e-8);
  EXPECT_LE(relative_error(traj.states.back().reconstruct(), p.closed_form(0.25)), 1e-7);
  std::vector<std::uint64_t> seeds = traj.seeds;
  std::sort(seeds.begin(), seeds.end());
  EXPECT_EQ(std::unique(seeds.begin(), seeds.end()), seeds.end());
}

TEST(Integrate, NumericalFailureReturnsPartialTrajectory) {
  const auto p = make_toy({.n = 20, .keep = 3});
  int calls = 0;
  StepFunction failing = [&](const FactoredMatrix& y, double, std::uint64_t, StepReport*) {
    if (++calls == 3) throw StiffnessError("step too stiff");
    return y;
  };
  const auto traj = integrate(factor(p.initial), 1.0, 0.1, failing, 0);
  ASSERT_TRUE(traj.failure.has_value());
  EXPECT_NE(traj.failure->find("step too stiff"), std::string::npos);
  EXPECT_EQ(traj.steps(), 2u);
  EXPECT_EQ(traj.states.size(), 3u);
}

TEST(Integrate, SerialRunsAreBitwiseIdentical) {
  const auto p = make_toy({.n = 40});
  const auto y0 = truncate_rank(svd(p.initial), 5);
  const auto step = dgn_stepper(p.field, cfg(5, 2, 1, 0.1, 0));
  const auto a = integrate(y0, 0.3, 0.1, step, 11), b = integrate(y0, 0.3, 0.1, step, 11);
  ASSERT_EQ(a.states.size(), b.states.size());
  for (std::size_t i = 0; i < a.states.size(); ++i)
    EXPECT_EQ(a.states[i].reconstruct(), b.states[i].reconstruct());
}

}  // namespace
}  // namespace rdlr
