#include "rdlr/baselines.hpp"
#include "rdlr/problems.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

namespace rdlr {
namespace {

using testing::random_matrix;
using testing::random_orthonormal;
using testing::relative_error;

BaselineConfig bcfg(Index r, int order = 1) {
  BaselineConfig c;
  c.rank = r;
  c.order = order;
  c.substep = SolverSpec::adaptive(1e-12, 1e-12);
  return c;
}

FactoredMatrix random_factored(Index m, Index n, Index r, std::uint64_t seed) {
  Matrix s = Matrix::Zero(r, r);
  for (Index i = 0; i < r; ++i) s(i, i) = 1.0 / static_cast<double>(i + 1);
  return {random_orthonormal(m, r, seed), s, random_orthonormal(n, r, seed + 1)};
}

FieldPtr split_field(const Matrix& a1, const Matrix& a2) {
  return std::make_shared<SplitLinearField>(LinearOperator::dense(a1, false),
                                            LinearOperator::dense(a2, false), Nonlinearity::none());
}

// X' = W1 X + X W2^T with block-diagonal W1, W2: range and corange of X(t)
// stay in span(e_1..e_k).
struct FixedSubspaceFlow {
  Matrix w1, w2, d;
  FieldPtr field;

  FixedSubspaceFlow(Index n, Index k, std::uint64_t seed) : d(Matrix::Zero(n, n)) {
    auto block = [&](std::uint64_t s) {
      Matrix w = Matrix::Zero(n, n);
      w.topLeftCorner(k, k) = testing::antisymmetric(k, s) + Matrix::Identity(k, k) * 0.3;
      w.bottomRightCorner(n - k, n - k) = testing::antisymmetric(n - k, s + 1);
      return w;
    };
    w1 = block(seed);
    w2 = block(seed + 5);
    for (Index i = 0; i < k; ++i) d(i, i) = std::ldexp(1.0, -static_cast<int>(i + 1));
    field = split_field(w1, w2);
  }
  Matrix at(double t) const { return (t * w1).exp() * d * (t * Matrix(w2.transpose())).exp(); }
};

// ---------------------------------------------------------------------------

TEST(TangentProject, FixesTangentVectors) {
  const auto y = random_factored(30, 20, 4, 1);
  const Matrix z = y.u * random_matrix(4, 20, 2) + random_matrix(30, 4, 3) * y.v.transpose();
  EXPECT_LE(relative_error(tangent_project(y, z), z), 1e-12);
}

TEST(TangentProject, AnnihilatesNormalVectors) {
  const auto y = random_factored(30, 20, 4, 4);
  const Matrix g = random_matrix(30, 20, 5);
  const Matrix pu = Matrix::Identity(30, 30) - y.u * y.u.transpose();
  const Matrix pv = Matrix::Identity(20, 20) - y.v * y.v.transpose();
  const Matrix z = pu * g * pv;
  EXPECT_LE(tangent_project(y, z).norm(), 1e-12 * z.norm());
}

TEST(TangentProject, IdempotentAndSymmetricOnProbes) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto y = random_factored(25, 35, 3, 10 + seed);
    const Matrix z1 = random_matrix(25, 35, 100 + seed), z2 = random_matrix(25, 35, 200 + seed);
    const Matrix p1 = tangent_project(y, z1);
    EXPECT_LE((tangent_project(y, p1) - p1).norm(), 1e-10 * z1.norm());
    const double lhs = (p1.array() * z2.array()).sum();
    const double rhs = (z1.array() * tangent_project(y, z2).array()).sum();
    EXPECT_NEAR(lhs, rhs, 1e-10 * z1.norm() * z2.norm());
  }
}

TEST(Baselines, ZeroFieldIsIdentity) {
  const auto y0 = random_factored(30, 30, 4, 7);
  const Matrix a0 = y0.reconstruct();
  const auto f = std::make_shared<SplitLinearField>(LinearOperator::zero(30), LinearOperator::zero(30),
                                                    Nonlinearity::none());
  const auto c = bcfg(4);
  EXPECT_LE(relative_error(ksl_step(f, y0, 0.1, c).reconstruct(), a0), 1e-14);
  EXPECT_LE(relative_error(ksl_step(f, y0, 0.1, bcfg(4, 2)).reconstruct(), a0), 1e-14);
  EXPECT_LE(relative_error(bug_step(f, y0, 0.1, c).reconstruct(), a0), 1e-14);
  EXPECT_LE(relative_error(augmented_bug_step(f, y0, 0.1, c).reconstruct(), a0), 1e-14);
  EXPECT_LE(relative_error(projected_euler_step(f, y0, 0.1, c).reconstruct(), a0), 1e-14);
}

TEST(Ksl, ExactOnRankFiveToyFlow) {
  const auto p = make_toy({.keep = 5});
  const auto y0 = truncate_rank(svd(p.initial), 5);
  const Matrix xh = p.closed_form(0.1);
  EXPECT_LE(relative_error(ksl_step(p.field, y0, 0.1, bcfg(5)).reconstruct(), xh), 1e-10);
  EXPECT_LE(relative_error(ksl_step(p.field, y0, 0.1, bcfg(5, 2)).reconstruct(), xh), 1e-10);
}

TEST(Bug, ExactOnFixedSubspaceFlow) {
  const FixedSubspaceFlow flow(40, 4, 3);
  const auto y0 = truncate_rank(svd(flow.d), 4);
  const Matrix xh = flow.at(0.2);
  EXPECT_LE(relative_error(bug_step(flow.field, y0, 0.2, bcfg(4)).reconstruct(), xh), 1e-10);
  EXPECT_LE(relative_error(augmented_bug_step(flow.field, y0, 0.2, bcfg(4)).reconstruct(), xh),
            1e-10);
  EXPECT_LE(relative_error(ksl_step(flow.field, y0, 0.2, bcfg(4)).reconstruct(), xh), 1e-10);
}

// Rotation plus a small rank-2 source: the rank-4 projected dynamics are
// smooth but not exact, so the splitting error shows.
FieldPtr sourced_rotation(Index n) {
  const Matrix src = 0.01 * random_matrix(n, 2, 3) * random_matrix(2, n, 4);
  return std::make_shared<SplitLinearField>(
      LinearOperator::dense(testing::antisymmetric(n, 1), false),
      LinearOperator::dense(testing::antisymmetric(n, 2), false), Nonlinearity::source(src));
}

TEST(Ksl, LieTrotterFirstOrderStrangSecondOrder) {
  const auto f = sourced_rotation(30);
  Matrix d = Matrix::Zero(30, 30);
  for (Index i = 0; i < 4; ++i) d(i, i) = std::ldexp(1.0, -static_cast<int>(i + 1));
  const auto y0 = truncate_rank(svd(d), 4);
  auto run = [&](double h, int order) {
    auto y = y0;
    const int steps = static_cast<int>(std::lround(0.2 / h));
    for (int i = 0; i < steps; ++i) y = ksl_step(f, y, h, bcfg(4, order));
    return y.reconstruct();
  };
  const Matrix ref = run(0.2 / 1000, 2);
  const std::vector<double> hs{0.05, 0.025, 0.0125};
  std::vector<double> e1, e2;
  for (double h : hs) {
    e1.push_back((run(h, 1) - ref).norm());
    e2.push_back((run(h, 2) - ref).norm());
  }
  EXPECT_NEAR(testing::loglog_slope(hs, e1), 1.0, 0.2);
  EXPECT_NEAR(testing::loglog_slope(hs, e2), 2.0, 0.2);
}

TEST(AugmentedBug, ToleranceControlsRank) {
  const auto f = sourced_rotation(40);
  Matrix d = Matrix::Zero(40, 40);
  for (Index i = 0; i < 5; ++i) d(i, i) = std::ldexp(1.0, -static_cast<int>(i + 1));
  const auto y0 = truncate_rank(svd(d), 5);
  auto c = bcfg(5);
  EXPECT_EQ(augmented_bug_step(f, y0, 0.05, c).rank(), 5);
  c.tolerance = 1e-12;
  const auto grown = augmented_bug_step(f, y0, 0.05, c);
  EXPECT_GT(grown.rank(), 5);
  EXPECT_LE(grown.rank(), 10);
  c.tolerance = 10.0;
  EXPECT_EQ(augmented_bug_step(f, y0, 0.05, c).rank(), 0);
}

TEST(ProjectedEuler, ScalarLinearFlowIsExplicitEuler) {
  const double a = -3.0, h = 0.05;
  const auto f = split_field(a * Matrix::Identity(20, 20), Matrix::Zero(20, 20));
  const auto y0 = random_factored(20, 20, 1, 9);
  const auto y1 = projected_euler_step(f, y0, h, bcfg(1));
  EXPECT_LE(relative_error(y1.reconstruct(), (1 + h * a) * y0.reconstruct()), 1e-14);
}

TEST(ProjectedEuler, MatchesDenseTruncatedEuler) {
  const auto p = make_toy({.n = 30});
  const auto y0 = truncate_rank(svd(p.initial), 3);
  const Matrix a = y0.reconstruct();
  const Matrix dense = a + 0.1 * tangent_project(y0, eval_full(p.field, a));
  const Matrix oracle = truncate_rank(svd(dense), 3).reconstruct();
  EXPECT_LE(relative_error(projected_euler_step(p.field, y0, 0.1, bcfg(3)).reconstruct(), oracle),
            1e-12);
}

TEST(Baselines, FactorsStayOrthonormal) {
  const auto p = make_toy({.n = 40});
  const auto y0 = truncate_rank(svd(p.initial), 5);
  auto defect = [](const Matrix& u) {
    return (u.transpose() * u - Matrix::Identity(u.cols(), u.cols())).norm();
  };
  for (const auto& y : {ksl_step(p.field, y0, 0.1, bcfg(5)), ksl_step(p.field, y0, 0.1, bcfg(5, 2)),
                        bug_step(p.field, y0, 0.1, bcfg(5)),
                        augmented_bug_step(p.field, y0, 0.1, bcfg(5)),
                        projected_euler_step(p.field, y0, 0.1, bcfg(5))}) {
    EXPECT_LE(defect(y.u), 1e-10);
    EXPECT_LE(defect(y.v), 1e-10);
  }
}

TEST(BaselineConfig, RejectsBadOrderAndRank) {
  auto c = bcfg(0);
  EXPECT_THROW(c.validate(), ConfigError);
  c = bcfg(3, 3);
  EXPECT_THROW(c.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Lyapunov, one step h = 0.1 from the dense state at t = 1e-4 truncated to rank 5.

struct LyapunovBaselineRun {
  Problem p = make_lyapunov();
  FactoredMatrix y0;
  Matrix exact;
  BaselineConfig c;

  LyapunovBaselineRun() {
    const double w = p.baseline_warmup;
    const auto ref = reference_solve(p.field, p.initial, {w, w + 0.1}, p.reference_solver);
    y0 = truncate_rank(svd(ref[0]), 5);
    exact = ref[1];
    c.rank = 5;
    c.substep = p.substep_solver;
  }
  double error(const FactoredMatrix& y) const { return relative_error(y.reconstruct(), exact); }
};

TEST(LyapunovBaselines, ProjectorSplittingDiverges) {
  const LyapunovBaselineRun run;
  EXPECT_THROW(ksl_step(run.p.field, run.y0, 0.1, run.c), NumericalError);
}

TEST(LyapunovBaselines, BugErrorWithinFactorFiveOfTarget) {
  const LyapunovBaselineRun run;
  const double e = run.error(bug_step(run.p.field, run.y0, 0.1, run.c));
  EXPECT_GE(e, 3.37e-5 / 5);
  EXPECT_LE(e, 3.37e-5 * 5);
}

TEST(LyapunovBaselines, AugmentedBugErrorWithinFactorFiveOfTarget) {
  const LyapunovBaselineRun run;
  const double e = run.error(augmented_bug_step(run.p.field, run.y0, 0.1, run.c));
  EXPECT_GE(e, 1.04e-6 / 5);
  EXPECT_LE(e, 1.04e-6 * 5);
}

TEST(LyapunovBaselines, ProjectedEulerErrorOfOrderOneTenth) {
  const LyapunovBaselineRun run;
  const double e = run.error(projected_euler_step(run.p.field, run.y0, 0.1, run.c));
  EXPECT_GE(e, 1.49e-1 / 5);
  EXPECT_LE(e, 1.49e-1 * 5);
}

}  // namespace
}  // namespace rdlr
