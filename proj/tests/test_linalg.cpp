#include "rdlr/linalg.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace rdlr {
namespace {

using testing::random_matrix;
using testing::random_orthonormal;

TEST(Orth, IdentityIsItsOwnBasis) {
  const auto q = orth(Matrix::Identity(3, 3));
  ASSERT_EQ(q.cols(), 3);
  EXPECT_LE((q.matrix().cwiseAbs() - Matrix::Identity(3, 3)).norm(), 1e-15);
}

TEST(Orth, CollinearColumnsCollapse) {
  Matrix m = Matrix::Zero(4, 2);
  m(0, 0) = 1.0;
  m(0, 1) = 2.0;
  const auto q = orth(m);
  ASSERT_EQ(q.cols(), 1);
  EXPECT_NEAR(std::abs(q.matrix()(0, 0)), 1.0, 1e-15);
  EXPECT_LE(q.matrix().bottomRows(3).norm(), 1e-15);
}

TEST(Orth, GaussianInputIsReproduced) {
  const Matrix g = random_matrix(50, 8, 11);
  const auto q = orth(g);
  ASSERT_EQ(q.cols(), 8);
  EXPECT_LE(q.orthogonality_defect(), 1e-12);
  EXPECT_LE((q.project(g) - g).norm(), 1e-10 * g.norm());
}

TEST(Orth, ZeroInputGivesEmptyBasis) {
  const auto q = orth(Matrix::Zero(6, 3));
  EXPECT_EQ(q.cols(), 0);
  EXPECT_EQ(q.rows(), 6);
}

TEST(AugmentBasis, AddsOrthogonalDirection) {
  Matrix e1 = Matrix::Zero(3, 1), e2 = Matrix::Zero(3, 1);
  e1(0) = 1;
  e2(1) = 1;
  const auto q = augment_basis(OrthonormalBasis(e1), e2);
  ASSERT_EQ(q.cols(), 2);
  EXPECT_LE((q.project(e1) - e1).norm(), 1e-15);
  EXPECT_LE((q.project(e2) - e2).norm(), 1e-15);
}

TEST(AugmentBasis, NoGrowthForVectorsInSpan) {
  const OrthonormalBasis q0(random_orthonormal(40, 4, 3));
  const Matrix inside = q0.matrix() * random_matrix(4, 6, 4);
  const auto q = augment_basis(q0, inside);
  EXPECT_EQ(q.cols(), 4);
}

TEST(AugmentBasis, GrowthMatchesRankOfConcatenation) {
  // U0 (m x 5) and Qh (m x 7) share three directions.
  const Index m = 60;
  const Matrix u0 = random_orthonormal(m, 5, 21);
  Matrix qh(m, 7);
  qh << u0.leftCols(3) * random_matrix(3, 3, 22), random_orthonormal(m, 4, 23);
  qh = thin_qr(qh).first;

  Matrix both(m, 12);
  both << u0, qh;
  const Vector sigma = Eigen::JacobiSVD<Matrix>(both).singularValues();
  const Index oracle_rank = (sigma.array() > 1e-10 * sigma(0)).count();

  const auto q = augment_basis(OrthonormalBasis(u0), qh);
  EXPECT_EQ(q.cols(), oracle_rank);
  EXPECT_GE(q.cols(), 7);
  EXPECT_LE(q.cols(), 12);
  EXPECT_LE(q.orthogonality_defect(), 1e-12);
  EXPECT_LE((q.project(u0) - u0).norm(), 1e-10);
  EXPECT_LE((q.project(qh) - qh).norm(), 1e-10);
  // Leading block spans U0.
  const Matrix lead = q.matrix().leftCols(5);
  EXPECT_LE((lead * (lead.transpose() * u0) - u0).norm(), 1e-12);
}

TEST(AugmentBasis, SmallResidualsStayOrthogonal) {
  const OrthonormalBasis q0(random_orthonormal(80, 6, 31));
  Matrix m = q0.matrix() * random_matrix(6, 3, 32) + 1e-9 * random_matrix(80, 3, 33);
  const auto q = augment_basis(q0, m);
  EXPECT_EQ(q.cols(), 9);
  EXPECT_LE(q.orthogonality_defect(), 1e-12);
}

TEST(Svd, DiagonalAndZero) {
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 3;
  d(1, 1) = 1;
  auto s = svd(d);
  EXPECT_NEAR(s.sigma(0), 3.0, 1e-15);
  EXPECT_NEAR(s.sigma(1), 1.0, 1e-15);
  auto z = svd(Matrix::Zero(4, 3));
  EXPECT_EQ(z.sigma.norm(), 0.0);
}

TEST(Svd, ToySingularValuesFollowClosedForm) {
  const testing::ToyOracle toy(100, 1, 2);
  const auto s = svd(toy.at(0.1));
  for (Index i = 0; i < 40; ++i) {
    const double expected = std::exp(0.1) * std::ldexp(1.0, -static_cast<int>(i + 1));
    EXPECT_NEAR(s.sigma(i), expected, 1e-13) << i;
  }
}

TEST(Svd, ReconstructsAndIsIdempotent) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix m = random_matrix(30 + seed, 17, 100 + seed);
    const auto s = svd(m);
    EXPECT_LE((s.reconstruct() - m).norm(), 1e-12 * m.norm());
    for (Index i = 1; i < s.size(); ++i) EXPECT_GE(s.sigma(i - 1), s.sigma(i));
    const auto again = svd(s.reconstruct());
    EXPECT_LE((again.sigma - s.sigma).norm(), 1e-10 * s.sigma.norm());
  }
}

TEST(TruncateRank, EckartYoungOnDiagonal) {
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 3, 2, 1;
  const auto y = truncate_rank(svd(d), 2);
  EXPECT_EQ(y.rank(), 2);
  EXPECT_NEAR((y.reconstruct() - d).norm(), 1.0, 1e-14);
}

TEST(TruncateRank, LowRankInputUnchanged) {
  Vector sigma(2);
  sigma << 2.0, 0.5;
  const Matrix m = testing::with_spectrum(20, 15, sigma, 5);
  const auto y = truncate_rank(svd(m), 5);
  EXPECT_LE((y.reconstruct() - m).norm(), 1e-13);
  EXPECT_LE(y.rank(), 15);
}

TEST(TruncateRank, ToyGeometricTailGivesPowerOfTwo) {
  const testing::ToyOracle toy(100, 1, 2);
  const Matrix x = toy.at(0.1);
  const auto y = truncate_rank(svd(x), 5);
  EXPECT_NEAR((y.reconstruct() - x).norm() / x.norm(), std::ldexp(1.0, -5), 1e-12);
}

TEST(TruncateRank, ErrorEqualsTailNorm) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix m = random_matrix(25, 18, 300 + seed);
    const auto s = svd(m);
    for (Index r : {1, 4, 9, 17}) {
      const double err = (m - truncate_rank(s, r).reconstruct()).norm();
      const double tail = s.sigma.tail(s.size() - r).norm();
      EXPECT_NEAR(err, tail, 1e-10 * tail);
    }
  }
}

TEST(TruncateTol, DiagonalExample) {
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 3, 2, 1;
  const auto y = truncate_tol(svd(d), 1.5);
  EXPECT_EQ(y.rank(), 2);
  EXPECT_LE(spectral_norm(d - y.reconstruct()), 1.5);
}

TEST(TruncateTol, TiesResolveToSmallerRank) {
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 3, 2, 1;
  EXPECT_EQ(truncate_tol(svd(d), 2.0).rank(), 1);
}

TEST(TruncateTol, ZeroToleranceKeepsNumericalRank) {
  const Matrix m = random_matrix(12, 9, 8);
  EXPECT_EQ(truncate_tol(svd(m), 0.0).rank(), 9);
}

TEST(TruncateTol, ToyRankByEnumeration) {
  const testing::ToyOracle toy(100, 1, 2);
  const auto y = truncate_tol(svd(toy.at(0.1)), 1e-3);
  // Oracle: count closed-form singular values above the tolerance.
  Index expected = 0;
  for (int i = 1; i <= 100; ++i)
    if (std::exp(0.1) * std::ldexp(1.0, -i) > 1e-3) ++expected;
  EXPECT_EQ(expected, 10);
  EXPECT_EQ(y.rank(), expected);
}

TEST(FactoredMatrix, ProductsMatchDense) {
  const auto y = factor(random_matrix(9, 4, 1) * random_matrix(4, 7, 2));
  const Matrix dense = y.reconstruct();
  const Matrix p = random_matrix(7, 3, 3), q = random_matrix(9, 2, 4);
  EXPECT_LE((y.times(p) - dense * p).norm(), 1e-12);
  EXPECT_LE((y.transpose_times(q) - dense.transpose() * q).norm(), 1e-12);
  EXPECT_LE((y.compress(q, p) - q.transpose() * dense * p).norm(), 1e-12);
  EXPECT_NEAR(y.norm(), dense.norm(), 1e-12);
  EXPECT_EQ(y.rank(), 4);
}

TEST(SvdOfProduct, MatchesDense) {
  const Matrix l = random_matrix(20, 6, 5), r = random_matrix(15, 6, 6);
  const auto s = svd_of_product(l, r);
  EXPECT_LE((s.reconstruct() - l * r.transpose()).norm(), 1e-12 * (l * r.transpose()).norm());
}

TEST(GaussianSketch, DeterministicForFixedSeed) {
  const auto a = gaussian_sketch(40, 7, 99);
  const auto b = gaussian_sketch(40, 7, 99);
  EXPECT_TRUE(a.omega == b.omega);
  EXPECT_FALSE(a.omega == gaussian_sketch(40, 7, 100).omega);
}

TEST(GaussianSketch, PseudoinverseIdentity) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = gaussian_sketch(64, 1 + seed % 20, seed);
    EXPECT_LE((s.pinv * s.omega - Matrix::Identity(s.omega.cols(), s.omega.cols()))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-10);
  }
}

TEST(GaussianSketch, MomentsOfOneMillionSamples) {
  const auto s = gaussian_sketch(100000, 10, 2024);
  const double count = static_cast<double>(s.omega.size());
  const double mean = s.omega.mean();
  const double var = (s.omega.array() - mean).square().sum() / (count - 1);
  // Standard errors: mean 1/sqrt(N), variance sqrt(2/N).
  EXPECT_LE(std::abs(mean), 4.0 / std::sqrt(count));
  EXPECT_LE(std::abs(var - 1.0), 4.0 * std::sqrt(2.0 / count));
  for (Index j = 0; j < s.omega.cols(); ++j) {
    const double cm = s.omega.col(j).mean();
    EXPECT_LE(std::abs(cm), 4.0 / std::sqrt(100000.0));
  }
}

TEST(Rng, DerivedStreamsDiffer) {
  EXPECT_NE(derive_seed(1, {0, 0}), derive_seed(1, {0, 1}));
  EXPECT_NE(derive_seed(1, {0, 1}), derive_seed(1, {1, 0}));
  EXPECT_EQ(derive_seed(5, {3, 2}), derive_seed(5, {3, 2}));
}

}  // namespace
}  // namespace rdlr
