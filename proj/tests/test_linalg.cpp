#include "cfsense/linalg.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "cfsense/autodiff.hpp"
#include "cfsense/rng.hpp"

namespace {

using cfsense::Mat;

Mat<double> random_spd(std::size_t n, std::uint64_t seed) {
  cfsense::Rng rng(seed);
  Mat<double> b(n, n);
  for (auto& v : b.data()) v = rng.normal();
  Mat<double> spd(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += b(i, k) * b(j, k);
      spd(i, j) = acc + (i == j ? 0.5 : 0.0);
    }
  return spd;
}

TEST(Linalg, CholeskyReconstructs) {
  const Mat<double> a = random_spd(5, 42);
  const auto l = cfsense::cholesky(a);
  ASSERT_TRUE(l.has_value());
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 5; ++k) acc += (*l)(i, k) * (*l)(j, k);
      EXPECT_NEAR(acc, a(i, j), 1e-12);
    }
}

TEST(Linalg, CholeskyRejectsIndefinite) {
  Mat<double> a = Mat<double>::identity(2);
  a(0, 0) = -1.0;
  EXPECT_FALSE(cfsense::cholesky(a).has_value());
}

TEST(Linalg, CholeskySolveMatchesDirect) {
  const Mat<double> a = random_spd(4, 7);
  const std::vector<double> x_true = {1.0, -2.0, 0.5, 3.0};
  const std::vector<double> b = cfsense::matvec(a, x_true);
  const auto l = cfsense::cholesky(a);
  ASSERT_TRUE(l.has_value());
  const std::vector<double> x = cfsense::cholesky_solve(*l, b);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(x[i], x_true[i], 1e-10);
}

TEST(Linalg, CholeskyInverse) {
  const Mat<double> a = random_spd(4, 9);
  const auto l = cfsense::cholesky(a);
  ASSERT_TRUE(l.has_value());
  const Mat<double> inv = cfsense::cholesky_inverse(*l);
  const Mat<double> prod = cfsense::matmul(a, inv);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(prod(i, j), i == j ? 1.0 : 0.0, 1e-10);
}

TEST(Linalg, JitterEscalatesAndFlags) {
  // Rank-deficient PSD matrix: ones everywhere.
  Mat<double> a(3, 3, 1.0);
  const auto f = cfsense::cholesky_with_jitter(a);
  EXPECT_TRUE(f.jittered);
  EXPECT_GT(f.jitter, 0.0);
  EXPECT_LE(f.jitter, 1e-6);
}

TEST(Linalg, JitterThrowsWhenHopeless) {
  Mat<double> a = Mat<double>::identity(2);
  a(0, 0) = -5.0;
  EXPECT_THROW(cfsense::cholesky_with_jitter(a), cfsense::NotPositiveDefinite);
}

TEST(Linalg, LogDetMatchesProductOfPivots) {
  const Mat<double> a = random_spd(3, 11);
  const auto l = cfsense::cholesky(a);
  ASSERT_TRUE(l.has_value());
  const double logdet = cfsense::logdet_from_cholesky(*l);
  // 3x3 determinant directly.
  const double det =
      a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
      a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
      a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
  EXPECT_NEAR(logdet, std::log(det), 1e-10);
}

TEST(Linalg, EigenvaluesOfDiagonalMatrix) {
  Mat<double> a(3, 3);
  a(0, 0) = 3.0;
  a(1, 1) = -1.0;
  a(2, 2) = 2.0;
  const std::vector<double> eig = cfsense::symmetric_eigenvalues(a);
  ASSERT_EQ(eig.size(), 3u);
  EXPECT_NEAR(eig[0], -1.0, 1e-12);
  EXPECT_NEAR(eig[1], 2.0, 1e-12);
  EXPECT_NEAR(eig[2], 3.0, 1e-12);
}

TEST(Linalg, EigenvaluesMatchCharacteristicPolynomial) {
  // Known 2x2: [[2, 1], [1, 2]] has eigenvalues 1 and 3.
  Mat<double> a(2, 2);
  a(0, 0) = 2.0;
  a(0, 1) = 1.0;
  a(1, 0) = 1.0;
  a(1, 1) = 2.0;
  const std::vector<double> eig = cfsense::symmetric_eigenvalues(a);
  EXPECT_NEAR(eig[0], 1.0, 1e-12);
  EXPECT_NEAR(eig[1], 3.0, 1e-12);
}

TEST(Linalg, EigenvalueSumAndProductInvariants) {
  // Random SPD: eigenvalue sum equals trace, product equals determinant
  // (via Cholesky), all positive.
  const Mat<double> a = random_spd(5, 123);
  const std::vector<double> eig = cfsense::symmetric_eigenvalues(a);
  double trace = 0.0;
  for (std::size_t i = 0; i < 5; ++i) trace += a(i, i);
  double sum = 0.0;
  double logprod = 0.0;
  for (double e : eig) {
    EXPECT_GT(e, 0.0);
    sum += e;
    logprod += std::log(e);
  }
  EXPECT_NEAR(sum, trace, 1e-9 * std::abs(trace));
  const auto l = cfsense::cholesky(a);
  EXPECT_NEAR(logprod, cfsense::logdet_from_cholesky(*l), 1e-8);
}

TEST(Linalg, EigenRejectsNonSymmetric) {
  Mat<double> a(2, 2);
  a(0, 1) = 1.0;
  a(1, 0) = 0.0;
  EXPECT_THROW(cfsense::symmetric_eigenvalues(a), cfsense::NonSymmetricInput);
}

TEST(Linalg, GenericCholeskyOnTapeMatchesDouble) {
  // The same routine instantiated with autodiff variables must produce
  // identical values.
  const Mat<double> a = random_spd(3, 55);
  cfsense::ad::Tape tape;
  Mat<cfsense::ad::Var> av(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) av(i, j) = tape.variable(a(i, j));
  const auto l = cfsense::cholesky(a);
  const auto lv = cfsense::cholesky(av);
  ASSERT_TRUE(l.has_value());
  ASSERT_TRUE(lv.has_value());
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_DOUBLE_EQ((*lv)(i, j).value(), (*l)(i, j));
}

}  // namespace
