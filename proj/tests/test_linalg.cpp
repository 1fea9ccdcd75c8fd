#include <cmath>
#include <complex>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "vrom/linalg.hpp"

using namespace vrom;

namespace {

/// Roots of the monic cubic x^3 + b x^2 + c x + d with three real roots, by
/// the trigonometric formula.
std::array<double, 3> cubic_real_roots(double b, double c, double d) {
  const double p = c - b * b / 3.0;
  const double q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
  const double r = 2.0 * std::sqrt(-p / 3.0);
  const double phi = std::acos(3.0 * q / (p * r));
  std::array<double, 3> roots{};
  for (int k = 0; k < 3; ++k) roots[k] = r * std::cos((phi - 2.0 * std::numbers::pi * k) / 3.0) - b / 3.0;
  std::sort(roots.begin(), roots.end(), std::greater<>());
  return roots;
}

}  // namespace

TEST(Svd, IdentityAndDiagonal) {
  const auto f = linalg::svd(Eigen::Matrix3d::Identity());
  EXPECT_TRUE(f.singular_values.isApprox(Eigen::Vector3d::Ones(), 1e-15));
  Eigen::Matrix2d d;
  d << 3, 0, 0, 0;
  const auto g = linalg::svd(d);
  EXPECT_NEAR(g.singular_values[0], 3.0, 1e-15);
  EXPECT_NEAR(g.singular_values[1], 0.0, 1e-15);
  EXPECT_EQ(g.rank(), 1);
}

TEST(Svd, StepMatrixMatchesCharacteristicPolynomial) {
  Eigen::Matrix3d u;
  u << 1, 0, 0, 1, 1, 0, 1, 1, 1;
  const Eigen::Matrix3d a = u.transpose() * u;
  // det(lambda I - A) = lambda^3 - tr(A) lambda^2 + c2 lambda - det(A)
  const double tr = a.trace();
  const double c2 = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0) + a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0) +
                    a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1);
  const double det = a.determinant();
  const auto lambda = cubic_real_roots(-tr, c2, -det);
  const auto f = linalg::svd(u);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(f.singular_values[k], std::sqrt(lambda[k]), 1e-12);
}

TEST(Svd, FactorInvariants) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index n = 5 + trial, m = 3 + trial / 2;
    Eigen::MatrixXd a(n, m);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
    const auto f = linalg::svd(a);
    for (Eigen::Index i = 1; i < f.singular_values.size(); ++i)
      EXPECT_GE(f.singular_values[i - 1], f.singular_values[i]);
    EXPECT_GE(f.singular_values.minCoeff(), 0.0);
    const Eigen::Index r = f.singular_values.size();
    EXPECT_TRUE((f.u_basis.transpose() * f.u_basis).isApprox(Eigen::MatrixXd::Identity(r, r), 1e-10));
    EXPECT_TRUE((f.v_basis.transpose() * f.v_basis).isApprox(Eigen::MatrixXd::Identity(r, r), 1e-10));
    EXPECT_LT((f.reconstruct() - a).norm(), 1e-10 * a.norm());
  }
}

TEST(Svd, RejectsNonFinite) {
  Eigen::Matrix2d a = Eigen::Matrix2d::Identity();
  a(0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(linalg::svd(a), Error);
}

TEST(PseudoInverse, StepSystem) {
  Eigen::Matrix3d u;
  u << 1, 0, 0, 1, 1, 0, 1, 1, 1;
  const auto f = linalg::svd(u);
  EXPECT_TRUE(linalg::pseudo_inverse_apply(f, Eigen::Vector3d(1, 2, 3)).isApprox(Eigen::Vector3d::Ones(), 1e-12));
  EXPECT_TRUE(linalg::pseudo_inverse_apply(f, Eigen::Vector3d::Zero()).isZero(0.0));
}

TEST(PseudoInverse, RankDeficientMinimumNorm) {
  Eigen::Matrix2d a;
  a << 1, 1, 1, 1;
  const Eigen::VectorXd x = linalg::least_squares(a, Eigen::Vector2d(2, 2));
  EXPECT_TRUE(x.isApprox(Eigen::Vector2d(1, 1), 1e-12));
  const Eigen::Vector2d null_dir(1, -1);
  for (double eps : {1e-3, -1e-3, 0.5}) EXPECT_GT((x + eps * null_dir).norm(), x.norm());
}

TEST(PseudoInverse, ZeroMatrixGivesZero) {
  const Eigen::VectorXd x = linalg::least_squares(Eigen::MatrixXd::Zero(3, 2), Eigen::Vector3d(1, 2, 3));
  EXPECT_TRUE(x.isZero(0.0));
  EXPECT_EQ(x.size(), 2);
}

TEST(PseudoInverse, SquareAndOverdeterminedConsistentSystems) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd sq = Eigen::MatrixXd::Random(6, 6) + 6.0 * Eigen::MatrixXd::Identity(6, 6);
    const Eigen::VectorXd b = oracle::random_vector(6, rng);
    EXPECT_LT((sq * linalg::least_squares(sq, b) - b).norm(), 1e-9 * b.norm());

    const Eigen::MatrixXd tall = Eigen::MatrixXd::Random(12, 5);
    const Eigen::VectorXd x_true = oracle::random_vector(5, rng);
    const Eigen::VectorXd rhs = tall * x_true;
    EXPECT_LT((tall * linalg::least_squares(tall, rhs) - rhs).norm(), 1e-9 * rhs.norm());
  }
}

TEST(Rms, Basics) {
  EXPECT_DOUBLE_EQ(linalg::rms(Eigen::Vector2d(3, 4)), std::sqrt(12.5));
  EXPECT_DOUBLE_EQ(linalg::rms(Eigen::VectorXd()), 0.0);
}
