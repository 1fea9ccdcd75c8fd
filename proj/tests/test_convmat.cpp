#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "vrom/convmat.hpp"

using namespace vrom;

namespace {
TimeSignal signal_of(const Eigen::VectorXd& v) { return TimeSignal::make(TimeGrid::make(1.0, v.size()), v); }
}  // namespace

TEST(BuildInputMatrix, StepIsScaledLowerOnes) {
  const double alpha = 1.7;
  const auto u = build_input_matrix(make_step(TimeGrid::make(1.0, 3), alpha), 3, 1);
  Eigen::Matrix3d expected;
  expected << 1, 0, 0, 1, 1, 0, 1, 1, 1;
  EXPECT_TRUE(u.data.isApprox(alpha * expected, 1e-15));
  const auto u2 = build_input_matrix(make_step(TimeGrid::make(1.0, 3), alpha), 3, 2);
  EXPECT_TRUE(u2.data.isApprox(alpha * alpha * expected, 1e-15));
  EXPECT_EQ(u2.power, 2);
}

TEST(BuildInputMatrix, DirectSubstitution) {
  const auto u = build_input_matrix(signal_of(Eigen::Vector3d(1, 2, 3)), 2, 1);
  Eigen::Matrix<double, 3, 2> expected;
  expected << 1, 0, 2, 1, 3, 2;
  EXPECT_EQ(u.data, Eigen::MatrixXd(expected));
}

TEST(BuildInputMatrix, RejectsBadArguments) {
  const auto s = signal_of(Eigen::Vector3d(1, 2, 3));
  EXPECT_THROW(build_input_matrix(s, 4, 1), Error);
  EXPECT_THROW(build_input_matrix(s, 0, 1), Error);
  EXPECT_THROW(build_input_matrix(s, 2, 0), Error);
  EXPECT_THROW(build_input_matrix(s, 2, 4), Error);
}

TEST(BuildInputMatrix, PowerCommutesWithAssembly) {
  std::mt19937_64 rng(11);
  const auto s = signal_of(oracle::random_vector(40, rng));
  const auto u1 = build_input_matrix(s, 17, 1);
  for (int p = 2; p <= 3; ++p) {
    const auto up = build_input_matrix(s, 17, p);
    EXPECT_TRUE(up.data.isApprox(u1.data.array().pow(p).matrix(), 1e-15));
  }
}

TEST(BuildInputMatrix, RowSupportGrowsWithIndex) {
  std::mt19937_64 rng(5);
  Eigen::VectorXd v = oracle::random_vector(10, rng);
  v.array() += 2.0;  // strictly nonzero
  const auto u = build_input_matrix(signal_of(v), 6, 1);
  for (Eigen::Index i = 0; i < 6; ++i) EXPECT_EQ((u.data.row(i).array() != 0.0).count(), i + 1);
}

TEST(Convolve, PicksFirstColumnAndZeroKernel) {
  const auto u = build_input_matrix(make_step(TimeGrid::make(1.0, 3), 2.0), 3, 1);
  EXPECT_EQ(convolve(u, Eigen::Vector3d(1, 0, 0)), Eigen::VectorXd(Eigen::Vector3d(2, 2, 2)));
  EXPECT_TRUE(convolve(u, Eigen::Vector3d::Zero()).isZero(0.0));
  EXPECT_THROW(convolve(u, Eigen::Vector2d(1, 0)), Error);
}

TEST(Convolve, MatchesBruteForceLoops) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 8 + trial * 12;
    const auto s = signal_of(oracle::random_vector(n, rng, 2.0));
    const Eigen::VectorXd h = oracle::random_vector(8, rng);
    for (int p = 1; p <= 3; ++p) {
      const Eigen::VectorXd y = convolve(build_input_matrix(s, 8, p), h);
      EXPECT_LT(oracle::relative_error(y, oracle::brute_force_convolution(s.values, h, p)), 1e-12);
    }
  }
}

TEST(Convolve, LinearInKernel) {
  std::mt19937_64 rng(3);
  const auto s = signal_of(oracle::random_vector(50, rng));
  const auto u = build_input_matrix(s, 20, 1);
  const Eigen::VectorXd h1 = oracle::random_vector(20, rng), h2 = oracle::random_vector(20, rng);
  const double a = 0.7, b = -2.3;
  const Eigen::VectorXd lhs = convolve(u, a * h1 + b * h2);
  const Eigen::VectorXd rhs = a * convolve(u, h1) + b * convolve(u, h2);
  EXPECT_LT((lhs - rhs).norm(), 1e-13 * rhs.norm());
}
