#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "vrom/fcnn.hpp"

using namespace vrom;
using namespace vrom::fcnn;

namespace {

double activate_scalar(Activation a, double z, double slope) {
  switch (a) {
    case Activation::tanh: return std::tanh(z);
    case Activation::relu: return z > 0 ? z : 0.0;
    case Activation::prelu: return z > 0 ? z : slope * z;
  }
  return z;
}

/// Plain-loop forward pass, independent of the Eigen batch code.
Eigen::VectorXd forward_loops(const FcnnModel& m, const Eigen::VectorXd& x) {
  std::vector<double> a(x.data(), x.data() + x.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& L = m.layers[l];
    std::vector<double> next(static_cast<std::size_t>(L.w.rows()));
    for (Eigen::Index i = 0; i < L.w.rows(); ++i) {
      double z = L.b[i];
      for (Eigen::Index j = 0; j < L.w.cols(); ++j) z += L.w(i, j) * a[static_cast<std::size_t>(j)];
      next[static_cast<std::size_t>(i)] = (l + 1 == m.layers.size()) ? z : activate_scalar(m.activation, z, L.slope);
    }
    a = std::move(next);
  }
  return Eigen::Map<Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
}

Eigen::MatrixXd random_rows(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
  Eigen::MatrixXd x(n, d);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

double max_relative_gradient_error(FcnnModel model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& t) {
  Gradients g;
  loss_and_gradient(model, x, t, &g);
  const auto analytic = flatten(model, g);
  auto p = parameters(model);
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double h = 1e-6, saved = p[i];
    p[i] = saved + h;
    set_parameters(model, p);
    const double fp = loss_and_gradient(model, x, t, nullptr);
    p[i] = saved - h;
    set_parameters(model, p);
    const double fm = loss_and_gradient(model, x, t, nullptr);
    p[i] = saved;
    set_parameters(model, p);
    const double fd = (fp - fm) / (2 * h);
    const double err = std::abs(fd - analytic[i]) / std::max(1e-3, std::abs(fd) + std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST(Forward, ZeroWeightsGiveZero) {
  auto m = FcnnModel::initialize({3, 5, 2}, Activation::tanh, 1);
  for (auto& L : m.layers) {
    L.w.setZero();
    L.b.setZero();
  }
  EXPECT_TRUE(forward(m, Eigen::Vector3d(1, -2, 3)).isZero(0.0));
}

TEST(Forward, ReluActiveRegionIsAffine) {
  auto m = FcnnModel::initialize({2, 2, 2}, Activation::relu, 1);
  m.layers[0].w = Eigen::Matrix2d::Identity();
  m.layers[0].b = Eigen::Vector2d(0.5, 0.25);
  m.layers[1].w = Eigen::Matrix2d::Identity();
  m.layers[1].b.setZero();
  EXPECT_TRUE(forward(m, Eigen::Vector2d(1.0, 2.0)).isApprox(Eigen::Vector2d(1.5, 2.25), 1e-15));
}

TEST(Forward, MatchesLoopEvaluation) {
  std::mt19937_64 rng(4);
  for (auto act : {Activation::tanh, Activation::relu, Activation::prelu}) {
    auto m = FcnnModel::initialize({3, 7, 6, 2}, act, 11);
    m.layers[0].slope = 0.1;
    m.layers[1].slope = 0.4;
    for (int k = 0; k < 20; ++k) {
      const Eigen::VectorXd x = oracle::random_vector(3, rng, 2.0);
      EXPECT_LT((forward(m, x) - forward_loops(m, x)).norm(), 1e-12);
    }
  }
}

TEST(Backprop, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (auto act : {Activation::tanh, Activation::relu, Activation::prelu}) {
    auto m = FcnnModel::initialize({2, 5, 5, 3}, act, 2);
    const Eigen::MatrixXd x = random_rows(6, 2, rng).transpose();
    const Eigen::MatrixXd t = random_rows(6, 3, rng).transpose();
    EXPECT_LT(max_relative_gradient_error(m, x, t), 1e-5) << activation_name(act);
  }
}

TEST(Train, ConstantZeroTargets) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd x = random_rows(20, 2, rng);
  TrainOptions opt;
  opt.max_epochs = 200;
  const auto r = train(x, Eigen::MatrixXd::Zero(20, 2), x.topRows(5), Eigen::MatrixXd::Zero(5, 2),
                       {2e-2, 1, 8, 2, Activation::tanh}, opt);
  double mse = 0.0;
  for (Eigen::Index i = 0; i < 20; ++i) mse += predict(r.model, x.row(i).transpose()).squaredNorm() / 40.0;
  EXPECT_LT(mse, 1e-6);
}

TEST(Train, LinearMapReachesSmallTestError) {
  std::mt19937_64 rng(3);
  Eigen::Matrix<double, 2, 3> a;
  a << 1.0, -0.5, 2.0, 0.3, 0.8, -1.2;
  const Eigen::MatrixXd x = random_rows(60, 3, rng);
  const Eigen::MatrixXd y = x * a.transpose();
  const Eigen::MatrixXd xt = random_rows(20, 3, rng);
  const Eigen::MatrixXd yt = xt * a.transpose();
  TrainOptions opt;
  opt.max_epochs = 3000;
  opt.patience = 3000;
  const auto r = train(x, y, xt, yt, {1e-3, 1, 16, 4, Activation::tanh}, opt);
  EXPECT_LT(r.best_test_mse, 1e-4);
}

TEST(Train, SmoothedLossNonIncreasingAtSmallLearningRate) {
  std::mt19937_64 rng(3);
  Eigen::Matrix<double, 2, 3> a;
  a << 1.0, -0.5, 2.0, 0.3, 0.8, -1.2;
  const Eigen::MatrixXd x = random_rows(60, 3, rng);
  const Eigen::MatrixXd y = x * a.transpose();
  TrainOptions opt;
  opt.max_epochs = 500;
  const auto r = train(x, y, x, y, {1e-4, 1, 16, 4, Activation::tanh}, opt);
  const auto& loss = r.train_loss;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s + 10 <= loss.size(); s += 10) {
    double avg = 0.0;
    for (std::size_t k = s; k < s + 10; ++k) avg += loss[k] / 10.0;
    EXPECT_LE(avg, prev * (1.0 + 1e-3));
    prev = avg;
  }
}

TEST(Train, DeterministicPerSeed) {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd x = random_rows(16, 2, rng), y = random_rows(16, 3, rng);
  TrainOptions opt;
  opt.max_epochs = 30;
  opt.seed = 12;
  const TrainHyperparameters hp{5e-5, 2, 12, 3, Activation::prelu};
  const auto a = train(x, y, x.topRows(4), y.topRows(4), hp, opt);
  const auto b = train(x, y, x.topRows(4), y.topRows(4), hp, opt);
  EXPECT_EQ(parameters(a.model), parameters(b.model));
  EXPECT_EQ(a.test_loss, b.test_loss);
}

TEST(Train, EarlyStoppingReturnsBestSnapshot) {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd x = random_rows(10, 1, rng), y = random_rows(10, 1, rng);
  const Eigen::MatrixXd xt = random_rows(10, 1, rng), yt = random_rows(10, 1, rng);
  TrainOptions opt;
  opt.max_epochs = 3000;
  opt.patience = 20;
  const auto r = train(x, y, xt, yt, {1e-2, 2, 32, 1, Activation::relu}, opt);
  EXPECT_LT(r.epochs_run, 3000);
  EXPECT_EQ(r.epochs_run - r.best_epoch, 20);
  const auto xts = detail::standardize_cols(xt, r.model.x_mean, r.model.x_scale);
  const auto yts = detail::standardize_cols(yt, r.model.y_mean, r.model.y_scale);
  EXPECT_DOUBLE_EQ(loss_and_gradient(r.model, xts, yts, nullptr), r.best_test_mse);
}

TEST(Train, NonFiniteLossAbortsWithEpoch) {
  std::mt19937_64 rng(7);
  const Eigen::MatrixXd x = random_rows(10, 2, rng);
  const Eigen::MatrixXd y = random_rows(10, 1, rng);
  try {
    train(x, y, x, y, {1e300, 1, 4, 2, Activation::relu}, {});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Train, RejectsTooFewRows) {
  EXPECT_THROW(train(Eigen::MatrixXd::Zero(1, 2), Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd(0, 2),
                     Eigen::MatrixXd(0, 1), {}, {}),
               Error);
}

TEST(Predict, StandardizationRoundTrip) {
  std::mt19937_64 rng(9);
  const Eigen::MatrixXd x = random_rows(12, 2, rng) * 5.0, y = random_rows(12, 2, rng) * 100.0;
  TrainOptions opt;
  opt.max_epochs = 5;
  const auto r = train(x, y, x, y, {1e-4, 2, 4, 2, Activation::tanh}, opt);
  const Eigen::VectorXd q(Eigen::Vector2d(0.5, -2.0));
  const Eigen::VectorXd manual =
      forward(r.model, (q - r.model.x_mean).cwiseQuotient(r.model.x_scale)).cwiseProduct(r.model.y_scale) + r.model.y_mean;
  EXPECT_EQ(predict(r.model, q), manual);
}

TEST(Predict, SharedTargetScaleIsPooledDeviation) {
  Eigen::MatrixXd x(4, 1), y(4, 2);
  x << 0, 1, 2, 3;
  y << 1, 10, 3, 10, 1, 30, 3, 30;
  TrainOptions opt;
  opt.max_epochs = 2;
  opt.shared_target_scale = true;
  const auto r = train(x, y, x, y, {1e-4, 1, 4, 2, Activation::tanh}, opt);
  // Deviations are +-1 in the first column and +-10 in the second.
  const double pooled = std::sqrt((1.0 + 100.0) / 2.0);
  EXPECT_NEAR(r.model.y_scale[0], pooled, 1e-12);
  EXPECT_NEAR(r.model.y_scale[1], pooled, 1e-12);
  EXPECT_NEAR(r.model.y_mean[0], 2.0, 1e-12);
  EXPECT_NEAR(r.model.y_mean[1], 20.0, 1e-12);
}

TEST(Predict, ReproducesTrainingRowsAfterFit) {
  std::mt19937_64 rng(10);
  const Eigen::MatrixXd x = random_rows(8, 2, rng);
  Eigen::MatrixXd y(8, 1);
  y.col(0) = x.col(0) - 0.5 * x.col(1);
  TrainOptions opt;
  opt.max_epochs = 3000;
  const auto r = train(x, y, x, y, {3e-3, 1, 16, 2, Activation::tanh}, opt);
  for (Eigen::Index i = 0; i < 8; ++i) {
    const double std_err = (predict(r.model, x.row(i).transpose())[0] - y(i, 0)) / r.model.y_scale[0];
    EXPECT_LT(std_err * std_err, 8.0 * r.best_test_mse + 1e-12);
  }
}

TEST(FcnnJson, RoundTrip) {
  std::mt19937_64 rng(11);
  const Eigen::MatrixXd x = random_rows(10, 3, rng), y = random_rows(10, 4, rng);
  TrainOptions opt;
  opt.max_epochs = 3;
  const auto r = train(x, y, x, y, {1e-4, 2, 6, 2, Activation::prelu}, opt);
  const auto back = model_from_json(nlohmann::json::parse(to_json(r.model).dump()));
  EXPECT_EQ(parameters(back), parameters(r.model));
  EXPECT_EQ(predict(back, x.row(2).transpose()), predict(r.model, x.row(2).transpose()));
  EXPECT_EQ(to_json(back).dump(), to_json(r.model).dump());
  auto j = to_json(r.model);
  j["layer_sizes"] = std::vector<int>{3, 6, 4};
  EXPECT_THROW(model_from_json(j), Error);
}

TEST(HyperparameterSpace, GridShapeAndMembership) {
  const HyperparameterSpace s;
  EXPECT_EQ(s.lr_count(), 20);
  EXPECT_EQ(s.layers_count(), 8);
  EXPECT_EQ(s.neurons_count(), 26);
  EXPECT_EQ(s.batch_count(), 8);
  EXPECT_EQ(s.size(), 20u * 8u * 26u * 8u * 3u);
  for (std::size_t flat : {std::size_t{0}, std::size_t{1234}, s.size() - 1}) {
    const auto idx = s.unflatten(flat);
    EXPECT_EQ(s.flatten(idx), flat);
    EXPECT_TRUE(s.contains(s.at(idx)));
  }
  EXPECT_FALSE(s.contains({1.3e-5, 2, 12, 3, Activation::tanh}));
  EXPECT_FALSE(s.contains({1e-6, 2, 13, 3, Activation::tanh}));
  EXPECT_FALSE(s.contains({1e-6, 9, 12, 3, Activation::tanh}));
  EXPECT_NEAR(s.at(s.unflatten(s.size() - 1)).learning_rate, 9.6e-5, 1e-18);
}

namespace {

/// Smooth synthetic objective with a unique minimum at a known grid point.
double bowl(const HyperparameterSpace& s, const TrainHyperparameters& hp) {
  const auto idx = *s.index_of(hp);
  const std::array<int, 5> target{13, 2, 17, 5, 1};
  double v = 0.01;
  const auto c = s.counts();
  for (int k = 0; k < 4; ++k) {
    const double d = static_cast<double>(idx[k] - target[k]) / c[k];
    v += d * d;
  }
  return v + (idx[4] == target[4] ? 0.0 : 0.05);
}

}  // namespace

TEST(BayesianSearch, SingleTrial) {
  const HyperparameterSpace s;
  int calls = 0;
  const auto r = bayesian_search(s, [&](const TrainHyperparameters& hp, std::size_t) { ++calls; return bowl(s, hp); }, 1, 3);
  EXPECT_EQ(calls, 1);
  ASSERT_EQ(r.trials.size(), 1u);
  EXPECT_EQ(r.best, r.trials[0].hyperparameters);
}

TEST(BayesianSearch, ProposalsOnGridAndDeterministic) {
  const HyperparameterSpace s;
  auto obj = [&](const TrainHyperparameters& hp, std::size_t) { return bowl(s, hp); };
  const auto a = bayesian_search(s, obj, 12, 7);
  const auto b = bayesian_search(s, obj, 12, 7);
  ASSERT_EQ(a.trials.size(), 12u);
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    EXPECT_TRUE(s.contains(a.trials[i].hyperparameters));
    EXPECT_EQ(a.trials[i].hyperparameters, b.trials[i].hyperparameters);
    EXPECT_EQ(a.trials[i].objective, b.trials[i].objective);
  }
  EXPECT_EQ(a.best, b.best);
}

TEST(BayesianSearch, FailedTrialsScoreInfinity) {
  const HyperparameterSpace s;
  auto obj = [&](const TrainHyperparameters& hp, std::size_t i) -> double {
    if (i % 2 == 0) throw Error("loss became non-finite at epoch 3");
    return bowl(s, hp);
  };
  const auto r = bayesian_search(s, obj, 8, 2);
  for (std::size_t i = 0; i < r.trials.size(); i += 2) EXPECT_TRUE(std::isinf(r.trials[i].objective));
  EXPECT_TRUE(std::isfinite(r.best_objective));
}

TEST(BayesianSearch, NoWorseThanRandomSearchInAggregate) {
  const HyperparameterSpace s;
  auto obj = [&](const TrainHyperparameters& hp, std::size_t) { return bowl(s, hp); };
  double bayes_total = 0.0, random_total = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    bayes_total += bayesian_search(s, obj, 25, seed).best_objective;
    random_total += random_search(s, obj, 25, seed).best_objective;
  }
  EXPECT_LE(bayes_total, random_total);
}
