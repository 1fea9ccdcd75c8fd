#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vrom/error.hpp"
#include "vrom/gpr.hpp"
#include "vrom/sampling.hpp"

namespace vrom::fcnn {

enum class Activation { tanh, relu, prelu };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::prelu: return "prelu";
  }
  return "tanh";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "prelu") return Activation::prelu;
  throw Error("unknown activation '" + s + "'");
}

/// Affine map out = w * in + b. `slope` is the PReLU negative-side slope.
struct Layer {
  Eigen::MatrixXd w;
  Eigen::VectorXd b;
  double slope = 0.25;
};

/// Fully connected network: hidden layers apply the activation, the output
/// layer is linear. Inputs and outputs are standardized with training
/// statistics.
struct FcnnModel {
  std::vector<int> layer_sizes;  // d, hidden..., q
  Activation activation = Activation::tanh;
  std::vector<Layer> layers;
  Eigen::VectorXd x_mean, x_scale, y_mean, y_scale;

  std::size_t input_size() const { return static_cast<std::size_t>(layer_sizes.front()); }
  std::size_t output_size() const { return static_cast<std::size_t>(layer_sizes.back()); }

  void validate() const {
    require(layer_sizes.size() >= 2, "FcnnModel: need at least input and output layers");
    require(layers.size() + 1 == layer_sizes.size(), "FcnnModel: layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      require(layers[l].w.rows() == layer_sizes[l + 1] && layers[l].w.cols() == layer_sizes[l],
              "FcnnModel: weight shape mismatch in layer " + std::to_string(l));
      require(layers[l].b.size() == layer_sizes[l + 1], "FcnnModel: bias shape mismatch in layer " + std::to_string(l));
    }
  }

  /// Seeded uniform init in [-1, 1] / sqrt(fan_in); identity standardization.
  static FcnnModel initialize(std::vector<int> sizes, Activation act, std::uint64_t seed) {
    FcnnModel m;
    m.layer_sizes = std::move(sizes);
    m.activation = act;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
      const int in = m.layer_sizes[l], out = m.layer_sizes[l + 1];
      require(in >= 1 && out >= 1, "FcnnModel: layer sizes must be positive");
      const double scale = 1.0 / std::sqrt(static_cast<double>(in));
      Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd(out), 0.25};
      for (Eigen::Index i = 0; i < layer.w.size(); ++i) layer.w.data()[i] = scale * unif(rng);
      for (Eigen::Index i = 0; i < layer.b.size(); ++i) layer.b[i] = scale * unif(rng);
      m.layers.push_back(std::move(layer));
    }
    m.x_mean = Eigen::VectorXd::Zero(m.layer_sizes.front());
    m.x_scale = Eigen::VectorXd::Ones(m.layer_sizes.front());
    m.y_mean = Eigen::VectorXd::Zero(m.layer_sizes.back());
    m.y_scale = Eigen::VectorXd::Ones(m.layer_sizes.back());
    return m;
  }
};

namespace detail {

inline Eigen::MatrixXd activate(Activation act, const Eigen::MatrixXd& z, double slope) {
  switch (act) {
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::prelu: return z.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
  }
  return z;
}

}  // namespace detail

/// Network pass in standardized units; columns of `x` are samples.
inline Eigen::MatrixXd forward_batch(const FcnnModel& model, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    Eigen::MatrixXd z = layer.w * a;
    z.colwise() += layer.b;
    a = (l + 1 == model.layers.size()) ? z : detail::activate(model.activation, z, layer.slope);
  }
  return a;
}

inline Eigen::VectorXd forward(const FcnnModel& model, const Eigen::VectorXd& features) {
  require(features.size() == model.layer_sizes.front(), "forward: feature vector has the wrong length");
  return forward_batch(model, features);
}

/// De-standardized prediction for a raw feature vector.
inline Eigen::VectorXd predict(const FcnnModel& model, const Eigen::VectorXd& query) {
  require(query.size() == model.layer_sizes.front(), "predict: feature vector has the wrong length");
  const Eigen::VectorXd xs = (query - model.x_mean).cwiseQuotient(model.x_scale);
  return forward(model, xs).cwiseProduct(model.y_scale) + model.y_mean;
}

struct Gradients {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
  std::vector<double> slope;
};

/// Mean squared error over all entries of the batch and its gradient.
inline double loss_and_gradient(const FcnnModel& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& t,
                                Gradients* grad) {
  const std::size_t nl = model.layers.size();
  std::vector<Eigen::MatrixXd> acts(nl + 1), pre(nl);
  acts[0] = x;
  for (std::size_t l = 0; l < nl; ++l) {
    const auto& layer = model.layers[l];
    pre[l].noalias() = layer.w * acts[l];
    pre[l].colwise() += layer.b;
    acts[l + 1] = (l + 1 == nl) ? pre[l] : detail::activate(model.activation, pre[l], layer.slope);
  }
  const Eigen::MatrixXd diff = acts[nl] - t;
  const double count = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / count;
  if (!grad) return loss;

  grad->w.resize(nl);
  grad->b.resize(nl);
  grad->slope.assign(nl, 0.0);
  Eigen::MatrixXd delta = (2.0 / count) * diff;
  for (std::size_t l = nl; l-- > 0;) {
    grad->w[l].resize(delta.rows(), acts[l].rows());
    grad->w[l].noalias() = delta * acts[l].transpose();
    grad->b[l] = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd back;
    back.noalias() = model.layers[l].w.transpose() * delta;
    const auto& z = pre[l - 1];
    switch (model.activation) {
      case Activation::tanh: delta = back.array() * (1.0 - acts[l].array().square()); break;
      case Activation::relu: delta = back.array() * (z.array() > 0.0).cast<double>(); break;
      case Activation::prelu: {
        const double s = model.layers[l - 1].slope;
        const auto neg = (z.array() <= 0.0).cast<double>();
        grad->slope[l - 1] = (back.array() * neg * z.array()).sum();
        delta = back.array() * (1.0 - neg + s * neg);
        break;
      }
    }
  }
  return loss;
}

/// Flattened parameters: per layer w (column-major), b, then the PReLU slope
/// when the activation is PReLU and the layer is hidden.
inline std::vector<double> parameters(const FcnnModel& m) {
  std::vector<double> p;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& L = m.layers[l];
    p.insert(p.end(), L.w.data(), L.w.data() + L.w.size());
    p.insert(p.end(), L.b.data(), L.b.data() + L.b.size());
    if (m.activation == Activation::prelu && l + 1 < m.layers.size()) p.push_back(L.slope);
  }
  return p;
}

inline void set_parameters(FcnnModel& m, const std::vector<double>& p) {
  std::size_t k = 0;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto& L = m.layers[l];
    require(k + static_cast<std::size_t>(L.w.size() + L.b.size()) <= p.size(), "set_parameters: vector too short");
    std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(k), L.w.size(), L.w.data());
    k += static_cast<std::size_t>(L.w.size());
    std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(k), L.b.size(), L.b.data());
    k += static_cast<std::size_t>(L.b.size());
    if (m.activation == Activation::prelu && l + 1 < m.layers.size()) L.slope = p[k++];
  }
  require(k == p.size(), "set_parameters: vector length mismatch");
}

inline std::vector<double> flatten(const FcnnModel& m, const Gradients& g) {
  std::vector<double> p;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    p.insert(p.end(), g.w[l].data(), g.w[l].data() + g.w[l].size());
    p.insert(p.end(), g.b[l].data(), g.b[l].data() + g.b[l].size());
    if (m.activation == Activation::prelu && l + 1 < m.layers.size()) p.push_back(g.slope[l]);
  }
  return p;
}

// --- Training ----------------------------------------------------------------

struct TrainHyperparameters {
  double learning_rate = 1e-4;
  int hidden_layers = 2;
  int neurons = 60;
  int batch_size = 4;
  Activation activation = Activation::tanh;

  bool operator==(const TrainHyperparameters&) const = default;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  int max_epochs = 5000;
  int patience = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// One standard deviation shared by all output columns instead of one per column.
  bool shared_target_scale = false;
};

struct TrainResult {
  FcnnModel model;
  double best_test_mse = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int epochs_run = 0;
  std::vector<double> train_loss;
  std::vector<double> test_loss;
};

namespace detail {

inline void column_stats(const Eigen::MatrixXd& rows, Eigen::VectorXd& mean, Eigen::VectorXd& scale) {
  mean = rows.colwise().mean().transpose();
  scale.resize(rows.cols());
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    const double sd = std::sqrt((rows.col(c).array() - mean[c]).square().mean());
    scale[c] = sd > 1e-300 ? sd : 1.0;
  }
}

inline Eigen::MatrixXd standardize_cols(const Eigen::MatrixXd& rows, const Eigen::VectorXd& mean,
                                        const Eigen::VectorXd& scale) {
  // rows: samples x features -> features x samples
  return ((rows.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array()).matrix().transpose();
}

}  // namespace detail

/// Adam on MSE with early stopping on the test-subset MSE (standardized
/// units). Returns the snapshot with the lowest test MSE. With an empty test
/// set the training MSE drives early stopping.
inline TrainResult train(const Eigen::MatrixXd& train_x, const Eigen::MatrixXd& train_y, const Eigen::MatrixXd& test_x,
                         const Eigen::MatrixXd& test_y, const TrainHyperparameters& hp,
                         const TrainOptions& options = {}) {
  require(train_x.rows() >= 2, "train: at least two training rows are required");
  require(train_x.rows() == train_y.rows(), "train: feature/target row mismatch");
  require(test_x.rows() == test_y.rows(), "train: test feature/target row mismatch");
  require(test_x.rows() == 0 || (test_x.cols() == train_x.cols() && test_y.cols() == train_y.cols()),
          "train: test set has the wrong shape");
  require(hp.hidden_layers >= 0 && hp.neurons >= 1 && hp.batch_size >= 1 && hp.learning_rate > 0.0,
          "train: invalid hyperparameters");

  std::vector<int> sizes{static_cast<int>(train_x.cols())};
  for (int i = 0; i < hp.hidden_layers; ++i) sizes.push_back(hp.neurons);
  sizes.push_back(static_cast<int>(train_y.cols()));

  std::mt19937_64 seeder(options.seed);
  TrainResult res;
  FcnnModel model = FcnnModel::initialize(sizes, hp.activation, seeder());
  detail::column_stats(train_x, model.x_mean, model.x_scale);
  detail::column_stats(train_y, model.y_mean, model.y_scale);
  if (options.shared_target_scale) {
    const double sd = std::sqrt((train_y.rowwise() - model.y_mean.transpose()).array().square().mean());
    model.y_scale.setConstant(sd > 1e-300 ? sd : 1.0);
  }
  const Eigen::MatrixXd xs = detail::standardize_cols(train_x, model.x_mean, model.x_scale);
  const Eigen::MatrixXd ys = detail::standardize_cols(train_y, model.y_mean, model.y_scale);
  const bool has_test = test_x.rows() > 0;
  const Eigen::MatrixXd xt = has_test ? detail::standardize_cols(test_x, model.x_mean, model.x_scale) : xs;
  const Eigen::MatrixXd yt = has_test ? detail::standardize_cols(test_y, model.y_mean, model.y_scale) : ys;

  const std::size_t nl = model.layers.size();
  Gradients m1, m2, g;
  m1.w.resize(nl); m1.b.resize(nl); m1.slope.assign(nl, 0.0);
  m2 = m1;
  for (std::size_t l = 0; l < nl; ++l) {
    m1.w[l] = m2.w[l] = Eigen::MatrixXd::Zero(model.layers[l].w.rows(), model.layers[l].w.cols());
    m1.b[l] = m2.b[l] = Eigen::VectorXd::Zero(model.layers[l].b.size());
  }

  std::mt19937_64 shuffle_rng(seeder());
  const Eigen::Index n = xs.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::Index batch = std::min<Eigen::Index>(hp.batch_size, n);
  long long step = 0;
  res.model = model;
  int since_best = 0;
  Eigen::MatrixXd bx, by;

  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index len = std::min(batch, n - start);
      bx.resize(xs.rows(), len);
      by.resize(ys.rows(), len);
      for (Eigen::Index k = 0; k < len; ++k) {
        bx.col(k) = xs.col(order[static_cast<std::size_t>(start + k)]);
        by.col(k) = ys.col(order[static_cast<std::size_t>(start + k)]);
      }
      loss_and_gradient(model, bx, by, &g);
      ++step;
      const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(step));
      const double lr = hp.learning_rate;
      // Bias corrections folded into the step size and epsilon.
      const double b1 = options.beta1, b2 = options.beta2;
      const double step_size = lr * std::sqrt(c2) / c1, eps_hat = options.epsilon * std::sqrt(c2);
      auto adam = [&](double* param, double* mom1, double* mom2, const double* grad_, Eigen::Index size) {
        for (Eigen::Index i = 0; i < size; ++i) {
          const double gi = grad_[i];
          mom1[i] = b1 * mom1[i] + (1.0 - b1) * gi;
          mom2[i] = b2 * mom2[i] + (1.0 - b2) * gi * gi;
          param[i] -= step_size * mom1[i] / (std::sqrt(mom2[i]) + eps_hat);
        }
      };
      for (std::size_t l = 0; l < nl; ++l) {
        auto& layer = model.layers[l];
        adam(layer.w.data(), m1.w[l].data(), m2.w[l].data(), g.w[l].data(), layer.w.size());
        adam(layer.b.data(), m1.b[l].data(), m2.b[l].data(), g.b[l].data(), layer.b.size());
        if (model.activation == Activation::prelu && l + 1 < nl) {
          m1.slope[l] = options.beta1 * m1.slope[l] + (1.0 - options.beta1) * g.slope[l];
          m2.slope[l] = options.beta2 * m2.slope[l] + (1.0 - options.beta2) * g.slope[l] * g.slope[l];
          model.layers[l].slope -= step_size * m1.slope[l] / (std::sqrt(m2.slope[l]) + eps_hat);
        }
      }
    }
    const double train_mse = loss_and_gradient(model, xs, ys, nullptr);
    const double test_mse = has_test ? loss_and_gradient(model, xt, yt, nullptr) : train_mse;
    if (!std::isfinite(train_mse) || !std::isfinite(test_mse))
      throw Error("train: loss became non-finite at epoch " + std::to_string(epoch));
    res.train_loss.push_back(train_mse);
    res.test_loss.push_back(test_mse);
    res.epochs_run = epoch;
    if (test_mse < res.best_test_mse) {
      res.best_test_mse = test_mse;
      res.best_epoch = epoch;
      res.model = model;
      since_best = 0;
    } else if (++since_best >= options.patience) {
      break;
    }
  }
  return res;
}

// --- Hyperparameter search --------------------------------------------------

/// Discrete design space: learning rate, hidden layers, neurons per layer,
/// batch size and activation, each on a fixed grid.
struct HyperparameterSpace {
  double lr_min = 1e-6, lr_max = 1e-4, lr_step = 5e-6;
  int layers_min = 1, layers_max = 8, layers_step = 1;
  int neurons_min = 4, neurons_max = 204, neurons_step = 8;
  int batch_min = 1, batch_max = 8, batch_step = 1;
  std::vector<Activation> activations{Activation::tanh, Activation::relu, Activation::prelu};

  int lr_count() const { return static_cast<int>(std::floor((lr_max - lr_min) / lr_step + 1e-9)) + 1; }
  int layers_count() const { return (layers_max - layers_min) / layers_step + 1; }
  int neurons_count() const { return (neurons_max - neurons_min) / neurons_step + 1; }
  int batch_count() const { return (batch_max - batch_min) / batch_step + 1; }
  int activation_count() const { return static_cast<int>(activations.size()); }

  std::array<int, 5> counts() const {
    return {lr_count(), layers_count(), neurons_count(), batch_count(), activation_count()};
  }

  std::size_t size() const {
    std::size_t s = 1;
    for (int c : counts()) s *= static_cast<std::size_t>(c);
    return s;
  }

  TrainHyperparameters at(const std::array<int, 5>& idx) const {
    return {lr_min + idx[0] * lr_step, layers_min + idx[1] * layers_step, neurons_min + idx[2] * neurons_step,
            batch_min + idx[3] * batch_step, activations[static_cast<std::size_t>(idx[4])]};
  }

  /// Grid index of hp, or nullopt when hp is off the grid.
  std::optional<std::array<int, 5>> index_of(const TrainHyperparameters& hp) const {
    std::array<int, 5> idx{};
    idx[0] = static_cast<int>(std::llround((hp.learning_rate - lr_min) / lr_step));
    idx[1] = (hp.hidden_layers - layers_min) / layers_step;
    idx[2] = (hp.neurons - neurons_min) / neurons_step;
    idx[3] = (hp.batch_size - batch_min) / batch_step;
    auto it = std::find(activations.begin(), activations.end(), hp.activation);
    if (it == activations.end()) return std::nullopt;
    idx[4] = static_cast<int>(it - activations.begin());
    const auto c = counts();
    for (int k = 0; k < 5; ++k)
      if (idx[k] < 0 || idx[k] >= c[k]) return std::nullopt;
    if (!(at(idx) == hp)) return std::nullopt;
    return idx;
  }

  bool contains(const TrainHyperparameters& hp) const { return index_of(hp).has_value(); }

  std::array<int, 5> unflatten(std::size_t flat) const {
    const auto c = counts();
    std::array<int, 5> idx{};
    for (int k = 4; k >= 0; --k) {
      idx[k] = static_cast<int>(flat % static_cast<std::size_t>(c[k]));
      flat /= static_cast<std::size_t>(c[k]);
    }
    return idx;
  }

  std::size_t flatten(const std::array<int, 5>& idx) const {
    const auto c = counts();
    std::size_t flat = 0;
    for (int k = 0; k < 5; ++k) flat = flat * static_cast<std::size_t>(c[k]) + static_cast<std::size_t>(idx[k]);
    return flat;
  }

  /// Surrogate coordinates: ordinal axes scaled to [0, 1], activation one-hot.
  Eigen::VectorXd encode(const std::array<int, 5>& idx) const {
    const auto c = counts();
    Eigen::VectorXd e = Eigen::VectorXd::Zero(4 + activation_count());
    for (int k = 0; k < 4; ++k) e[k] = c[k] > 1 ? static_cast<double>(idx[k]) / (c[k] - 1) : 0.0;
    e[4 + idx[4]] = 1.0;
    return e;
  }
};

struct Trial {
  TrainHyperparameters hyperparameters;
  double objective = std::numeric_limits<double>::infinity();
};

struct SearchResult {
  TrainHyperparameters best;
  double best_objective = std::numeric_limits<double>::infinity();
  std::vector<Trial> trials;
};

using SearchObjective = std::function<double(const TrainHyperparameters&, std::size_t trial_index)>;

namespace detail {

inline double evaluate_trial(const SearchObjective& objective, const TrainHyperparameters& hp, std::size_t i) {
  try {
    const double v = objective(hp, i);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
}

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline void record(SearchResult& r, const TrainHyperparameters& hp, double v) {
  if (r.trials.empty() || v < r.best_objective) {
    r.best_objective = v;
    r.best = hp;
  }
  r.trials.push_back({hp, v});
}

}  // namespace detail

/// Sequential model-based search: a Latin hypercube design over the grid for
/// the first max(5, trials / 5) trials, then expected-improvement proposals
/// from a GP surrogate of log(objective). Failed trials score +inf.
inline SearchResult bayesian_search(const HyperparameterSpace& space, const SearchObjective& objective, int trials,
                                    std::uint64_t seed) {
  require(trials >= 1, "bayesian_search: at least one trial is required");
  const auto counts = space.counts();
  const int n_init = std::min(trials, std::max(5, trials / 5));
  SearchResult result;
  std::vector<std::size_t> evaluated;

  const Eigen::MatrixXd design = sampling::lhs_unit(static_cast<std::size_t>(n_init), 5, seed);
  for (int i = 0; i < n_init; ++i) {
    std::array<int, 5> idx{};
    for (int k = 0; k < 5; ++k)
      idx[k] = std::min(counts[k] - 1, static_cast<int>(std::floor(design(i, k) * counts[k])));
    evaluated.push_back(space.flatten(idx));
    const auto hp = space.at(idx);
    detail::record(result, hp, detail::evaluate_trial(objective, hp, result.trials.size()));
  }

  const std::size_t total = space.size();
  for (int t = n_init; t < trials; ++t) {
    // Surrogate on log objective; failed trials take the worst finite value plus one.
    const auto m = static_cast<Eigen::Index>(evaluated.size());
    Eigen::MatrixXd x(m, 4 + space.activation_count());
    Eigen::VectorXd y(m);
    double worst = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < m; ++i)
      if (std::isfinite(result.trials[static_cast<std::size_t>(i)].objective))
        worst = std::max(worst, std::log(std::max(result.trials[static_cast<std::size_t>(i)].objective, 1e-300)));
    if (!std::isfinite(worst)) worst = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      x.row(i) = space.encode(space.unflatten(evaluated[static_cast<std::size_t>(i)])).transpose();
      const double v = result.trials[static_cast<std::size_t>(i)].objective;
      y[i] = std::isfinite(v) ? std::log(std::max(v, 1e-300)) : worst + 1.0;
    }
    gpr::FitOptions fo;
    fo.jitter = 1e-6;
    fo.restarts = 3;
    fo.seed = seed + static_cast<std::uint64_t>(t);
    const auto surrogate = gpr::fit(x, y, fo);
    const double best_y = y.minCoeff();

    std::vector<std::size_t> sorted = evaluated;
    std::sort(sorted.begin(), sorted.end());
    double best_ei = -1.0;
    std::size_t best_flat = 0;
    for (std::size_t flat = 0; flat < total; ++flat) {
      if (std::binary_search(sorted.begin(), sorted.end(), flat)) continue;
      const auto pred = surrogate.predict(space.encode(space.unflatten(flat)));
      const double mu = pred.mean[0];
      const double sd = std::sqrt(pred.variance[0]);
      double ei = 0.0;
      if (sd > 1e-12) {
        const double z = (best_y - mu) / sd;
        ei = (best_y - mu) * detail::normal_cdf(z) + sd * detail::normal_pdf(z);
      } else {
        ei = std::max(0.0, best_y - mu);
      }
      if (ei > best_ei) {
        best_ei = ei;
        best_flat = flat;
      }
    }
    evaluated.push_back(best_flat);
    const auto hp = space.at(space.unflatten(best_flat));
    detail::record(result, hp, detail::evaluate_trial(objective, hp, result.trials.size()));
  }
  return result;
}

/// Uniform random search over the grid; baseline for the model-based search.
inline SearchResult random_search(const HyperparameterSpace& space, const SearchObjective& objective, int trials,
                                  std::uint64_t seed) {
  require(trials >= 1, "random_search: at least one trial is required");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, space.size() - 1);
  SearchResult result;
  for (int t = 0; t < trials; ++t) {
    const auto hp = space.at(space.unflatten(pick(rng)));
    detail::record(result, hp, detail::evaluate_trial(objective, hp, result.trials.size()));
  }
  return result;
}

// --- JSON ------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const TrainHyperparameters& hp) {
  nlohmann::ordered_json j;
  j["learning_rate"] = hp.learning_rate;
  j["hidden_layers"] = hp.hidden_layers;
  j["neurons"] = hp.neurons;
  j["batch_size"] = hp.batch_size;
  j["activation"] = activation_name(hp.activation);
  return j;
}

inline TrainHyperparameters hyperparameters_from_json(const nlohmann::json& j) {
  TrainHyperparameters hp;
  hp.learning_rate = j.at("learning_rate").get<double>();
  hp.hidden_layers = j.at("hidden_layers").get<int>();
  hp.neurons = j.at("neurons").get<int>();
  hp.batch_size = j.at("batch_size").get<int>();
  hp.activation = activation_from_name(j.at("activation").get<std::string>());
  return hp;
}

inline nlohmann::ordered_json to_json(const FcnnModel& m) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::ordered_json j;
  j["layer_sizes"] = m.layer_sizes;
  j["activation"] = activation_name(m.activation);
  auto layers = nlohmann::ordered_json::array();
  for (const auto& L : m.layers) {
    nlohmann::ordered_json lj;
    lj["weights"] = std::vector<double>(L.w.data(), L.w.data() + L.w.size());  // column-major
    lj["biases"] = vec(L.b);
    lj["prelu_slope"] = L.slope;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  j["input_mean"] = vec(m.x_mean);
  j["input_scale"] = vec(m.x_scale);
  j["output_mean"] = vec(m.y_mean);
  j["output_scale"] = vec(m.y_scale);
  return j;
}

inline FcnnModel model_from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  FcnnModel m;
  try {
    m.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
    m.activation = activation_from_name(j.at("activation").get<std::string>());
    const auto& layers = j.at("layers");
    require(layers.size() + 1 == m.layer_sizes.size(), "FCNN JSON: layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto w = layers[l].at("weights").get<std::vector<double>>();
      const int out = m.layer_sizes[l + 1], in = m.layer_sizes[l];
      require(w.size() == static_cast<std::size_t>(out) * static_cast<std::size_t>(in), "FCNN JSON: weight size");
      Layer L{Eigen::Map<const Eigen::MatrixXd>(w.data(), out, in), vec(layers[l].at("biases")),
              layers[l].at("prelu_slope").get<double>()};
      m.layers.push_back(std::move(L));
    }
    m.x_mean = vec(j.at("input_mean"));
    m.x_scale = vec(j.at("input_scale"));
    m.y_mean = vec(j.at("output_mean"));
    m.y_scale = vec(j.at("output_scale"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("FCNN JSON: ") + e.what());
  }
  m.validate();
  return m;
}

}  // namespace vrom::fcnn
