#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <json.hpp>

#include "vrom/error.hpp"
#include "vrom/optim.hpp"

namespace vrom::gpr {

/// sigma_f2 * exp(-|x - x'|^2 / (2 l^2))
inline double rbf_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& xp, double sigma_f2, double length) {
  return sigma_f2 * std::exp(-0.5 * (x - xp).squaredNorm() / (length * length));
}

/// Matern 5/2 with nu = sqrt(5):
/// sigma_f2 * (1 + nu r / l + (nu r)^2 / (3 l^2)) * exp(-nu r / l)
inline double matern52_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& xp, double sigma_f2, double length) {
  const double s = std::sqrt(5.0) * (x - xp).norm() / length;
  return sigma_f2 * (1.0 + s + s * s / 3.0) * std::exp(-s);
}

/// w_rbf * k_RBF(sigma_rbf, l_rbf) + w_matern * k_Matern52(sigma_matern, l_matern)
struct Hyperparameters {
  double rbf_variance = 1.0;
  double rbf_length = 1.0;
  double matern_variance = 1.0;
  double matern_length = 1.0;
  double rbf_weight = 0.5;
  double matern_weight = 0.5;

  double prior_variance() const { return rbf_weight * rbf_variance + matern_weight * matern_variance; }

  void validate() const {
    require(rbf_variance > 0.0 && matern_variance > 0.0, "GPR: signal variances must be positive");
    require(rbf_length > 0.0 && matern_length > 0.0, "GPR: length scales must be positive");
    require(rbf_weight >= 0.0 && matern_weight >= 0.0, "GPR: mixture weights must be non-negative");
  }
};

inline double covariance(const Hyperparameters& hp, const Eigen::VectorXd& x, const Eigen::VectorXd& xp) {
  return hp.rbf_weight * rbf_kernel(x, xp, hp.rbf_variance, hp.rbf_length) +
         hp.matern_weight * matern52_kernel(x, xp, hp.matern_variance, hp.matern_length);
}

/// Gram matrix over the rows of `points`.
inline Eigen::MatrixXd gram_matrix(const Hyperparameters& hp, const Eigen::MatrixXd& points) {
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) k(i, j) = k(j, i) = covariance(hp, points.row(i), points.row(j));
  return k;
}

// Optimizer coordinates: log variances, log lengths, raw weights.
inline constexpr int kParamCount = 6;

inline Eigen::VectorXd pack(const Hyperparameters& hp) {
  Eigen::VectorXd p(kParamCount);
  p << std::log(hp.rbf_variance), std::log(hp.rbf_length), std::log(hp.matern_variance),
      std::log(hp.matern_length), hp.rbf_weight, hp.matern_weight;
  return p;
}

inline Hyperparameters unpack(const Eigen::VectorXd& p) {
  return {std::exp(p[0]), std::exp(p[1]), std::exp(p[2]), std::exp(p[3]), p[4], p[5]};
}

inline Eigen::VectorXd lower_bounds() {
  Eigen::VectorXd lo(kParamCount);
  lo << std::log(1e-4), std::log(1e-2), std::log(1e-4), std::log(1e-2), 0.0, 0.0;
  return lo;
}

inline Eigen::VectorXd upper_bounds() {
  Eigen::VectorXd hi(kParamCount);
  hi << std::log(1e4), std::log(1e2), std::log(1e4), std::log(1e2), 10.0, 10.0;
  return hi;
}

/// Summed log marginal likelihood of the columns of `targets` under a shared
/// zero-mean GP, with K + jitter I. Returns -inf if the Cholesky fails. When
/// `grad` is non-null it receives d/d(pack(hp)).
inline double log_marginal_likelihood(const Hyperparameters& hp, const Eigen::MatrixXd& inputs,
                                      const Eigen::MatrixXd& targets, double jitter,
                                      Eigen::VectorXd* grad = nullptr) {
  const Eigen::Index n = inputs.rows();
  const double q = static_cast<double>(targets.cols());
  Eigen::MatrixXd k_rbf(n, n), k_mat(n, n), d_rbf_len(n, n), d_mat_len(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double r2 = (inputs.row(i) - inputs.row(j)).squaredNorm();
      const double kr = hp.rbf_variance * std::exp(-0.5 * r2 / (hp.rbf_length * hp.rbf_length));
      const double s = std::sqrt(5.0 * r2) / hp.matern_length;
      const double es = std::exp(-s);
      const double km = hp.matern_variance * (1.0 + s + s * s / 3.0) * es;
      k_rbf(i, j) = k_rbf(j, i) = kr;
      k_mat(i, j) = k_mat(j, i) = km;
      d_rbf_len(i, j) = d_rbf_len(j, i) = kr * r2 / (hp.rbf_length * hp.rbf_length);
      d_mat_len(i, j) = d_mat_len(j, i) = hp.matern_variance * s * s * (1.0 + s) / 3.0 * es;
    }
  }
  Eigen::MatrixXd k = hp.rbf_weight * k_rbf + hp.matern_weight * k_mat;
  k.diagonal().array() += jitter;
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const Eigen::MatrixXd alpha = llt.solve(targets);
  const Eigen::MatrixXd l = llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  if (!std::isfinite(log_det)) return -std::numeric_limits<double>::infinity();
  const double lml = -0.5 * (targets.array() * alpha.array()).sum() - 0.5 * q * log_det -
                     0.5 * q * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  if (grad) {
    const Eigen::MatrixXd inner =
        alpha * alpha.transpose() - q * llt.solve(Eigen::MatrixXd::Identity(n, n));
    auto half_trace = [&](const Eigen::MatrixXd& dk) { return 0.5 * (inner.array() * dk.array()).sum(); };
    grad->resize(kParamCount);
    (*grad)[0] = half_trace(hp.rbf_weight * k_rbf);
    (*grad)[1] = half_trace(hp.rbf_weight * d_rbf_len);
    (*grad)[2] = half_trace(hp.matern_weight * k_mat);
    (*grad)[3] = half_trace(hp.matern_weight * d_mat_len);
    (*grad)[4] = half_trace(k_rbf);
    (*grad)[5] = half_trace(k_mat);
  }
  return lml;
}

struct FitOptions {
  Hyperparameters initial{};
  double jitter = 1e-8;
  bool optimize = true;
  int restarts = 5;  // total starts, the first from `initial`
  std::uint64_t seed = 0;
  int max_iterations = 200;
  bool shared_hyperparameters = true;  // false: one GP per target column
};

struct Prediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
};

/// GP over all target columns with one set of hyperparameters. Inputs are
/// standardized per feature; targets are centered per column and divided by
/// a single global scale.
class GprModel {
 public:
  GprModel() = default;

  /// Builds the model at fixed hyperparameters, escalating the jitter by 10x
  /// up to 1e-4 if the Gram matrix is not numerically positive definite.
  static GprModel build(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets, const Hyperparameters& hp,
                        double jitter) {
    GprModel m;
    m.set_data(inputs, targets);
    m.hp_ = hp;
    m.hp_.validate();
    m.factorize(jitter);
    return m;
  }

  const Eigen::MatrixXd& training_inputs() const { return inputs_; }
  const Eigen::MatrixXd& training_targets() const { return targets_; }
  const Hyperparameters& hyperparameters() const { return hp_; }
  double noise_jitter() const { return jitter_; }
  double log_likelihood() const { return lml_; }
  const Eigen::VectorXd& feature_mean() const { return x_mean_; }
  const Eigen::VectorXd& feature_scale() const { return x_scale_; }
  const Eigen::RowVectorXd& target_mean() const { return y_mean_; }
  double target_scale() const { return y_scale_; }
  bool converged = true;
  int iterations = 0;

  Eigen::MatrixXd standardized_inputs() const { return standardize_rows(inputs_); }
  Eigen::MatrixXd scaled_targets() const { return (targets_.rowwise() - y_mean_) / y_scale_; }

  Eigen::VectorXd standardize(const Eigen::VectorXd& x) const {
    return (x - x_mean_).cwiseQuotient(x_scale_);
  }

  Prediction predict(const Eigen::VectorXd& query) const {
    require(query.size() == inputs_.cols(), "GprModel::predict: query has the wrong number of features");
    const Eigen::VectorXd xs = standardize(query);
    const Eigen::Index n = xs_.rows();
    Eigen::VectorXd kstar(n);
    for (Eigen::Index i = 0; i < n; ++i) kstar[i] = covariance(hp_, xs, xs_.row(i).transpose());
    Prediction p;
    p.mean = (alpha_.transpose() * kstar) * y_scale_ + y_mean_.transpose();
    const Eigen::VectorXd v = llt_.matrixL().solve(kstar);
    const double latent = std::max(0.0, hp_.prior_variance() - v.squaredNorm());
    p.variance = Eigen::VectorXd::Constant(targets_.cols(), latent * y_scale_ * y_scale_);
    return p;
  }

  void set_data(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
    require(inputs.rows() >= 1, "GPR: at least one training point is required");
    require(inputs.rows() == targets.rows(), "GPR: inputs and targets have different row counts");
    require(inputs.allFinite() && targets.allFinite(), "GPR: training data must be finite");
    inputs_ = inputs;
    targets_ = targets;
    x_mean_ = inputs.colwise().mean().transpose();
    x_scale_.resize(inputs.cols());
    for (Eigen::Index c = 0; c < inputs.cols(); ++c) {
      const double sd = std::sqrt((inputs.col(c).array() - x_mean_[c]).square().mean());
      x_scale_[c] = sd > 1e-12 ? sd : 1.0;
    }
    y_mean_ = targets.colwise().mean();
    const double ysd = std::sqrt((targets.rowwise() - y_mean_).array().square().mean());
    y_scale_ = ysd > 1e-300 ? ysd : 1.0;
    xs_ = standardize_rows(inputs);
  }

  void set_hyperparameters(const Hyperparameters& hp) { hp_ = hp; }

  void factorize(double jitter) {
    require(jitter >= 0.0, "GPR: jitter must be non-negative");
    const Eigen::MatrixXd ys = scaled_targets();
    Eigen::MatrixXd k = gram_matrix(hp_, xs_);
    double j = jitter;
    for (;;) {
      Eigen::MatrixXd kj = k;
      kj.diagonal().array() += j;
      llt_.compute(kj);
      if (llt_.info() == Eigen::Success && llt_.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0) break;
      const double next = j > 0.0 ? 10.0 * j : 1e-12;
      if (next > 1e-4 * (1.0 + 1e-12))
        throw Error("GPR: Gram matrix is not positive definite even with jitter 1e-4 (n = " +
                    std::to_string(xs_.rows()) + ", prior variance " + std::to_string(hp_.prior_variance()) + ")");
      j = next;
    }
    jitter_ = j;
    alpha_ = llt_.solve(ys);
    lml_ = log_marginal_likelihood(hp_, xs_, ys, jitter_);
  }

 private:
  Eigen::MatrixXd standardize_rows(const Eigen::MatrixXd& x) const {
    return (x.rowwise() - x_mean_.transpose()).array().rowwise() / x_scale_.transpose().array();
  }

  Eigen::MatrixXd inputs_, targets_, xs_, alpha_;
  Eigen::VectorXd x_mean_, x_scale_;
  Eigen::RowVectorXd y_mean_;
  double y_scale_ = 1.0;
  Hyperparameters hp_{};
  double jitter_ = 0.0;
  double lml_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// Maximizes the summed log marginal likelihood over the hyperparameters
/// (bounded quasi-Newton, multi-start), then factorizes.
inline GprModel fit(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets, const FitOptions& options = {}) {
  GprModel model;
  model.set_data(inputs, targets);
  Hyperparameters best = options.initial;
  best.validate();
  if (options.optimize && inputs.rows() >= 2) {
    const Eigen::MatrixXd xs = model.standardized_inputs();
    const Eigen::MatrixXd ys = model.scaled_targets();
    const Eigen::VectorXd lo = lower_bounds(), hi = upper_bounds();
    const double jitter = std::max(options.jitter, 0.0);
    optim::Objective objective = [&](const Eigen::VectorXd& p, Eigen::VectorXd& g) {
      Eigen::VectorXd gl;
      const double v = log_marginal_likelihood(unpack(p), xs, ys, jitter, &gl);
      if (!std::isfinite(v)) {
        g = Eigen::VectorXd::Zero(p.size());
        return std::numeric_limits<double>::infinity();
      }
      g = -gl;
      return -v;
    };
    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double best_value = std::numeric_limits<double>::infinity();
    optim::BoundedOptions bo;
    bo.max_iterations = options.max_iterations;
    for (int start = 0; start < std::max(1, options.restarts); ++start) {
      Eigen::VectorXd p0 = pack(options.initial);
      if (start > 0)
        for (Eigen::Index i = 0; i < p0.size(); ++i) p0[i] = lo[i] + unif(rng) * (hi[i] - lo[i]);
      const auto r = optim::minimize_bounded(objective, p0, lo, hi, bo);
      if (std::isfinite(r.value) && r.value < best_value) {
        best_value = r.value;
        best = unpack(r.x);
        model.converged = r.converged;
        model.iterations = r.iterations;
      }
    }
  }
  model.set_hyperparameters(best);
  model.factorize(options.jitter);
  return model;
}

/// One shared-hyperparameter GP, or one GP per column.
class GprRegressor {
 public:
  GprRegressor() = default;
  explicit GprRegressor(std::vector<GprModel> models) : models_(std::move(models)) {}

  const std::vector<GprModel>& models() const { return models_; }
  bool shared() const { return models_.size() == 1; }

  Prediction predict(const Eigen::VectorXd& query) const {
    require(!models_.empty(), "GprRegressor: model is empty");
    std::vector<Prediction> parts;
    Eigen::Index q = 0;
    for (const auto& m : models_) {
      parts.push_back(m.predict(query));
      q += parts.back().mean.size();
    }
    Prediction out{Eigen::VectorXd(q), Eigen::VectorXd(q)};
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      out.mean.segment(off, p.mean.size()) = p.mean;
      out.variance.segment(off, p.variance.size()) = p.variance;
      off += p.mean.size();
    }
    return out;
  }

 private:
  std::vector<GprModel> models_;
};

inline GprRegressor fit_regressor(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                                  const FitOptions& options = {}) {
  if (options.shared_hyperparameters) return GprRegressor({fit(inputs, targets, options)});
  std::vector<GprModel> models;
  for (Eigen::Index c = 0; c < targets.cols(); ++c) models.push_back(fit(inputs, targets.col(c), options));
  return GprRegressor(std::move(models));
}

// --- JSON ------------------------------------------------------------------

namespace detail {
inline nlohmann::ordered_json matrix_to_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}
inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  require(j.is_array() && !j.empty(), "expected a non-empty matrix");
  const auto cols = j[0].size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    require(j[r].size() == cols, "ragged matrix");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
  }
  return m;
}
}  // namespace detail

inline nlohmann::ordered_json to_json(const GprModel& m) {
  const auto& hp = m.hyperparameters();
  nlohmann::ordered_json j;
  j["hyperparameters"] = {{"rbf_variance", hp.rbf_variance},   {"rbf_length", hp.rbf_length},
                          {"matern_variance", hp.matern_variance}, {"matern_length", hp.matern_length},
                          {"rbf_weight", hp.rbf_weight},       {"matern_weight", hp.matern_weight}};
  j["noise_jitter"] = m.noise_jitter();
  j["feature_mean"] = std::vector<double>(m.feature_mean().data(), m.feature_mean().data() + m.feature_mean().size());
  j["feature_scale"] =
      std::vector<double>(m.feature_scale().data(), m.feature_scale().data() + m.feature_scale().size());
  j["target_mean"] = std::vector<double>(m.target_mean().data(), m.target_mean().data() + m.target_mean().size());
  j["target_scale"] = m.target_scale();
  j["log_marginal_likelihood"] = m.log_likelihood();
  j["training_inputs"] = detail::matrix_to_json(m.training_inputs());
  j["training_targets"] = detail::matrix_to_json(m.training_targets());
  return j;
}

/// Rebuilds the model (and its Cholesky factor) from the stored training set.
inline GprModel model_from_json(const nlohmann::json& j) {
  try {
    const auto& h = j.at("hyperparameters");
    Hyperparameters hp{h.at("rbf_variance").get<double>(),   h.at("rbf_length").get<double>(),
                       h.at("matern_variance").get<double>(), h.at("matern_length").get<double>(),
                       h.at("rbf_weight").get<double>(),     h.at("matern_weight").get<double>()};
    return GprModel::build(detail::matrix_from_json(j.at("training_inputs")),
                           detail::matrix_from_json(j.at("training_targets")), hp, j.at("noise_jitter").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("GPR model JSON: ") + e.what());
  }
}

inline nlohmann::ordered_json to_json(const GprRegressor& r) {
  nlohmann::ordered_json j;
  j["shared_hyperparameters"] = r.shared();
  auto arr = nlohmann::ordered_json::array();
  for (const auto& m : r.models()) arr.push_back(to_json(m));
  j["models"] = std::move(arr);
  return j;
}

inline GprRegressor regressor_from_json(const nlohmann::json& j) {
  std::vector<GprModel> models;
  for (const auto& m : j.at("models")) models.push_back(model_from_json(m));
  return GprRegressor(std::move(models));
}

}  // namespace vrom::gpr
