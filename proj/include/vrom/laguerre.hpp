#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "vrom/convmat.hpp"
#include "vrom/error.hpp"
#include "vrom/linalg.hpp"
#include "vrom/signals.hpp"

namespace vrom {

/// Classical Laguerre polynomial L_k(x) by the three-term recurrence.
inline double laguerre_polynomial(int degree, double x) {
  if (degree == 0) return 1.0;
  double prev = 1.0, cur = 1.0 - x;
  for (int k = 1; k < degree; ++k) {
    const double next = ((2.0 * k + 1.0 - x) * cur - k * prev) / (k + 1.0);
    prev = cur;
    cur = next;
  }
  return cur;
}

/// phi_r(t) = exp(-a t / 2) L_{r-1}(a t), r = 1..R.
inline double laguerre_function(int r, double time_scale, double t) {
  return std::exp(-0.5 * time_scale * t) * laguerre_polynomial(r - 1, time_scale * t);
}

/// Envelope exp(-a t / 2) reaches 5% at the end of the memory window.
inline double default_time_scale(const TimeGrid& grid, std::size_t memory_depth) {
  return 2.0 * std::log(20.0) / (static_cast<double>(memory_depth) * grid.dt);
}

/// Laguerre basis sampled on the kernel lags. Row j holds phi_r(tau_j - delay * dt)
/// for j >= delay and zeros for the first `delay` lags; delay = 0 gives the plain
/// sampling phi_r(tau_j).
struct LaguerreBasis {
  int order = 0;
  double time_scale = 0.0;
  std::size_t delay = 0;
  TimeGrid grid;
  Eigen::MatrixXd matrix_b;

  Eigen::Index memory_depth() const { return matrix_b.rows(); }
};

inline LaguerreBasis build_basis(const TimeGrid& grid, std::size_t memory_depth, int order,
                                 double time_scale, std::size_t delay = 0) {
  require(order >= 1, "build_basis: order must be at least 1");
  require(static_cast<std::size_t>(order) <= memory_depth, "build_basis: order exceeds memory depth");
  require(std::isfinite(time_scale) && time_scale > 0.0, "build_basis: time scale must be positive");
  require(delay < memory_depth, "build_basis: delay must be shorter than the memory depth");
  LaguerreBasis basis{order, time_scale, delay, grid,
                      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(memory_depth), order)};
  for (std::size_t j = delay; j < memory_depth; ++j) {
    const double t = grid.tau(j - delay);
    for (int r = 1; r <= order; ++r)
      basis.matrix_b(static_cast<Eigen::Index>(j), r - 1) = laguerre_function(r, time_scale, t);
  }
  const auto sv = linalg::svd(basis.matrix_b).singular_values;
  require(sv[sv.size() - 1] > 1e-8 * sv[0],
          "build_basis: basis columns are numerically dependent; reduce the order or raise the time scale");
  return basis;
}

struct BasisSolution {
  Eigen::VectorXd theta;   // coefficients of the (unnormalized) basis columns
  Eigen::VectorXd kernel;  // B * theta
};

/// Least-squares solve of (U B) theta = y. Columns of B are scaled to unit norm
/// for conditioning; theta is reported for the unscaled columns.
inline BasisSolution identify_kernel_in_basis(const Eigen::MatrixXd& input_matrix, const LaguerreBasis& basis,
                                              const Eigen::VectorXd& response, double rank_tolerance = 1e-10) {
  require(input_matrix.cols() == basis.memory_depth(),
          "identify_kernel_in_basis: input matrix columns do not match basis rows");
  require(input_matrix.rows() == response.size(), "identify_kernel_in_basis: response length mismatch");
  const Eigen::VectorXd norms = basis.matrix_b.colwise().norm().transpose();
  const Eigen::MatrixXd b_scaled = basis.matrix_b * norms.cwiseInverse().asDiagonal();
  const Eigen::VectorXd scaled_theta = linalg::least_squares(input_matrix * b_scaled, response, rank_tolerance);
  BasisSolution out;
  out.theta = scaled_theta.cwiseQuotient(norms);
  out.kernel = b_scaled * scaled_theta;
  return out;
}

inline BasisSolution identify_kernel_in_basis(const InputMatrix& input_matrix, const LaguerreBasis& basis,
                                              const TimeSignal& response) {
  return identify_kernel_in_basis(input_matrix.data, basis, response.values);
}

/// Picks the time scale from `candidates` whose basis gives the smallest
/// training residual ||U B theta - y||.
inline double select_time_scale(const Eigen::MatrixXd& input_matrix, const Eigen::VectorXd& response,
                                const TimeGrid& grid, int order, std::size_t delay,
                                const std::vector<double>& candidates) {
  require(!candidates.empty(), "select_time_scale: no candidates");
  double best = candidates.front();
  double best_residual = std::numeric_limits<double>::infinity();
  const auto m = static_cast<std::size_t>(input_matrix.cols());
  for (double a : candidates) {
    LaguerreBasis basis;
    try {
      basis = build_basis(grid, m, order, a, delay);
    } catch (const Error&) {
      continue;
    }
    const auto sol = identify_kernel_in_basis(input_matrix, basis, response);
    const double residual = (input_matrix * sol.kernel - response).norm();
    if (residual < best_residual) {
      best_residual = residual;
      best = a;
    }
  }
  return best;
}

/// Log-spaced candidate time scales between lo and hi.
inline std::vector<double> log_spaced(double lo, double hi, int count) {
  std::vector<double> out;
  for (int i = 0; i < count; ++i)
    out.push_back(lo * std::pow(hi / lo, count == 1 ? 0.0 : static_cast<double>(i) / (count - 1)));
  return out;
}

}  // namespace vrom
