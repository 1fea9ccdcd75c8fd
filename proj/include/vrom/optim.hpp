#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>

#include <Eigen/Dense>

#include "vrom/error.hpp"

namespace vrom::optim {

/// Objective returning f(x) and writing the gradient into `grad`.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct BoundedOptions {
  int max_iterations = 200;
  int history = 8;
  double gradient_tolerance = 1e-6;   // on the projected gradient, inf-norm
  double function_tolerance = 1e-10;  // relative decrease
};

struct BoundedResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Limited-memory BFGS with box constraints: the search direction is the
/// two-loop quasi-Newton step with components pinned at an active bound
/// removed, followed by an Armijo backtracking search along the projected
/// path.
inline BoundedResult minimize_bounded(const Objective& f, Eigen::VectorXd x0, const Eigen::VectorXd& lower,
                                      const Eigen::VectorXd& upper, const BoundedOptions& opt = {}) {
  const Eigen::Index n = x0.size();
  require(lower.size() == n && upper.size() == n, "minimize_bounded: bound sizes do not match");
  auto project = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return v.cwiseMax(lower).cwiseMin(upper); };

  Eigen::VectorXd x = project(x0), g(n);
  double fx = f(x, g);
  std::deque<Eigen::VectorXd> s_hist, y_hist;
  BoundedResult res;

  auto projected_gradient_norm = [&](const Eigen::VectorXd& xv, const Eigen::VectorXd& gv) {
    return (project(xv - gv) - xv).cwiseAbs().maxCoeff();
  };

  for (int it = 0; it < opt.max_iterations; ++it) {
    res.iterations = it;
    if (!std::isfinite(fx)) break;
    if (projected_gradient_norm(x, g) < opt.gradient_tolerance) {
      res.converged = true;
      break;
    }
    // Variables held at a bound by the gradient.
    Eigen::Array<bool, Eigen::Dynamic, 1> active(n);
    for (Eigen::Index i = 0; i < n; ++i)
      active[i] = (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0);
    Eigen::VectorXd gf = g;
    for (Eigen::Index i = 0; i < n; ++i)
      if (active[i]) gf[i] = 0.0;

    Eigen::VectorXd q = gf;
    std::vector<double> alpha(s_hist.size());
    for (int k = static_cast<int>(s_hist.size()) - 1; k >= 0; --k) {
      const double rho = 1.0 / y_hist[k].dot(s_hist[k]);
      alpha[k] = rho * s_hist[k].dot(q);
      q -= alpha[k] * y_hist[k];
    }
    if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double rho = 1.0 / y_hist[k].dot(s_hist[k]);
      const double beta = rho * y_hist[k].dot(q);
      q += (alpha[k] - beta) * s_hist[k];
    }
    Eigen::VectorXd d = -q;
    for (Eigen::Index i = 0; i < n; ++i)
      if (active[i]) d[i] = 0.0;
    if (g.dot(d) >= 0.0) {
      d = -gf;
      s_hist.clear();
      y_hist.clear();
    }
    if (s_hist.empty()) {
      // Unit first step in the steepest-descent direction, capped at a box-sized move.
      const double scale = std::min(1.0, 1.0 / std::max(1e-12, d.cwiseAbs().maxCoeff()));
      d *= scale;
    }

    double t = 1.0;
    Eigen::VectorXd x_new, g_new(n);
    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      x_new = project(x + t * d);
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * g.dot(x_new - x)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;

    const Eigen::VectorXd s = x_new - x, y = g_new - g;
    const double rel_drop = (fx - f_new) / std::max({std::abs(fx), std::abs(f_new), 1.0});
    x = x_new;
    g = g_new;
    const double prev = fx;
    fx = f_new;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      if (static_cast<int>(s_hist.size()) > opt.history) {
        s_hist.pop_front();
        y_hist.pop_front();
      }
    }
    if (rel_drop >= 0.0 && rel_drop < opt.function_tolerance && prev != fx) {
      res.converged = true;
      res.iterations = it + 1;
      break;
    }
    res.iterations = it + 1;
  }
  res.x = x;
  res.value = fx;
  return res;
}

}  // namespace vrom::optim
