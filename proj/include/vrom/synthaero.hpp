#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>

#include <Eigen/Dense>

#include "vrom/error.hpp"
#include "vrom/parameter.hpp"
#include "vrom/signals.hpp"

namespace vrom::synthaero {

/// Coefficients of the three-lag-state synthetic lift model.
///
/// States obey dx_i/dtau = -(2V/c) b_i x_i + u(tau), u in radians, and the lift is
///   C_L  = C_La(M) (A1 b1 x1 + A2 b2 x2 + A3 b3 x3)              (linear)
///   C_L  = C_La(M) (A1 b1 x1 + A2 b2 x2 + A3 b3 x3 - C_nl x2 x3) (nonlinear)
/// with C_La(M) the Prandtl-Glauert corrected slope and A3(M, alpha0) a smooth
/// map into a3_range.
struct PlantConfig {
  double cl_alpha_base = 2.0 * std::numbers::pi;
  double a1 = 0.670;
  double a2 = 0.330;
  double b1 = 0.30;
  double b2 = 0.0455;
  double b3 = 0.15;
  double c_nl = -0.35;
  /// Optional cubic term -C_nl3 x2^2 x3 for third-order experiments (0 disables).
  double c_nl3 = 0.0;
  double velocity_ratio = 1.0;  // 2V/c
  std::array<double, 2> a3_range{-0.15, 0.0};
  /// Box over which A3 ramps from a3_range[1] to a3_range[0].
  std::array<double, 2> a3_mach_span{0.40, 0.85};
  std::array<double, 2> a3_alpha_span{-2.0, 8.0};
  /// Output noise; unset means 0.5% of the steady response magnitude.
  std::optional<double> noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(b1 > 0.0 && b2 > 0.0 && b3 > 0.0, "PlantConfig: lag rates must be positive");
    require(velocity_ratio > 0.0, "PlantConfig: velocity ratio must be positive");
    require(a3_range[0] <= a3_range[1] && a3_range[1] <= 0.0, "PlantConfig: a3_range must satisfy min <= max <= 0");
    require(a3_mach_span[0] < a3_mach_span[1] && a3_alpha_span[0] < a3_alpha_span[1],
            "PlantConfig: A3 spans must be increasing");
    require(!noise_sigma || *noise_sigma >= 0.0, "PlantConfig: noise sigma must be non-negative");
  }
};

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

inline double lift_slope(const PlantConfig& config, double mach) {
  require(mach >= 0.0 && mach < 1.0, "lift_slope: Mach number must lie in [0, 1)");
  return config.cl_alpha_base / std::sqrt(1.0 - mach * mach);
}

/// Cubic smoothstep clamped to [0, 1].
inline double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

/// A3 = a3_max + (a3_min - a3_max) s(mach ramp) s(alpha ramp).
inline double a3_coefficient(const PlantConfig& config, const ParameterPoint& point) {
  const double sm = smoothstep((point.mach - config.a3_mach_span[0]) / (config.a3_mach_span[1] - config.a3_mach_span[0]));
  const double sa =
      smoothstep((point.alpha0 - config.a3_alpha_span[0]) / (config.a3_alpha_span[1] - config.a3_alpha_span[0]));
  return config.a3_range[1] + (config.a3_range[0] - config.a3_range[1]) * sm * sa;
}

/// Steady linear lift at alpha0: C_La(M) alpha0 (A1 + A2 + A3) / (2V/c).
inline double steady_lift(const PlantConfig& config, const ParameterPoint& point) {
  return lift_slope(config, point.mach) * deg_to_rad(point.alpha0) *
         (config.a1 + config.a2 + a3_coefficient(config, point)) / config.velocity_ratio;
}

/// Point with its steady lift filled in from the plant.
inline ParameterPoint with_steady_features(const PlantConfig& config, ParameterPoint point) {
  point.steady_cl = steady_lift(config, point);
  return point;
}

struct LagStates {
  Eigen::Array3d x = Eigen::Array3d::Zero();
};

namespace detail {

struct Model {
  Eigen::Array3d rates;
  double slope;
  double a3;
};

inline double output(const PlantConfig& c, const Model& m, const Eigen::Array3d& x, bool nonlinear) {
  double cl = c.a1 * c.b1 * x[0] + c.a2 * c.b2 * x[1] + m.a3 * c.b3 * x[2];
  if (nonlinear) cl += -c.c_nl * x[1] * x[2] - c.c_nl3 * x[1] * x[1] * x[2];
  return m.slope * cl;
}

/// RK4 with `substeps` steps per sample; the input is held constant over
/// each sample interval.
inline Eigen::MatrixXd integrate(const PlantConfig& config, const ParameterPoint& point, const TimeSignal& input,
                                 bool nonlinear, int substeps, Eigen::MatrixXd* states_out) {
  config.validate();
  const Model model{config.velocity_ratio * Eigen::Array3d(config.b1, config.b2, config.b3),
                    lift_slope(config, point.mach), a3_coefficient(config, point)};
  const auto n = static_cast<Eigen::Index>(input.size());
  const double h = input.grid.dt / substeps;
  Eigen::MatrixXd y(n, 1);
  if (states_out) states_out->resize(n, 3);
  Eigen::Array3d x = Eigen::Array3d::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i, 0) = output(config, model, x, nonlinear);
    if (states_out) states_out->row(i) = x.matrix().transpose();
    if (i + 1 == n) break;
    const double u = deg_to_rad(input.values[i]);
    auto f = [&](const Eigen::Array3d& s) -> Eigen::Array3d { return -model.rates * s + u; };
    for (int s = 0; s < substeps; ++s) {
      const Eigen::Array3d k1 = f(x);
      const Eigen::Array3d k2 = f(x + 0.5 * h * k1);
      const Eigen::Array3d k3 = f(x + 0.5 * h * k2);
      const Eigen::Array3d k4 = f(x + h * k3);
      x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }
  return y;
}

}  // namespace detail

/// Noise-free response, two RK4 steps per sample.
inline TimeSignal simulate_clean(const PlantConfig& config, const ParameterPoint& point, const TimeSignal& input,
                                 bool nonlinear) {
  return TimeSignal::make(input.grid, detail::integrate(config, point, input, nonlinear, 2, nullptr).col(0));
}

/// Plant response with output noise (config.noise_sigma, or 0.5% of the
/// steady magnitude when unset), deterministic given config.seed.
inline TimeSignal simulate(const PlantConfig& config, const ParameterPoint& point, const TimeSignal& input,
                           bool nonlinear) {
  auto clean = simulate_clean(config, point, input, nonlinear);
  const double sigma = config.noise_sigma ? *config.noise_sigma : default_noise_sigma(clean);
  return add_white_noise(clean, sigma, config.seed);
}

/// Verification reference: noise off, four RK4 steps per sample.
inline TimeSignal exact_response_oracle(const PlantConfig& config, const ParameterPoint& point,
                                        const TimeSignal& input, bool nonlinear) {
  return TimeSignal::make(input.grid, detail::integrate(config, point, input, nonlinear, 4, nullptr).col(0));
}

/// Lag-state trajectories (n x 3) from the reference integrator.
inline Eigen::MatrixXd lag_states(const PlantConfig& config, const ParameterPoint& point, const TimeSignal& input) {
  Eigen::MatrixXd states;
  detail::integrate(config, point, input, false, 4, &states);
  return states;
}

}  // namespace vrom::synthaero
