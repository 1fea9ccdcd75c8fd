#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "vrom/error.hpp"
#include "vrom/io.hpp"

namespace vrom {

/// Uniform reduced-time grid; sample i sits at tau = i * dt, starting at 0.
struct TimeGrid {
  double dt = 1.0;
  std::size_t n = 2;

  static TimeGrid make(double dt, std::size_t n) {
    require(std::isfinite(dt) && dt > 0.0, "TimeGrid: dt must be positive");
    require(n >= 2, "TimeGrid: at least two samples are required");
    return TimeGrid{dt, n};
  }

  double tau(std::size_t i) const { return static_cast<double>(i) * dt; }
  double duration() const { return static_cast<double>(n) * dt; }

  bool operator==(const TimeGrid&) const = default;
};

/// Two grids are compatible when they have the same length and step (to a relative 1e-9).
inline bool compatible(const TimeGrid& a, const TimeGrid& b) {
  return a.n == b.n && std::abs(a.dt - b.dt) <= 1e-9 * std::max(a.dt, b.dt);
}

/// Uniformly sampled scalar signal. Values are degrees for pitch inputs and
/// coefficient units for outputs.
struct TimeSignal {
  TimeGrid grid;
  Eigen::VectorXd values;

  static TimeSignal make(TimeGrid grid, Eigen::VectorXd values) {
    require(static_cast<std::size_t>(values.size()) == grid.n,
            "TimeSignal: value count does not match grid length");
    require(values.allFinite(), "TimeSignal: values must be finite");
    return TimeSignal{grid, std::move(values)};
  }

  std::size_t size() const { return grid.n; }
  double operator[](std::size_t i) const { return values[static_cast<Eigen::Index>(i)]; }
};

inline TimeSignal make_step(const TimeGrid& grid, double magnitude) {
  return TimeSignal::make(grid, Eigen::VectorXd::Constant(static_cast<Eigen::Index>(grid.n), magnitude));
}

/// magnitude * (1 - exp(-tau / tau_ref))
inline TimeSignal make_smoothed_step(const TimeGrid& grid, double magnitude, double tau_ref) {
  require(std::isfinite(tau_ref) && tau_ref > 0.0, "make_smoothed_step: tau_ref must be positive");
  Eigen::VectorXd v(static_cast<Eigen::Index>(grid.n));
  for (std::size_t i = 0; i < grid.n; ++i)
    v[static_cast<Eigen::Index>(i)] = magnitude * -std::expm1(-grid.tau(i) / tau_ref);
  return TimeSignal::make(grid, std::move(v));
}

/// mean + amplitude * sin(k * tau), zero phase at tau = 0.
inline TimeSignal make_sinusoid(const TimeGrid& grid, double mean, double amplitude,
                                double reduced_frequency) {
  require(amplitude >= 0.0, "make_sinusoid: amplitude must be non-negative");
  Eigen::VectorXd v(static_cast<Eigen::Index>(grid.n));
  for (std::size_t i = 0; i < grid.n; ++i)
    v[static_cast<Eigen::Index>(i)] = mean + amplitude * std::sin(reduced_frequency * grid.tau(i));
  return TimeSignal::make(grid, std::move(v));
}

/// Adds i.i.d. zero-mean Gaussian noise; identical seeds give identical draws.
inline TimeSignal add_white_noise(const TimeSignal& signal, double sigma, std::uint64_t seed) {
  require(sigma >= 0.0, "add_white_noise: sigma must be non-negative");
  TimeSignal out = signal;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (Eigen::Index i = 0; i < out.values.size(); ++i) out.values[i] += normal(rng);
  return out;
}

/// Default noise level: 0.5% of the signal's steady (final-sample) magnitude.
inline double default_noise_sigma(const TimeSignal& signal) {
  return 0.005 * std::abs(signal.values[signal.values.size() - 1]);
}

// --- CSV (tau,value) ---------------------------------------------------------

inline std::string to_csv(const TimeSignal& signal) {
  std::string out = "tau,value\n";
  for (std::size_t i = 0; i < signal.size(); ++i) {
    out += io::format_double(signal.grid.tau(i));
    out += ',';
    out += io::format_double(signal[i]);
    out += '\n';
  }
  return out;
}

inline TimeSignal signal_from_csv(const std::string& text) {
  auto lines = io::split_lines(text);
  require(lines.size() >= 3, "signal CSV: need a header and at least two rows");
  std::vector<double> tau, val;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto fields = io::split_fields(lines[i]);
    require(fields.size() == 2, "signal CSV: expected two columns on line " + std::to_string(i + 1));
    tau.push_back(io::parse_double(fields[0]));
    val.push_back(io::parse_double(fields[1]));
  }
  require(tau.size() >= 2, "signal CSV: need at least two rows");
  require(std::abs(tau[0]) <= 1e-12, "signal CSV: time axis must start at tau = 0");
  const double dt = tau[1] - tau[0];
  for (std::size_t i = 0; i < tau.size(); ++i)
    require(std::abs(tau[i] - static_cast<double>(i) * dt) <= 1e-6 * std::max(1.0, tau[i]),
            "signal CSV: non-uniform time axis at row " + std::to_string(i + 1));
  auto grid = TimeGrid::make(dt, tau.size());
  return TimeSignal::make(grid, Eigen::Map<Eigen::VectorXd>(val.data(), static_cast<Eigen::Index>(val.size())));
}

inline void write_signal(const std::filesystem::path& path, const TimeSignal& signal) {
  io::write_file(path, to_csv(signal));
}

inline TimeSignal read_signal(const std::filesystem::path& path) {
  try {
    return signal_from_csv(io::read_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace vrom
