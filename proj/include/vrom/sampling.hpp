#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vrom/error.hpp"
#include "vrom/io.hpp"
#include "vrom/parameter.hpp"

namespace vrom::sampling {

struct ParameterBox {
  std::array<double, 2> mach_range{0.40, 0.85};
  std::array<double, 2> alpha0_range{-2.0, 8.0};

  void validate() const {
    require(mach_range[0] < mach_range[1], "ParameterBox: mach range must be increasing");
    require(alpha0_range[0] < alpha0_range[1], "ParameterBox: alpha0 range must be increasing");
  }

  bool contains(double mach, double alpha0, double tol = 1e-12) const {
    return mach >= mach_range[0] - tol && mach <= mach_range[1] + tol && alpha0 >= alpha0_range[0] - tol &&
           alpha0 <= alpha0_range[1] + tol;
  }
};

/// Latin hypercube on [0, 1)^dims: each axis is cut into n bins with one
/// sample per bin, uniform within the bin, bins paired by random permutation.
inline Eigen::MatrixXd lhs_unit(std::size_t n, std::size_t dims, std::uint64_t seed) {
  require(n >= 1, "lhs: at least one sample is required");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dims));
  std::vector<std::size_t> perm(n);
  for (std::size_t d = 0; d < dims; ++d) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < n; ++i) {
      double v = (static_cast<double>(perm[i]) + unif(rng)) / static_cast<double>(n);
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = std::min(v, std::nextafter(1.0, 0.0));
    }
  }
  return out;
}

inline std::vector<ParameterPoint> lhs(const ParameterBox& box, std::size_t n, std::uint64_t seed) {
  box.validate();
  const auto unit = lhs_unit(n, 2, seed);
  std::vector<ParameterPoint> points;
  points.reserve(n);
  for (Eigen::Index i = 0; i < unit.rows(); ++i) {
    const double mach = box.mach_range[0] + unit(i, 0) * (box.mach_range[1] - box.mach_range[0]);
    const double alpha = box.alpha0_range[0] + unit(i, 1) * (box.alpha0_range[1] - box.alpha0_range[0]);
    points.push_back(ParameterPoint::make(mach, alpha));
  }
  return points;
}

enum class Role { train, test, validation };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::train: return "train";
    case Role::test: return "test";
    case Role::validation: return "validation";
  }
  return "train";
}

inline Role role_from_name(const std::string& s) {
  if (s == "train") return Role::train;
  if (s == "test") return Role::test;
  if (s == "validation") return Role::validation;
  throw Error("unknown sample role '" + s + "'");
}

struct SamplePlan {
  std::vector<ParameterPoint> points;
  std::vector<Role> roles;  // one per point, in point order
  std::uint64_t seed = 0;

  std::vector<std::size_t> indices(Role r) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < roles.size(); ++i)
      if (roles[i] == r) out.push_back(i);
    return out;
  }
  std::size_t count(Role r) const { return indices(r).size(); }
};

/// Subset sizes for n items; test and validation round down, train takes the rest.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& fractions) {
  for (double f : fractions) require(f >= 0.0, "split: fractions must be non-negative");
  require(std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) <= 1e-9, "split: fractions must sum to 1");
  const auto take = [&](double f) { return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9)); };
  const std::size_t n_test = take(fractions[1]);
  const std::size_t n_val = take(fractions[2]);
  return {n - n_test - n_val, n_test, n_val};
}

inline SamplePlan split(std::vector<ParameterPoint> points, const std::array<double, 3>& fractions,
                        std::uint64_t seed) {
  const auto counts = split_counts(points.size(), fractions);
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  SamplePlan plan{std::move(points), std::vector<Role>(order.size(), Role::train), seed};
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k < counts[0]) plan.roles[order[k]] = Role::train;
    else if (k < counts[0] + counts[1]) plan.roles[order[k]] = Role::test;
    else plan.roles[order[k]] = Role::validation;
  }
  return plan;
}

/// `index,mach,alpha0,role`
inline std::string to_csv(const SamplePlan& plan) {
  std::string out = "index,mach,alpha0,role\n";
  for (std::size_t i = 0; i < plan.points.size(); ++i) {
    out += std::to_string(i) + ',' + io::format_double(plan.points[i].mach) + ',' +
           io::format_double(plan.points[i].alpha0) + ',' + role_name(plan.roles[i]) + '\n';
  }
  return out;
}

inline SamplePlan plan_from_csv(const std::string& text) {
  const auto lines = io::split_lines(text);
  require(!lines.empty() && lines[0] == "index,mach,alpha0,role", "samples CSV: unexpected header");
  SamplePlan plan;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = io::split_fields(lines[i]);
    require(f.size() == 4, "samples CSV: expected four columns on line " + std::to_string(i + 1));
    require(static_cast<std::size_t>(io::parse_double(f[0])) == plan.points.size(),
            "samples CSV: indices must be consecutive from 0");
    plan.points.push_back(ParameterPoint::make(io::parse_double(f[1]), io::parse_double(f[2])));
    plan.roles.push_back(role_from_name(f[3]));
  }
  return plan;
}

}  // namespace vrom::sampling
