#pragma once

#include <cmath>
#include <optional>

#include "vrom/error.hpp"

namespace vrom {

/// A location in the (Mach, angle of attack) space, with optional steady
/// aerodynamic coefficients at that condition.
struct ParameterPoint {
  double mach = 0.5;
  double alpha0 = 0.0;  // degrees
  std::optional<double> steady_cl;
  std::optional<double> steady_cm;

  static ParameterPoint make(double mach, double alpha0) {
    require(std::isfinite(mach) && mach > 0.0 && mach < 1.0, "ParameterPoint: Mach number must lie in (0, 1)");
    require(std::isfinite(alpha0), "ParameterPoint: alpha0 must be finite");
    return ParameterPoint{mach, alpha0, std::nullopt, std::nullopt};
  }
};

}  // namespace vrom
