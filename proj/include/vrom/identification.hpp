#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vrom/convmat.hpp"
#include "vrom/error.hpp"
#include "vrom/laguerre.hpp"
#include "vrom/linalg.hpp"
#include "vrom/parameter.hpp"
#include "vrom/signals.hpp"

namespace vrom {

/// Diagonal Volterra kernels up to third order.
struct KernelSet {
  std::size_t memory_depth = 0;
  double dt = 1.0;
  Eigen::VectorXd h1;
  std::optional<Eigen::VectorXd> h2;
  std::optional<Eigen::VectorXd> h3;
  std::vector<double> identification_amplitudes;
  double steady_offset = 0.0;

  void validate() const {
    const auto m = static_cast<Eigen::Index>(memory_depth);
    require(memory_depth >= 1, "KernelSet: memory depth must be positive");
    require(h1.size() == m && h1.allFinite(), "KernelSet: h1 must have length m and finite entries");
    if (h2) require(h2->size() == m && h2->allFinite(), "KernelSet: h2 must have length m and finite entries");
    if (h3) {
      require(h2.has_value(), "KernelSet: h3 requires h2");
      require(h3->size() == m && h3->allFinite(), "KernelSet: h3 must have length m and finite entries");
    }
    for (std::size_t i = 0; i < identification_amplitudes.size(); ++i) {
      require(identification_amplitudes[i] > 0.0, "KernelSet: amplitudes must be positive");
      if (i > 0)
        require(identification_amplitudes[i] > identification_amplitudes[i - 1],
                "KernelSet: amplitudes must be strictly increasing");
    }
  }
};

/// Input/output pair from one identification experiment. `steady_offset` is
/// the pre-step output level, removed before identification.
struct ResponsePair {
  TimeSignal input;
  TimeSignal output;
  ParameterPoint parameter_point;
  double steady_offset = 0.0;

  Eigen::VectorXd centered_output() const { return output.values.array() - steady_offset; }
};

namespace detail {

inline void check_pair(const ResponsePair& pair, std::size_t memory_depth, const char* who) {
  require(compatible(pair.input.grid, pair.output.grid), std::string(who) + ": input and output grids differ");
  require(memory_depth >= 1 && pair.output.size() >= memory_depth,
          std::string(who) + ": response shorter than the memory depth");
}

inline Eigen::VectorXd solve_kernel(const Eigen::MatrixXd& matrix, const Eigen::VectorXd& rhs,
                                    const LaguerreBasis* basis, const char* who) {
  if (basis) {
    require(basis->memory_depth() == matrix.cols(), std::string(who) + ": basis memory depth mismatch");
    const auto sol = identify_kernel_in_basis(matrix, *basis, rhs);
    const auto rank = linalg::svd(matrix * basis->matrix_b).rank();
    require(rank > 0, std::string(who) + ": input matrix has rank zero (all-zero input?)");
    return sol.kernel;
  }
  const auto f = linalg::svd(matrix);
  require(f.rank() > 0, std::string(who) + ": input matrix has rank zero (all-zero input?)");
  return linalg::pseudo_inverse_apply(f, rhs);
}

}  // namespace detail

/// h1 = U_A^+ y_A, optionally restricted to span(B).
inline Eigen::VectorXd identify_linear(const ResponsePair& pair_a, std::size_t memory_depth,
                                       const LaguerreBasis* basis = nullptr) {
  detail::check_pair(pair_a, memory_depth, "identify_linear");
  const auto u = build_input_matrix(pair_a.input, memory_depth, 1);
  return detail::solve_kernel(u.data, pair_a.centered_output(), basis, "identify_linear");
}

/// h2 = U_B2^+ (y_B - U_B h1).
inline Eigen::VectorXd identify_second_order(const Eigen::VectorXd& h1, const ResponsePair& pair_b,
                                             std::size_t memory_depth, const LaguerreBasis* basis = nullptr) {
  detail::check_pair(pair_b, memory_depth, "identify_second_order");
  require(h1.size() == static_cast<Eigen::Index>(memory_depth), "identify_second_order: h1 length mismatch");
  const auto u1 = build_input_matrix(pair_b.input, memory_depth, 1);
  const auto u2 = build_input_matrix(pair_b.input, memory_depth, 2);
  const Eigen::VectorXd residual = pair_b.centered_output() - u1.data * h1;
  return detail::solve_kernel(u2.data, residual, basis, "identify_second_order");
}

struct HigherOrderKernels {
  Eigen::VectorXd h2;
  Eigen::VectorXd h3;
};

/// Joint least-squares solve of
///   [U_B2 U_B3; U_C2 U_C3] [h2; h3] = [y_B - U_B h1; y_C - U_C h1].
/// With a basis, both kernels are expanded in the same Laguerre basis.
inline HigherOrderKernels identify_second_and_third(const Eigen::VectorXd& h1, const ResponsePair& pair_b,
                                                    const ResponsePair& pair_c, std::size_t memory_depth,
                                                    const LaguerreBasis* basis = nullptr) {
  detail::check_pair(pair_b, memory_depth, "identify_second_and_third");
  detail::check_pair(pair_c, memory_depth, "identify_second_and_third");
  require(h1.size() == static_cast<Eigen::Index>(memory_depth), "identify_second_and_third: h1 length mismatch");
  const auto m = static_cast<Eigen::Index>(memory_depth);
  const auto ub1 = build_input_matrix(pair_b.input, memory_depth, 1);
  const auto ub2 = build_input_matrix(pair_b.input, memory_depth, 2);
  const auto ub3 = build_input_matrix(pair_b.input, memory_depth, 3);
  const auto uc1 = build_input_matrix(pair_c.input, memory_depth, 1);
  const auto uc2 = build_input_matrix(pair_c.input, memory_depth, 2);
  const auto uc3 = build_input_matrix(pair_c.input, memory_depth, 3);
  const Eigen::Index nb = ub1.rows(), nc = uc1.rows();

  Eigen::MatrixXd stacked(nb + nc, 2 * m);
  stacked << ub2.data, ub3.data, uc2.data, uc3.data;
  Eigen::VectorXd rhs(nb + nc);
  rhs << pair_b.centered_output() - ub1.data * h1, pair_c.centered_output() - uc1.data * h1;

  Eigen::MatrixXd expand = Eigen::MatrixXd::Identity(2 * m, 2 * m);
  if (basis) {
    require(basis->memory_depth() == m, "identify_second_and_third: basis memory depth mismatch");
    const Eigen::Index r = basis->matrix_b.cols();
    const Eigen::VectorXd norms = basis->matrix_b.colwise().norm().transpose();
    const Eigen::MatrixXd b = basis->matrix_b * norms.cwiseInverse().asDiagonal();
    expand = Eigen::MatrixXd::Zero(2 * m, 2 * r);
    expand.topLeftCorner(m, r) = b;
    expand.bottomRightCorner(m, r) = b;
  }
  const Eigen::MatrixXd system = stacked * expand;
  const auto f = linalg::svd(system);
  const Eigen::MatrixXd single = ub2.data * expand.topLeftCorner(m, expand.cols() / 2);
  const auto single_rank = linalg::svd(single).rank();
  require(f.rank() > single_rank,
          "identify_second_and_third: stacked system is rank deficient; the B and C experiments "
          "must differ in amplitude");
  const Eigen::VectorXd x = expand * linalg::pseudo_inverse_apply(f, rhs);
  return {x.head(m), x.tail(m)};
}

/// Multi-step baseline: h2 from B alone, then h3 from the C residual.
inline HigherOrderKernels identify_second_then_third(const Eigen::VectorXd& h1, const ResponsePair& pair_b,
                                                     const ResponsePair& pair_c, std::size_t memory_depth) {
  HigherOrderKernels out;
  out.h2 = identify_second_order(h1, pair_b, memory_depth);
  detail::check_pair(pair_c, memory_depth, "identify_second_then_third");
  const auto uc1 = build_input_matrix(pair_c.input, memory_depth, 1);
  const auto uc2 = build_input_matrix(pair_c.input, memory_depth, 2);
  const auto uc3 = build_input_matrix(pair_c.input, memory_depth, 3);
  const Eigen::VectorXd residual = pair_c.centered_output() - uc1.data * h1 - uc2.data * out.h2;
  out.h3 = detail::solve_kernel(uc3.data, residual, nullptr, "identify_second_then_third");
  return out;
}

/// y = U h1 + U2 h2 + U3 h3 over the terms present. The steady offset is not added.
inline TimeSignal reconstruct(const KernelSet& kernels, const TimeSignal& input) {
  require(input.size() >= kernels.memory_depth, "reconstruct: input shorter than the memory depth");
  require(kernels.h1.size() == static_cast<Eigen::Index>(kernels.memory_depth), "reconstruct: malformed kernels");
  Eigen::VectorXd y = convolve(build_input_matrix(input, kernels.memory_depth, 1), kernels.h1);
  if (kernels.h2) y += convolve(build_input_matrix(input, kernels.memory_depth, 2), *kernels.h2);
  if (kernels.h3) y += convolve(build_input_matrix(input, kernels.memory_depth, 3), *kernels.h3);
  return TimeSignal::make(input.grid, std::move(y));
}

// --- JSON ------------------------------------------------------------------

namespace detail {
inline nlohmann::ordered_json vec_to_json(const Eigen::VectorXd& v) {
  auto arr = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}
inline Eigen::VectorXd vec_from_json(const nlohmann::json& j) {
  require(j.is_array(), "expected a numeric array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}
}  // namespace detail

inline nlohmann::ordered_json to_json(const KernelSet& k) {
  nlohmann::ordered_json j;
  j["memory_depth"] = k.memory_depth;
  j["dt"] = k.dt;
  j["amplitudes"] = k.identification_amplitudes;
  j["h1"] = detail::vec_to_json(k.h1);
  j["h2"] = k.h2 ? detail::vec_to_json(*k.h2) : nlohmann::ordered_json(nullptr);
  j["h3"] = k.h3 ? detail::vec_to_json(*k.h3) : nlohmann::ordered_json(nullptr);
  j["steady_offset"] = k.steady_offset;
  return j;
}

inline KernelSet kernel_set_from_json(const nlohmann::json& j) {
  KernelSet k;
  try {
    k.memory_depth = j.at("memory_depth").get<std::size_t>();
    k.dt = j.at("dt").get<double>();
    k.identification_amplitudes = j.at("amplitudes").get<std::vector<double>>();
    k.h1 = detail::vec_from_json(j.at("h1"));
    if (!j.at("h2").is_null()) k.h2 = detail::vec_from_json(j.at("h2"));
    if (!j.at("h3").is_null()) k.h3 = detail::vec_from_json(j.at("h3"));
    k.steady_offset = j.at("steady_offset").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("KernelSet JSON: ") + e.what());
  }
  k.validate();
  return k;
}

}  // namespace vrom
