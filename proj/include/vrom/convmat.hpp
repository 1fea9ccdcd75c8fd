#pragma once

#include <string>

#include <Eigen/Dense>

#include "vrom/error.hpp"
#include "vrom/signals.hpp"

namespace vrom {

/// Lower-triangular Toeplitz input matrix: data(i, j) = u(i - j)^power for i >= j.
struct InputMatrix {
  Eigen::MatrixXd data;
  int power = 1;
  std::string source;

  Eigen::Index rows() const { return data.rows(); }
  Eigen::Index memory_depth() const { return data.cols(); }
};

inline InputMatrix build_input_matrix(const TimeSignal& signal, std::size_t memory_depth, int power,
                                      std::string source = {}) {
  require(power >= 1 && power <= 3, "build_input_matrix: power must be 1, 2 or 3");
  require(memory_depth >= 1, "build_input_matrix: memory depth must be at least 1");
  require(memory_depth <= signal.size(),
          "build_input_matrix: memory depth exceeds the number of samples");
  const auto n = static_cast<Eigen::Index>(signal.size());
  const auto m = static_cast<Eigen::Index>(memory_depth);
  Eigen::VectorXd up = signal.values;
  if (power > 1) up = signal.values.array().pow(power).matrix();
  InputMatrix out;
  out.power = power;
  out.source = std::move(source);
  out.data = Eigen::MatrixXd::Zero(n, m);
  for (Eigen::Index j = 0; j < m; ++j) out.data.col(j).tail(n - j) = up.head(n - j);
  return out;
}

/// y = U h. Rows beyond the memory depth are kept, so the result has the
/// matrix's row count.
inline Eigen::VectorXd convolve(const InputMatrix& matrix, const Eigen::VectorXd& kernel) {
  require(kernel.size() == matrix.memory_depth(), "convolve: kernel length does not match matrix columns");
  return matrix.data * kernel;
}

inline TimeSignal convolve(const InputMatrix& matrix, const Eigen::VectorXd& kernel, const TimeGrid& grid) {
  return TimeSignal::make(grid, convolve(matrix, kernel));
}

}  // namespace vrom
