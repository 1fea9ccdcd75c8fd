#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "vrom/error.hpp"

namespace vrom::linalg {

/// Thin SVD A = U diag(sigma) V^T with a relative rank cutoff.
struct SvdFactors {
  Eigen::MatrixXd u_basis;
  Eigen::VectorXd singular_values;
  Eigen::MatrixXd v_basis;
  double rank_tolerance = 1e-10;

  Eigen::Index rank() const {
    if (singular_values.size() == 0 || singular_values[0] <= 0.0) return 0;
    const double cutoff = rank_tolerance * singular_values[0];
    Eigen::Index r = 0;
    while (r < singular_values.size() && singular_values[r] > cutoff) ++r;
    return r;
  }

  Eigen::MatrixXd reconstruct() const {
    return u_basis * singular_values.asDiagonal() * v_basis.transpose();
  }
};

inline SvdFactors svd(const Eigen::MatrixXd& matrix, double rank_tolerance = 1e-10) {
  require(matrix.allFinite(), "svd: matrix has non-finite entries");
  require(matrix.rows() > 0 && matrix.cols() > 0, "svd: empty matrix");
  Eigen::BDCSVD<Eigen::MatrixXd> dec(matrix, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (dec.info() != Eigen::Success)
    throw Error("svd: decomposition did not converge (" + std::to_string(matrix.rows()) + "x" +
                std::to_string(matrix.cols()) + ")");
  SvdFactors f{dec.matrixU(), dec.singularValues(), dec.matrixV(), rank_tolerance};
  if (!f.u_basis.allFinite() || !f.v_basis.allFinite() || !f.singular_values.allFinite())
    throw Error("svd: decomposition produced non-finite factors");
  return f;
}

/// Minimum-norm least-squares solution V diag(1/sigma) U^T rhs, dropping
/// singular values at or below rank_tolerance * sigma_max. An all-zero
/// matrix yields the zero vector.
inline Eigen::VectorXd pseudo_inverse_apply(const SvdFactors& f, const Eigen::VectorXd& rhs) {
  require(rhs.size() == f.u_basis.rows(), "pseudo_inverse_apply: rhs length does not match");
  const Eigen::Index r = f.rank();
  if (r == 0) return Eigen::VectorXd::Zero(f.v_basis.rows());
  Eigen::VectorXd coeff = f.u_basis.leftCols(r).transpose() * rhs;
  coeff.array() /= f.singular_values.head(r).array();
  return f.v_basis.leftCols(r) * coeff;
}

inline Eigen::VectorXd least_squares(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                     double rank_tolerance = 1e-10) {
  return pseudo_inverse_apply(svd(a, rank_tolerance), b);
}

inline double rms(const Eigen::VectorXd& v) {
  return v.size() == 0 ? 0.0 : std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
}

}  // namespace vrom::linalg
