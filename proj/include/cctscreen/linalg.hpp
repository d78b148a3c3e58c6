#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <limits>
#include <string>

#include <Eigen/Dense>

namespace cctscreen {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Symmetric part of M, rejecting inputs that are far from symmetric.
inline MatrixXd symmetrized(const MatrixXd& M, double rel_tol = 1e-9) {
  if (M.rows() != M.cols()) throw std::invalid_argument("matrix is not square");
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > rel_tol * scale) {
    throw std::invalid_argument("matrix is not symmetric");
  }
  return 0.5 * (M + M.transpose());
}

inline VectorXd sym_eigenvalues(const MatrixXd& M) {
  if (M.size() == 0) return VectorXd();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrized(M), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

/// Largest eigenvalue of a symmetric matrix. M is declared NSD when this is
/// at most the caller's tolerance.
inline double psd_slack(const MatrixXd& M) {
  if (M.size() == 0) return -std::numeric_limits<double>::infinity();
  return sym_eigenvalues(M).maxCoeff();
}

inline double min_eigenvalue(const MatrixXd& M) {
  if (M.size() == 0) return std::numeric_limits<double>::infinity();
  return sym_eigenvalues(M).minCoeff();
}

/// Orthonormal basis of the null space of M (columns).
inline MatrixXd null_space(const MatrixXd& M, double rel_tol = 1e-10) {
  const int cols = static_cast<int>(M.cols());
  if (M.rows() == 0) return MatrixXd::Identity(cols, cols);
  Eigen::JacobiSVD<MatrixXd> svd(M, Eigen::ComputeFullV);
  const VectorXd& sv = svd.singularValues();
  const double cutoff = rel_tol * std::max(1.0, sv.size() ? sv(0) : 0.0);
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i) rank += sv(i) > cutoff;
  return svd.matrixV().rightCols(cols - rank);
}

/// Orthonormal basis of the orthogonal complement of span(V) in R^dim.
inline MatrixXd orthogonal_complement(const MatrixXd& V, int dim) {
  if (V.cols() == 0) return MatrixXd::Identity(dim, dim);
  return null_space(V.transpose());
}

}  // namespace cctscreen
