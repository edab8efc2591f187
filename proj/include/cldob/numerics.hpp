#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace cldob {

/// Dense symmetric matrix. Construction symmetrizes the input so downstream
/// eigensolves can rely on exact symmetry.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols()) {
      throw std::invalid_argument("SymMatrix: matrix must be square");
    }
    mat_ = 0.5 * (m + m.transpose());
  }

  static SymMatrix Zero(Eigen::Index dim) {
    return SymMatrix(Eigen::MatrixXd::Zero(dim, dim));
  }

  Eigen::Index dim() const { return mat_.rows(); }
  const Eigen::MatrixXd& mat() const { return mat_; }

 private:
  Eigen::MatrixXd mat_;
};

/// Strictly negative diagonal gain Lambda = diag(lambda_1..lambda_p).
class DiagonalGain {
 public:
  explicit DiagonalGain(const Eigen::VectorXd& lambda) : lambda_(lambda) {
    if (lambda_.size() == 0) {
      throw std::invalid_argument("DiagonalGain: empty diagonal");
    }
    for (Eigen::Index i = 0; i < lambda_.size(); ++i) {
      if (!std::isfinite(lambda_[i]) || lambda_[i] >= 0.0) {
        throw std::invalid_argument(
            "DiagonalGain: entries must be finite and strictly negative");
      }
    }
  }

  static DiagonalGain uniform(Eigen::Index p, double value) {
    return DiagonalGain(Eigen::VectorXd::Constant(p, value));
  }

  Eigen::Index dim() const { return lambda_.size(); }
  const Eigen::VectorXd& entries() const { return lambda_; }

  /// Magnitude of the slowest mode, min_i |lambda_i|.
  double min_abs() const { return lambda_.cwiseAbs().minCoeff(); }

 private:
  Eigen::VectorXd lambda_;
};

/// Diagonal of exp(s * Lambda).
inline Eigen::VectorXd diag_exp(const DiagonalGain& lambda, double s) {
  return (s * lambda.entries().array()).exp().matrix();
}

/// Smallest eigenvalue of a symmetric matrix.
inline double min_eigenvalue(const SymMatrix& m) {
  if (m.dim() == 0) {
    throw std::invalid_argument("min_eigenvalue: empty matrix");
  }
  if (!m.mat().allFinite()) {
    throw std::invalid_argument("min_eigenvalue: non-finite entries");
  }
  if (m.dim() == 1) {
    return m.mat()(0, 0);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.mat(),
                                                    Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("min_eigenvalue: eigensolver failed");
  }
  return es.eigenvalues()(0);
}

/// Loewner-order comparison A > B, i.e. min_eig(A - B) > tol.
inline bool loewner_gt(const SymMatrix& a, const SymMatrix& b, double tol) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("loewner_gt: dimension mismatch");
  }
  return min_eigenvalue(SymMatrix(a.mat() - b.mat())) > tol;
}

}  // namespace cldob
