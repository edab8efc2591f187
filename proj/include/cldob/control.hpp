#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <stdexcept>

namespace cldob {

struct ControlConfig {
  Eigen::VectorXd delta_baseline;
  double epsilon = 1e-3;
  double delta_max = 0.0;

  void validate() const {
    if (delta_baseline.size() == 0 || delta_baseline.minCoeff() < 0.0) {
      throw std::invalid_argument(
          "ControlConfig: delta_baseline must be nonnegative");
    }
    if (!(epsilon > 0.0)) {
      throw std::invalid_argument("ControlConfig: epsilon must be > 0");
    }
    if (!(delta_max > delta_baseline.maxCoeff())) {
      throw std::invalid_argument(
          "ControlConfig: delta_max must exceed max baseline");
    }
  }
};

/// Estimate-driven curing-rate compensation,
///   delta_i = baseline_i + (1 - x_i) sum_j w_ij dhat_j x_j / max(x_i, eps),
/// clipped into [0, delta_max].
inline Eigen::VectorXd compensate(const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& d_hat,
                                  const Eigen::MatrixXd& W,
                                  const ControlConfig& cfg) {
  const Eigen::Index n = x.size();
  if (d_hat.size() != n || W.rows() != n || W.cols() != n ||
      cfg.delta_baseline.size() != n) {
    throw std::invalid_argument("compensate: dimension mismatch");
  }
  const Eigen::VectorXd pressure = W * d_hat.cwiseProduct(x);
  Eigen::VectorXd delta(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double denom = std::max(x[i], cfg.epsilon);
    const double raw =
        cfg.delta_baseline[i] + (1.0 - x[i]) * pressure[i] / denom;
    delta[i] = std::clamp(raw, 0.0, cfg.delta_max);
  }
  return delta;
}

}  // namespace cldob
