#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cldob/history_stack.hpp"
#include "cldob/numerics.hpp"

namespace cldob {

/// Where the stack sits relative to the lower/upper bounds, with Loewner
/// margins (smallest eigenvalue of the respective difference).
struct ConditionStatus {
  bool lower_ok = false;
  bool upper_ok = false;
  double margin_lower = 0.0;
  double margin_upper = 0.0;
};

inline ConditionStatus check_condition(const SymMatrix& S, const SymMatrix& S_L,
                                       const SymMatrix& S_U) {
  if (S.dim() != S_L.dim() || S.dim() != S_U.dim()) {
    throw std::invalid_argument("check_condition: dimension mismatch");
  }
  ConditionStatus st;
  st.margin_lower = min_eigenvalue(SymMatrix(S.mat() - S_L.mat()));
  st.margin_upper = min_eigenvalue(SymMatrix(S_U.mat() - S.mat()));
  st.lower_ok = st.margin_lower > 0.0;
  st.upper_ok = st.margin_upper > 0.0;
  return st;
}

/// Per-step disturbance model residuals xi_d, indexed contiguously from 0.
class ResidualHistory {
 public:
  void push(Eigen::VectorXd xi_d) { values_.push_back(std::move(xi_d)); }

  const Eigen::VectorXd& at(long k) const {
    if (k < 0 || k >= static_cast<long>(values_.size())) {
      throw std::out_of_range("ResidualHistory: missing residual index " +
                              std::to_string(k));
    }
    return values_[static_cast<size_t>(k)];
  }

  long size() const { return static_cast<long>(values_.size()); }

 private:
  std::vector<Eigen::VectorXd> values_;
};

/// Sampled model residual xi_d(k) = d(k+1) - e^{h Lambda} d(k).
inline Eigen::VectorXd residual_discrete(const Eigen::VectorXd& d_k,
                                         const Eigen::VectorXd& d_next,
                                         const DiagonalGain& lambda, double h) {
  if (d_k.size() != lambda.dim() || d_next.size() != lambda.dim()) {
    throw std::invalid_argument("residual_discrete: dimension mismatch");
  }
  return d_next - diag_exp(lambda, h).cwiseProduct(d_k);
}

/// Continuous model residual xi_d(t) = d_dot - Lambda d.
inline Eigen::VectorXd residual_continuous(const Eigen::VectorXd& d_dot,
                                           const Eigen::VectorXd& d,
                                           const DiagonalGain& lambda) {
  if (d_dot.size() != lambda.dim() || d.size() != lambda.dim()) {
    throw std::invalid_argument("residual_continuous: dimension mismatch");
  }
  return d_dot - lambda.entries().cwiseProduct(d);
}

/// Accumulated error carried by the retained samples,
///   xi(k) = xi_d(k) + sum_j W_j sum_{i=k_j}^{k-1} xi_d(i),
/// with W_j = e^{h Lambda (k_j - k)} L_j' L_j e^{h Lambda (k_j - k)}.
/// Residuals must cover every index from the oldest retained k_j through k.
inline Eigen::VectorXd accumulated_error_discrete(
    const HistoryStack& stack, const ResidualHistory& residuals) {
  const long k = stack.current_instant();
  Eigen::VectorXd acc = residuals.at(k);
  for (const HistorySample& s : stack.samples()) {
    Eigen::VectorXd run = Eigen::VectorXd::Zero(stack.p());
    for (long i = s.instant; i < k; ++i) {
      run += residuals.at(i);
    }
    const Eigen::VectorXd w = stack.weight(s.instant);
    acc += w.asDiagonal() * (s.gram * (w.asDiagonal() * run));
  }
  return acc;
}

/// Ultimate-bound radius of the sampled theory,
///   (1/(2 omega) + sqrt(1/(4 omega) + h/omega)) (rho + 1) xi_bar.
inline double uub_radius_discrete(double omega, double h, double xi_bar,
                                  double rho) {
  if (!(omega > 0.0) || !(h > 0.0) || xi_bar < 0.0 || rho < 0.0) {
    throw std::invalid_argument("uub_radius_discrete: invalid arguments");
  }
  return (1.0 / (2.0 * omega) + std::sqrt(1.0 / (4.0 * omega) + h / omega)) *
         (rho + 1.0) * xi_bar;
}

/// Ultimate-bound radius of the continuous theory, (rho + 1) xi_bar / omega.
inline double uub_radius_continuous(double omega, double xi_bar, double rho) {
  if (!(omega > 0.0) || xi_bar < 0.0 || rho < 0.0) {
    throw std::invalid_argument("uub_radius_continuous: invalid arguments");
  }
  return (rho + 1.0) * xi_bar / omega;
}

/// Persistent-excitation proxy over a window of gain-disturbance products:
/// the smallest eigenvalue of h sum_i v_i v_i'. Empty windows score zero.
inline double pe_metric(const std::vector<Eigen::VectorXd>& products, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("pe_metric: h must be > 0");
  if (products.empty()) return 0.0;
  const Eigen::Index p = products.front().size();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
  for (const Eigen::VectorXd& v : products) {
    if (v.size() != p) {
      throw std::invalid_argument("pe_metric: inconsistent dimensions");
    }
    gram.noalias() += v * v.transpose();
  }
  return min_eigenvalue(SymMatrix(h * gram));
}

}  // namespace cldob
