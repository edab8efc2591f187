#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <vector>

#include "cldob/numerics.hpp"

namespace cldob {

/// System in regular form: z = psi(x), z' = gamma(x, u) + B L(x) d.
struct RegularSystem {
  int n = 0;  // state dimension
  int r = 0;  // regular-form dimension
  int p = 0;  // disturbance dimension
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> psi;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>
      gamma;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> gain_L;
  Eigen::MatrixXd B;  // r x p, orthonormal columns
  /// Jacobian of psi; may be empty when psi is the identity (r == n).
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> psi_jacobian;

  void validate() const {
    if (!(p >= 1 && p <= r && r <= n)) {
      throw std::invalid_argument("RegularSystem: need 1 <= p <= r <= n");
    }
    if (B.rows() != r || B.cols() != p) {
      throw std::invalid_argument("RegularSystem: B must be r x p");
    }
    const Eigen::MatrixXd btb = B.transpose() * B;
    if (!btb.isApprox(Eigen::MatrixXd::Identity(p, p), 1e-12)) {
      throw std::invalid_argument("RegularSystem: B'B must equal I_p");
    }
    if (!psi || !gamma || !gain_L) {
      throw std::invalid_argument("RegularSystem: psi, gamma, gain_L required");
    }
  }
};

struct CanonicalABC {
  Eigen::MatrixXd A;  // r x r, block-diagonal shift blocks
  Eigen::MatrixXd B;  // r x p, unit entry at the end of each block
  Eigen::MatrixXd C;  // p x r, unit entry at the start of each block
};

/// Canonical regular-form blocks for relative degrees r_list (one block per
/// disturbance channel). Block i is an r_i-chain: the output taps its first
/// state, the disturbance enters its last.
inline CanonicalABC build_canonical_ABC(const std::vector<int>& r_list) {
  if (r_list.empty()) {
    throw std::invalid_argument("build_canonical_ABC: empty r_list");
  }
  int r = 0;
  for (int ri : r_list) {
    if (ri < 1) {
      throw std::invalid_argument("build_canonical_ABC: each r_i must be >= 1");
    }
    r += ri;
  }
  const int p = static_cast<int>(r_list.size());
  CanonicalABC out;
  out.A = Eigen::MatrixXd::Zero(r, r);
  out.B = Eigen::MatrixXd::Zero(r, p);
  out.C = Eigen::MatrixXd::Zero(p, r);
  int off = 0;
  for (int i = 0; i < p; ++i) {
    const int ri = r_list[static_cast<size_t>(i)];
    for (int j = 0; j + 1 < ri; ++j) {
      out.A(off + j, off + j + 1) = 1.0;
    }
    out.B(off + ri - 1, i) = 1.0;
    out.C(i, off) = 1.0;
    off += ri;
  }
  return out;
}

/// Networked SIS epidemic model with time-varying infection rates treated as
/// the disturbance.
struct SISModel {
  int n = 0;
  Eigen::MatrixXd W;               // adjacency weights, zero diagonal
  Eigen::VectorXd delta_baseline;  // baseline curing rates
  double h = 0.0;                  // sampling period

  void validate() const {
    if (n < 1) throw std::invalid_argument("SISModel: n must be >= 1");
    if (W.rows() != n || W.cols() != n) {
      throw std::invalid_argument("SISModel: W must be n x n");
    }
    if (!W.allFinite()) throw std::invalid_argument("SISModel: W non-finite");
    for (int i = 0; i < n; ++i) {
      if (W(i, i) != 0.0) {
        throw std::invalid_argument("SISModel: W diagonal must be zero");
      }
      for (int j = 0; j < n; ++j) {
        if (W(i, j) < 0.0) {
          throw std::invalid_argument("SISModel: W must be nonnegative");
        }
      }
    }
    if (delta_baseline.size() != n || delta_baseline.minCoeff() < 0.0) {
      throw std::invalid_argument(
          "SISModel: delta_baseline must be n nonnegative rates");
    }
    if (!(h > 0.0)) throw std::invalid_argument("SISModel: h must be > 0");
  }
};

/// Disturbance gain of the SIS model, L(x) = (I - diag(x)) W diag(x).
inline Eigen::MatrixXd sis_gain(const Eigen::VectorXd& x,
                                const Eigen::MatrixXd& W) {
  if (x.size() != W.rows() || W.rows() != W.cols()) {
    throw std::invalid_argument("sis_gain: dimension mismatch");
  }
  const Eigen::VectorXd one_minus = Eigen::VectorXd::Ones(x.size()) - x;
  return one_minus.asDiagonal() * W * x.asDiagonal();
}

/// One explicit step of the sampled SIS dynamics:
///   x_i+ = h (1 - x_i) sum_j w_ij d_j x_j + (1 - h delta_i) x_i,
/// clamped to [0, 1] elementwise. When `clamped` is non-null it receives the
/// number of components the clamp touched.
inline Eigen::VectorXd sis_step(const Eigen::VectorXd& x,
                                const Eigen::VectorXd& delta,
                                const Eigen::VectorXd& d, const SISModel& m,
                                int* clamped = nullptr) {
  if (x.size() != m.n || delta.size() != m.n || d.size() != m.n) {
    throw std::invalid_argument("sis_step: dimension mismatch");
  }
  const Eigen::VectorXd pressure = m.W * d.cwiseProduct(x);
  Eigen::VectorXd next(m.n);
  int hits = 0;
  for (int i = 0; i < m.n; ++i) {
    double v = m.h * (1.0 - x[i]) * pressure[i] + (1.0 - m.h * delta[i]) * x[i];
    if (v < 0.0) {
      v = 0.0;
      ++hits;
    } else if (v > 1.0) {
      v = 1.0;
      ++hits;
    }
    next[i] = v;
  }
  if (clamped != nullptr) *clamped = hits;
  return next;
}

/// SIS model in regular form: psi = identity, B = I_n,
/// gamma(x, u) = -diag(x) u, L = sis_gain.
inline RegularSystem sis_regular(const SISModel& m) {
  m.validate();
  RegularSystem sys;
  sys.n = m.n;
  sys.r = m.n;
  sys.p = m.n;
  sys.B = Eigen::MatrixXd::Identity(m.n, m.n);
  sys.psi = [](const Eigen::VectorXd& x) { return x; };
  sys.gamma = [](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return (-x.cwiseProduct(u)).eval();
  };
  const Eigen::MatrixXd W = m.W;
  sys.gain_L = [W](const Eigen::VectorXd& x) { return sis_gain(x, W); };
  sys.psi_jacobian = [](const Eigen::VectorXd& x) {
    return Eigen::MatrixXd::Identity(x.size(), x.size()).eval();
  };
  sys.validate();
  return sys;
}

/// One explicit step of the auxiliary population model
///   x+ = x + h (H x + diag(x) F b + w),
/// floored at zero elementwise.
inline Eigen::VectorXd population_step(const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& b,
                                       const Eigen::MatrixXd& H,
                                       const Eigen::MatrixXd& F,
                                       const Eigen::VectorXd& w, double h) {
  const Eigen::Index n = x.size();
  if (H.rows() != n || H.cols() != n || F.rows() != n || w.size() != n ||
      F.cols() != b.size()) {
    throw std::invalid_argument("population_step: dimension mismatch");
  }
  Eigen::VectorXd next = x + h * (H * x + x.cwiseProduct(F * b) + w);
  return next.cwiseMax(0.0);
}

}  // namespace cldob
