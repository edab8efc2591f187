#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "cldob/history_stack.hpp"
#include "cldob/numerics.hpp"
#include "cldob/systems.hpp"

namespace cldob {

/// Estimate left the finite range; carries the instant it happened.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(long step_)
      : std::runtime_error("observer diverged at step " + std::to_string(step_)),
        step(step_) {}
  long step;
};

/// Requested gains admit no feasible stack bounds.
struct InfeasibleBoundsError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class ObserverMode { cl, conventional };
enum class Integrator { euler, rk4 };

struct ObserverConfig {
  double kappa = 100.0;
  DiagonalGain lambda;
  double h = 1e-3;
  double omega = 5.0;
  ObserverMode mode = ObserverMode::cl;

  void validate() const {
    if (!(kappa > 0.0)) {
      throw std::invalid_argument("ObserverConfig: kappa must be > 0");
    }
    if (!(h > 0.0)) throw std::invalid_argument("ObserverConfig: h must be > 0");
    if (!(omega > 0.0)) {
      throw std::invalid_argument("ObserverConfig: omega must be > 0");
    }
  }
};

struct ObserverState {
  Eigen::VectorXd d_hat;
  HistoryStack stack;
};

/// Sampled difference term of the regular form,
///   zeta = psi(x_next) - psi(x_k) - h gamma(x_k, u_k),
/// which equals h B L(x_k) d(k) when the plant matches the model exactly.
inline Eigen::VectorXd zeta_discrete(const Eigen::VectorXd& x_k,
                                     const Eigen::VectorXd& x_next,
                                     const Eigen::VectorXd& u_k,
                                     const RegularSystem& sys, double h) {
  if (x_k.size() != sys.n || x_next.size() != sys.n) {
    throw std::invalid_argument("zeta_discrete: state dimension mismatch");
  }
  return sys.psi(x_next) - sys.psi(x_k) - h * sys.gamma(x_k, u_k);
}

/// Continuous difference term, zeta = dpsi/dx(x) x_dot - gamma(x, u), which
/// equals B L(x) d(t) on the exact plant.
inline Eigen::VectorXd zeta_continuous(const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& x_dot,
                                       const Eigen::VectorXd& u,
                                       const RegularSystem& sys) {
  if (x.size() != sys.n || x_dot.size() != sys.n) {
    throw std::invalid_argument("zeta_continuous: state dimension mismatch");
  }
  Eigen::VectorXd jx;
  if (sys.psi_jacobian) {
    jx = sys.psi_jacobian(x) * x_dot;
  } else {
    if (sys.r != sys.n) {
      throw std::invalid_argument(
          "zeta_continuous: psi_jacobian required when psi is not identity");
    }
    jx = x_dot;
  }
  return jx - sys.gamma(x, u);
}

/// Central-difference fallback for the state derivative.
inline Eigen::VectorXd central_difference(const Eigen::VectorXd& x_prev,
                                          const Eigen::VectorXd& x_next,
                                          double h) {
  if (!(h > 0.0)) throw std::invalid_argument("central_difference: h must be > 0");
  return (x_next - x_prev) / (2.0 * h);
}

/// Lower and upper stack bounds
///   S_L/U = (1/(h kappa)) (e^{h Lambda} - (1/2 +- sqrt(1/4 - h omega)) I),
/// feasible only when h omega <= 1/4.
inline std::pair<SymMatrix, SymMatrix> stack_bounds(const ObserverConfig& cfg,
                                                    int p) {
  cfg.validate();
  if (cfg.lambda.dim() != p) {
    throw std::invalid_argument("stack_bounds: lambda dimension mismatch");
  }
  const double hw = cfg.h * cfg.omega;
  if (hw > 0.25) {
    throw InfeasibleBoundsError(
        "stack_bounds: h*omega must be <= 1/4 (got " + std::to_string(hw) + ")");
  }
  const double root = std::sqrt(0.25 - hw);
  const Eigen::VectorXd ehl = diag_exp(cfg.lambda, cfg.h);
  const double scale = 1.0 / (cfg.h * cfg.kappa);
  const Eigen::VectorXd lo = scale * (ehl.array() - (0.5 + root)).matrix();
  const Eigen::VectorXd hi = scale * (ehl.array() - (0.5 - root)).matrix();
  return {SymMatrix(Eigen::MatrixXd(lo.asDiagonal())),
          SymMatrix(Eigen::MatrixXd(hi.asDiagonal()))};
}

namespace detail {

inline Eigen::VectorXd guard_finite(Eigen::VectorXd v, long step) {
  if (!v.allFinite() || v.norm() > 1e12) {
    throw DivergenceError(step);
  }
  return v;
}

}  // namespace detail

/// One sampled observer update,
///   d_hat(k+1) = (e^{h Lambda} - kappa h S) d_hat(k) + kappa X,
/// using the stack aggregates at the current instant.
inline Eigen::VectorXd discrete_step(ObserverState& state,
                                     const ObserverConfig& cfg) {
  const HistoryStack& st = state.stack;
  if (state.d_hat.size() != st.p()) {
    throw std::invalid_argument("discrete_step: d_hat dimension mismatch");
  }
  const Eigen::VectorXd ehl = diag_exp(cfg.lambda, cfg.h);
  Eigen::VectorXd next = ehl.cwiseProduct(state.d_hat) -
                         (cfg.kappa * cfg.h) * (st.S().mat() * state.d_hat) +
                         cfg.kappa * st.X();
  state.d_hat = detail::guard_finite(std::move(next), st.current_instant());
  return state.d_hat;
}

/// Depth-one baseline; identical arithmetic to discrete_step, named so runs
/// can tag which observer produced them.
inline Eigen::VectorXd conventional_step(ObserverState& state,
                                         const ObserverConfig& cfg) {
  return discrete_step(state, cfg);
}

/// Integrate d_hat' = (Lambda - kappa S) d_hat + kappa X across one sample
/// interval h with the stack held, using substeps of at most dt.
inline Eigen::VectorXd continuous_step(ObserverState& state,
                                       const ObserverConfig& cfg,
                                       Integrator integrator, double dt) {
  const HistoryStack& st = state.stack;
  if (state.d_hat.size() != st.p()) {
    throw std::invalid_argument("continuous_step: d_hat dimension mismatch");
  }
  if (!(dt > 0.0) || dt > cfg.h * (1.0 + 1e-12)) {
    throw std::invalid_argument("continuous_step: need 0 < dt <= h");
  }
  const long nsub = std::max(1L, std::lround(cfg.h / dt));
  const double step = cfg.h / static_cast<double>(nsub);
  const Eigen::VectorXd lam = cfg.lambda.entries();
  const Eigen::MatrixXd& S = st.S().mat();
  const Eigen::VectorXd kX = cfg.kappa * st.X();
  auto rhs = [&](const Eigen::VectorXd& v) {
    return (lam.cwiseProduct(v) - cfg.kappa * (S * v) + kX).eval();
  };
  Eigen::VectorXd v = state.d_hat;
  for (long i = 0; i < nsub; ++i) {
    if (integrator == Integrator::euler) {
      v += step * rhs(v);
    } else {
      const Eigen::VectorXd k1 = rhs(v);
      const Eigen::VectorXd k2 = rhs(v + 0.5 * step * k1);
      const Eigen::VectorXd k3 = rhs(v + 0.5 * step * k2);
      const Eigen::VectorXd k4 = rhs(v + step * k3);
      v += (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }
  state.d_hat = detail::guard_finite(std::move(v), st.current_instant());
  return state.d_hat;
}

/// Convergence condition of the continuous theory: S > (omega I + Lambda)/kappa.
inline bool continuous_convergence_condition(const SymMatrix& S, const ObserverConfig& cfg) {
  if (S.dim() != cfg.lambda.dim()) {
    throw std::invalid_argument("continuous_convergence_condition: dimension mismatch");
  }
  const Eigen::VectorXd thr =
      (cfg.omega + cfg.lambda.entries().array()).matrix() / cfg.kappa;
  return loewner_gt(S, SymMatrix(Eigen::MatrixXd(thr.asDiagonal())), 0.0);
}

}  // namespace cldob
