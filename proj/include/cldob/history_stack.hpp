#pragma once

#include <Eigen/Dense>

#include <deque>
#include <stdexcept>
#include <utility>

#include "cldob/numerics.hpp"

namespace cldob {

/// One stacked record: the gain and the reduced difference term observed at
/// instant k_j. `gram` and `xterm` cache L'L and L'zeta, the only forms the
/// aggregate updates consume.
struct HistorySample {
  long instant = 0;
  Eigen::MatrixXd L;     // p x p gain at sample time
  Eigen::VectorXd zeta;  // B-reduced difference term (p-vector)
  Eigen::MatrixXd gram;  // L' L
  Eigen::VectorXd xterm; // L' zeta
};

/// Time-variant history stack holding the aggregates
///   S(k) = sum_j e^{h Lambda (k_j - k)} L_j' L_j e^{h Lambda (k_j - k)}
///   X(k) = sum_j e^{h Lambda (k_j - k)} L_j' zeta_j
/// maintained incrementally as the current instant advances, with a periodic
/// direct recomputation to cap floating-point drift.
class HistoryStack {
 public:
  HistoryStack(int p, double h, DiagonalGain lambda, long max_age)
      : p_(p),
        h_(h),
        lambda_(std::move(lambda)),
        max_age_(max_age),
        S_(SymMatrix::Zero(p)),
        X_(Eigen::VectorXd::Zero(p)),
        decay_(Eigen::VectorXd::Zero(p)) {
    if (p_ < 1) throw std::invalid_argument("HistoryStack: p must be >= 1");
    if (!(h_ > 0.0)) throw std::invalid_argument("HistoryStack: h must be > 0");
    if (lambda_.dim() != p_) {
      throw std::invalid_argument("HistoryStack: lambda dimension mismatch");
    }
    if (max_age_ < 1) {
      throw std::invalid_argument("HistoryStack: max_age must be >= 1");
    }
    decay_ = diag_exp(lambda_, -h_);
  }

  int p() const { return p_; }
  double h() const { return h_; }
  const DiagonalGain& lambda() const { return lambda_; }
  long max_age() const { return max_age_; }
  long current_instant() const { return k_; }
  int depth() const { return static_cast<int>(samples_.size()); }
  const SymMatrix& S() const { return S_; }
  const Eigen::VectorXd& X() const { return X_; }
  const std::deque<HistorySample>& samples() const { return samples_; }

  /// Advance the current instant by one and stack the sample describing the
  /// step that just completed. `L_new` and `zeta_new` belong to the old
  /// current instant, which becomes the appended sample's k_j. Samples older
  /// than max_age are dropped unconditionally.
  void advance_and_add(const Eigen::MatrixXd& L_new,
                       const Eigen::VectorXd& zeta_new) {
    if (L_new.rows() != p_ || L_new.cols() != p_ || zeta_new.size() != p_) {
      throw std::invalid_argument("advance_and_add: dimension mismatch");
    }
    if (!L_new.allFinite() || !zeta_new.allFinite()) {
      throw std::invalid_argument("advance_and_add: non-finite sample");
    }
    HistorySample s;
    s.instant = k_;
    s.L = L_new;
    s.zeta = zeta_new;
    s.gram = L_new.transpose() * L_new;
    s.xterm = L_new.transpose() * zeta_new;

    const Eigen::MatrixXd grown =
        decay_.asDiagonal() * (S_.mat() + s.gram) * decay_.asDiagonal();
    S_ = SymMatrix(grown);
    X_ = decay_.asDiagonal() * (X_ + s.xterm);

    samples_.push_back(std::move(s));
    ++k_;
    enforce_max_age();

    ++adds_;
    if (adds_ % kRefreshPeriod == 0) {
      refresh_from_direct();
    }
  }

  /// Algorithm-1 sample selection. Scans oldest-first and purges a sample
  /// when the stack after removal still clears the lower bound, or, as a
  /// forced purge, when the current stack violates the upper bound. Stops at
  /// the first sample neither rule removes, then applies the max-age cap.
  /// Returns the number of samples purged.
  int select_samples(const SymMatrix& S_L, const SymMatrix& S_U) {
    if (S_L.dim() != p_ || S_U.dim() != p_) {
      throw std::invalid_argument("select_samples: bound dimension mismatch");
    }
    int purged = 0;
    while (!samples_.empty()) {
      const SymMatrix S_prime = without_front();
      if (loewner_gt(S_prime, S_L, 0.0)) {
        drop_front(S_prime);
        ++purged;
      } else if (!loewner_gt(S_U, S_, 0.0)) {
        drop_front(S_prime);
        ++purged;
      } else {
        break;
      }
    }
    purged += enforce_max_age();
    return purged;
  }

  /// Direct evaluation of S and X from the retained samples; the oracle the
  /// incremental aggregates are checked against.
  std::pair<SymMatrix, Eigen::VectorXd> recompute_direct() const {
    Eigen::MatrixXd S_acc = Eigen::MatrixXd::Zero(p_, p_);
    Eigen::VectorXd X_acc = Eigen::VectorXd::Zero(p_);
    for (const HistorySample& s : samples_) {
      const Eigen::VectorXd w = weight(s.instant);
      S_acc += w.asDiagonal() * s.gram * w.asDiagonal();
      X_acc += w.asDiagonal() * s.xterm;
    }
    return {SymMatrix(S_acc), X_acc};
  }

  /// e^{h Lambda (k_j - k)} for a retained sample, as a diagonal.
  Eigen::VectorXd weight(long instant) const {
    return diag_exp(lambda_, h_ * static_cast<double>(instant - k_));
  }

 private:
  static constexpr long kRefreshPeriod = 1000;

  SymMatrix without_front() const {
    const HistorySample& s = samples_.front();
    const Eigen::VectorXd w = weight(s.instant);
    return SymMatrix(S_.mat() - w.asDiagonal() * s.gram * w.asDiagonal());
  }

  void drop_front(const SymMatrix& S_prime) {
    const HistorySample& s = samples_.front();
    const Eigen::VectorXd w = weight(s.instant);
    X_ -= w.asDiagonal() * s.xterm;
    S_ = S_prime;
    samples_.pop_front();
  }

  int enforce_max_age() {
    int purged = 0;
    while (!samples_.empty() && k_ - samples_.front().instant > max_age_) {
      drop_front(without_front());
      ++purged;
    }
    return purged;
  }

  void refresh_from_direct() {
    auto [S_direct, X_direct] = recompute_direct();
    S_ = std::move(S_direct);
    X_ = std::move(X_direct);
  }

  int p_;
  double h_;
  DiagonalGain lambda_;
  long max_age_;
  SymMatrix S_;
  Eigen::VectorXd X_;
  Eigen::VectorXd decay_;  // e^{-h Lambda}
  std::deque<HistorySample> samples_;
  long k_ = 0;
  long adds_ = 0;
};

inline int stack_depth(const HistoryStack& stack) { return stack.depth(); }

}  // namespace cldob
