#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cldob/config.hpp"
#include "cldob/control.hpp"
#include "cldob/diagnostics.hpp"
#include "cldob/history_stack.hpp"
#include "cldob/numerics.hpp"
#include "cldob/observer.hpp"
#include "cldob/systems.hpp"

namespace cldob {

// ---------------------------------------------------------------------------
// Seeded randomness. Independent substreams are derived from (seed, tag) so
// that adding a new consumer never perturbs the draws of existing ones.
// ---------------------------------------------------------------------------

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t tag) {
  return std::mt19937_64(mix64(seed ^ mix64(tag)));
}

/// Uniform double in [0, 1) with 53 random bits.
inline double next_uniform(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// Network input
// ---------------------------------------------------------------------------

/// Directed Erdős–Rényi adjacency with zero diagonal; each present edge
/// weight is uniform in [weight_lo, weight_hi]. Row-major edge scan keeps the
/// result bit-identical for a fixed seed.
inline Eigen::MatrixXd generate_network(int n, double density, double weight_lo,
                                        double weight_hi,
                                        std::uint64_t seed) {
  if (n < 2) throw ConfigError("generate_network: n must be >= 2");
  if (!(density > 0.0 && density <= 1.0)) {
    throw ConfigError("generate_network: density must be in (0, 1]");
  }
  if (!(weight_lo > 0.0 && weight_hi >= weight_lo)) {
    throw ConfigError("generate_network: bad weight range");
  }
  std::mt19937_64 g = make_stream(seed, 0);
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double u = next_uniform(g);
      if (u < density) {
        W(i, j) = weight_lo + (weight_hi - weight_lo) * next_uniform(g);
      }
    }
  }
  return W;
}

/// Read an n x n adjacency matrix from a headerless CSV of n comma-separated
/// rows. Validates squareness, zero diagonal, and nonnegative finite weights.
inline Eigen::MatrixXd read_adjacency_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open adjacency file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    rows.push_back(
        detail::parse_list(line, path + ":" + std::to_string(lineno)));
  }
  const int n = static_cast<int>(rows.size());
  if (n < 2) throw ConfigError("adjacency file must have >= 2 rows: " + path);
  Eigen::MatrixXd W(n, n);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(rows[i].size()) != n) {
      throw ConfigError("adjacency row " + std::to_string(i + 1) + " has " +
                        std::to_string(rows[i].size()) + " entries, expected " +
                        std::to_string(n) + ": " + path);
    }
    for (int j = 0; j < n; ++j) W(i, j) = rows[i][j];
  }
  if (W.diagonal().cwiseAbs().maxCoeff() != 0.0) {
    throw ConfigError("adjacency diagonal must be zero: " + path);
  }
  if (W.minCoeff() < 0.0 || !W.allFinite()) {
    throw ConfigError("adjacency weights must be finite and >= 0: " + path);
  }
  return W;
}

// ---------------------------------------------------------------------------
// Disturbance profiles
// ---------------------------------------------------------------------------

/// Per-node sinusoid family d_i(t) = offset_i + amplitude_i sin(2π f_i t + φ_i).
struct SinusoidProfile {
  Eigen::VectorXd amplitude;
  Eigen::VectorXd frequency;
  Eigen::VectorXd phase;
  Eigen::VectorXd offset;

  int size() const { return static_cast<int>(offset.size()); }

  double at(int i, double t) const {
    return offset[i] +
           amplitude[i] *
               std::sin(2.0 * M_PI * frequency[i] * t + phase[i]);
  }

  Eigen::VectorXd sample(double t) const {
    Eigen::VectorXd d(size());
    for (int i = 0; i < size(); ++i) d[i] = at(i, t);
    return d;
  }

  void validate() const {
    const auto n = offset.size();
    if (amplitude.size() != n || frequency.size() != n || phase.size() != n) {
      throw ConfigError("disturbance profile arrays must share length");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(amplitude[i] >= 0.0)) {
        throw ConfigError("disturbance amplitude must be >= 0");
      }
      if (!(offset[i] >= amplitude[i])) {
        throw ConfigError(
            "disturbance offset must be >= amplitude (rates stay >= 0)");
      }
    }
  }
};

inline double disturbance_at(const SinusoidProfile& p, int i, double t) {
  return p.at(i, t);
}

// ---------------------------------------------------------------------------
// Resolution of a config into concrete experiment inputs
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::VectorXd broadcast(const std::vector<double>& v, int n,
                                 const char* what) {
  if (v.size() == 1) return Eigen::VectorXd::Constant(n, v[0]);
  if (static_cast<int>(v.size()) == n) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), n);
  }
  throw ConfigError(std::string(what) + " must have 1 or n entries (got " +
                    std::to_string(v.size()) + ", n = " + std::to_string(n) +
                    ")");
}

inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0.0) a += 2.0 * M_PI;
  return a - M_PI;
}

}  // namespace detail

struct ResolvedExperiment {
  ExperimentConfig cfg;
  DiagonalGain lambda;
  Eigen::MatrixXd W;
  Eigen::VectorXd x0;
  SinusoidProfile profile;
  Eigen::VectorXd delta_baseline;
  SISModel model;
  ControlConfig ctrl;
  SymMatrix S_L;
  SymMatrix S_U;
  long max_age = 1;
  long K = 0;
};

/// Expand an ExperimentConfig into concrete arrays, the network, the stack
/// bounds, and the seeded initial state. Throws ConfigError (or
/// InfeasibleBoundsError) on any inconsistency, before any stepping happens.
inline ResolvedExperiment resolve_experiment(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  cfg.validate();
  const int n = cfg.n;
  const long K = cfg.steps();

  std::vector<double> lambda_list =
      cfg.lambda_values.empty() ? std::vector<double>{cfg.lambda_uniform}
                                : cfg.lambda_values;
  DiagonalGain lambda(detail::broadcast(lambda_list, n, "lambda.values"));

  Eigen::MatrixXd W = cfg.graph_file.empty()
                          ? generate_network(n, cfg.graph_density,
                                             cfg.weight_lo, cfg.weight_hi,
                                             cfg.seed)
                          : read_adjacency_csv(cfg.graph_file);
  if (W.rows() != n) {
    throw ConfigError("adjacency size " + std::to_string(W.rows()) +
                      " does not match n = " + std::to_string(n));
  }

  std::mt19937_64 g_init = make_stream(cfg.seed, 1);
  Eigen::VectorXd x0(n);
  for (int i = 0; i < n; ++i) x0[i] = next_uniform(g_init);

  SinusoidProfile profile;
  profile.amplitude = detail::broadcast(cfg.dist_amplitude, n,
                                        "disturbance.amplitude");
  profile.offset = detail::broadcast(cfg.dist_offset, n, "disturbance.offset");
  if (!cfg.dist_frequency.empty()) {
    profile.frequency =
        detail::broadcast(cfg.dist_frequency, n, "disturbance.frequency");
  } else {
    profile.frequency.resize(n);
    for (int i = 0; i < n; ++i) {
      profile.frequency[i] =
          cfg.freq_lo + (cfg.freq_hi - cfg.freq_lo) *
                            (n == 1 ? 0.0
                                    : static_cast<double>(i) /
                                          static_cast<double>(n - 1));
    }
  }
  if (!cfg.dist_phase.empty()) {
    profile.phase = detail::broadcast(cfg.dist_phase, n, "disturbance.phase");
  } else {
    // Default phases align every node's trough at t = 0.6 T, producing a
    // common low-excitation episode late in the run.
    profile.phase.resize(n);
    for (int i = 0; i < n; ++i) {
      profile.phase[i] = detail::wrap_angle(
          -0.5 * M_PI - 2.0 * M_PI * profile.frequency[i] * 0.6 * cfg.T);
    }
  }
  profile.validate();

  Eigen::VectorXd delta_baseline =
      detail::broadcast(cfg.delta_baseline, n, "delta_baseline");
  if (delta_baseline.minCoeff() < 0.0) {
    throw ConfigError("delta_baseline must be >= 0");
  }

  SISModel model{n, W, delta_baseline, cfg.h};
  model.validate();

  const double base_max = delta_baseline.maxCoeff();
  double delta_max = cfg.control_delta_max;
  if (!(delta_max > 0.0)) delta_max = base_max > 0.0 ? 10.0 * base_max : 1.0;
  ControlConfig ctrl{delta_baseline, cfg.control_epsilon, delta_max};
  if (cfg.control == ControlMode::compensate) ctrl.validate();

  ObserverConfig ocfg{cfg.kappa, lambda, cfg.h, cfg.omega, ObserverMode::cl};
  ocfg.validate();
  auto bounds = stack_bounds(ocfg, n);

  long max_age = cfg.max_age;
  if (max_age == 0) {
    max_age = static_cast<long>(std::ceil(5.0 / (cfg.h * lambda.min_abs())));
  }

  return ResolvedExperiment{std::move(cfg),    std::move(lambda),
                            std::move(W),      std::move(x0),
                            std::move(profile), std::move(delta_baseline),
                            std::move(model),  std::move(ctrl),
                            std::move(bounds.first), std::move(bounds.second),
                            max_age,           K};
}

// ---------------------------------------------------------------------------
// Simulation loop
// ---------------------------------------------------------------------------

struct TrajectoryRecord {
  long k = 0;
  double t = 0.0;
  Eigen::VectorXd x;
  Eigen::VectorXd d;
  Eigen::VectorXd d_hat;
  double err_norm = 0.0;
  long depth = 0;
  bool lower_ok = false;
  bool upper_ok = false;
  double margin_lower = 0.0;
  double margin_upper = 0.0;
  double pe = 0.0;
  int clamped = 0;  // clamp activations incurred stepping into this state
};

struct RunResult {
  std::vector<TrajectoryRecord> records;
  bool diverged = false;
  long diverged_step = -1;
  long purge_count = 0;
  long clamp_total = 0;
};

/// One plant-observer simulation. Per iteration k the loop records the state,
/// steps the plant with the current curing rates, forms the difference term,
/// feeds the history stack, runs selection (CL mode only), and advances the
/// estimate; the conventional mode is the same machine restricted to the most
/// recent sample. On observer divergence the run stops and is tagged, with
/// all records up to the failure retained.
inline RunResult run_one(const ResolvedExperiment& R, ObserverMode omode) {
  const ExperimentConfig& cfg = R.cfg;
  const int n = cfg.n;
  const long K = R.K;
  RegularSystem sys = sis_regular(R.model);
  ObserverConfig ocfg{cfg.kappa, R.lambda, cfg.h, cfg.omega, omode};
  const long max_age = omode == ObserverMode::conventional ? 1 : R.max_age;
  ObserverState st{Eigen::VectorXd::Zero(n),
                   HistoryStack(n, cfg.h, R.lambda, max_age)};

  const long pe_win =
      std::max<long>(1, std::lround(cfg.pe_window / cfg.h));
  std::deque<Eigen::VectorXd> pe_products;
  Eigen::MatrixXd pe_gram = Eigen::MatrixXd::Zero(n, n);
  long pe_pushes = 0;

  RunResult out;
  out.records.reserve(static_cast<size_t>(K) + 1);
  Eigen::VectorXd x = R.x0;
  int pending_clamps = 0;

  for (long k = 0; k <= K; ++k) {
    const double t = cfg.h * static_cast<double>(k);
    const Eigen::VectorXd d = R.profile.sample(t);
    const Eigen::MatrixXd L = sis_gain(x, R.W);

    const Eigen::VectorXd v = L * d;
    pe_products.push_back(v);
    pe_gram.noalias() += v * v.transpose();
    if (static_cast<long>(pe_products.size()) > pe_win) {
      const Eigen::VectorXd& u = pe_products.front();
      pe_gram.noalias() -= u * u.transpose();
      pe_products.pop_front();
    }
    if (++pe_pushes % 4096 == 0) {  // periodic rebuild against rounding drift
      pe_gram.setZero();
      for (const auto& w : pe_products) pe_gram.noalias() += w * w.transpose();
    }
    const double pe = min_eigenvalue(SymMatrix(cfg.h * pe_gram));

    const ConditionStatus cond = check_condition(st.stack.S(), R.S_L, R.S_U);

    TrajectoryRecord rec;
    rec.k = k;
    rec.t = t;
    rec.x = x;
    rec.d = d;
    rec.d_hat = st.d_hat;
    rec.err_norm = (d - st.d_hat).norm();
    rec.depth = stack_depth(st.stack);
    rec.lower_ok = cond.lower_ok;
    rec.upper_ok = cond.upper_ok;
    rec.margin_lower = cond.margin_lower;
    rec.margin_upper = cond.margin_upper;
    rec.pe = pe;
    rec.clamped = pending_clamps;
    out.records.push_back(std::move(rec));
    if (k == K) break;

    const Eigen::VectorXd delta =
        cfg.control == ControlMode::compensate
            ? compensate(x, st.d_hat, R.W, R.ctrl)
            : R.delta_baseline;

    int clamps = 0;
    const Eigen::VectorXd x_next = sis_step(x, delta, d, R.model, &clamps);
    pending_clamps = clamps;
    out.clamp_total += clamps;

    Eigen::VectorXd zeta = zeta_discrete(x, x_next, delta, sys, cfg.h);
    if (cfg.observer_time == ObserverTime::continuous) zeta /= cfg.h;
    st.stack.advance_and_add(L, zeta);
    if (omode == ObserverMode::cl) {
      out.purge_count += st.stack.select_samples(R.S_L, R.S_U);
    }

    try {
      if (cfg.observer_time == ObserverTime::discrete) {
        discrete_step(st, ocfg);
      } else {
        continuous_step(st, ocfg, cfg.integrator, cfg.h);
      }
    } catch (const DivergenceError&) {
      out.diverged = true;
      out.diverged_step = k + 1;
      break;
    }
    x = x_next;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct SummaryOptions {
  double final_frac = 0.2;          // tail fraction of the horizon
  double singular_threshold = 0.05; // min_i min(x_i, 1-x_i) cutoff
};

struct MetricsReport {
  long steps = 0;
  bool diverged = false;
  long diverged_step = -1;
  double rmse_total = 0.0;
  double rmse_final = 0.0;
  double rmse_singular = 0.0;
  long singular_count = 0;
  double err_final = 0.0;
  double max_err_final = 0.0;
  long max_depth = 0;
  double mean_depth = 0.0;
  long final_depth = 0;
  double lower_ok_fraction = 0.0;
  double upper_ok_fraction = 0.0;
  double min_x = 0.0;
  double t_min_x = 0.0;
  double min_gap = 0.0;
  double t_min_gap = 0.0;
  double t_depth_max = 0.0;
  double mean_infection_final = 0.0;
  double pe_final = 0.0;
  double pe_min = 0.0;
  double pe_max = 0.0;
  long clamp_total = 0;
};

/// Reduce a trajectory to the report quantities. The depth argmax is taken as
/// the midpoint of the (first, last) records attaining the maximum depth, so
/// plateaus at the retention ceiling do not bias the location estimate.
inline MetricsReport summarize(const std::vector<TrajectoryRecord>& records,
                               const SummaryOptions& opts = {}) {
  if (records.empty()) throw std::invalid_argument("summarize: empty records");
  MetricsReport r;
  r.steps = static_cast<long>(records.size());

  double sq_total = 0.0, sq_final = 0.0, sq_singular = 0.0;
  long n_final = 0;
  const size_t tail_start = static_cast<size_t>(
      std::floor(static_cast<double>(records.size()) * (1.0 - opts.final_frac)));
  double depth_sum = 0.0;
  long lower_cnt = 0, upper_cnt = 0;
  r.min_x = std::numeric_limits<double>::infinity();
  r.min_gap = std::numeric_limits<double>::infinity();
  r.pe_min = std::numeric_limits<double>::infinity();
  r.pe_max = -std::numeric_limits<double>::infinity();
  long depth_max = -1;
  double t_depth_first = 0.0, t_depth_last = 0.0;
  double infection_sum = 0.0;

  for (size_t idx = 0; idx < records.size(); ++idx) {
    const TrajectoryRecord& rec = records[idx];
    const double e2 = rec.err_norm * rec.err_norm;
    sq_total += e2;
    const double xmin = rec.x.minCoeff();
    const double gap = std::min(xmin, 1.0 - rec.x.maxCoeff());
    if (xmin < r.min_x) {
      r.min_x = xmin;
      r.t_min_x = rec.t;
    }
    if (gap < r.min_gap) {
      r.min_gap = gap;
      r.t_min_gap = rec.t;
    }
    if (gap < opts.singular_threshold) {
      sq_singular += e2;
      ++r.singular_count;
    }
    if (idx >= tail_start) {
      sq_final += e2;
      ++n_final;
      r.max_err_final = std::max(r.max_err_final, rec.err_norm);
      infection_sum += rec.x.mean();
    }
    depth_sum += static_cast<double>(rec.depth);
    if (rec.depth > depth_max) {
      depth_max = rec.depth;
      t_depth_first = rec.t;
      t_depth_last = rec.t;
    } else if (rec.depth == depth_max) {
      t_depth_last = rec.t;
    }
    if (rec.lower_ok) ++lower_cnt;
    if (rec.upper_ok) ++upper_cnt;
    r.pe_min = std::min(r.pe_min, rec.pe);
    r.pe_max = std::max(r.pe_max, rec.pe);
    r.clamp_total += rec.clamped;
  }

  const double N = static_cast<double>(records.size());
  r.rmse_total = std::sqrt(sq_total / N);
  r.rmse_final = n_final > 0 ? std::sqrt(sq_final / n_final) : 0.0;
  r.rmse_singular =
      r.singular_count > 0 ? std::sqrt(sq_singular / r.singular_count) : 0.0;
  r.err_final = records.back().err_norm;
  r.max_depth = depth_max;
  r.mean_depth = depth_sum / N;
  r.final_depth = records.back().depth;
  r.lower_ok_fraction = lower_cnt / N;
  r.upper_ok_fraction = upper_cnt / N;
  r.t_depth_max = 0.5 * (t_depth_first + t_depth_last);
  r.mean_infection_final = n_final > 0 ? infection_sum / n_final : 0.0;
  r.pe_final = records.back().pe;
  return r;
}

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
  return nlohmann::json{{"steps", r.steps},
                        {"diverged", r.diverged},
                        {"diverged_step", r.diverged_step},
                        {"rmse_total", r.rmse_total},
                        {"rmse_final", r.rmse_final},
                        {"rmse_singular", r.rmse_singular},
                        {"singular_count", r.singular_count},
                        {"err_final", r.err_final},
                        {"max_err_final", r.max_err_final},
                        {"max_depth", r.max_depth},
                        {"mean_depth", r.mean_depth},
                        {"final_depth", r.final_depth},
                        {"lower_ok_fraction", r.lower_ok_fraction},
                        {"upper_ok_fraction", r.upper_ok_fraction},
                        {"min_x", r.min_x},
                        {"t_min_x", r.t_min_x},
                        {"min_gap", r.min_gap},
                        {"t_min_gap", r.t_min_gap},
                        {"t_depth_max", r.t_depth_max},
                        {"mean_infection_final", r.mean_infection_final},
                        {"pe_final", r.pe_final},
                        {"pe_min", r.pe_min},
                        {"pe_max", r.pe_max},
                        {"clamp_total", r.clamp_total}};
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_write(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot write file: " + path);
  return f;
}

inline void finish_write(const FilePtr& f, const std::string& path) {
  if (std::ferror(f.get()) || std::fflush(f.get()) != 0) {
    throw std::runtime_error("write failed: " + path);
  }
}

}  // namespace detail

/// Full-resolution trajectory CSV with 17-significant-digit floats, so a
/// re-read reproduces every double bit-for-bit.
inline void write_trajectory_csv(const std::vector<TrajectoryRecord>& records,
                                 int n, const std::string& path) {
  auto f = detail::open_write(path);
  std::fputs("k,t", f.get());
  for (int i = 1; i <= n; ++i) std::fprintf(f.get(), ",x_%d", i);
  for (int i = 1; i <= n; ++i) std::fprintf(f.get(), ",d_%d", i);
  for (int i = 1; i <= n; ++i) std::fprintf(f.get(), ",dhat_%d", i);
  std::fputs(",err_norm,depth,lower_ok,upper_ok,pe_metric\n", f.get());
  for (const TrajectoryRecord& r : records) {
    std::fprintf(f.get(), "%ld,%.17g", r.k, r.t);
    for (int i = 0; i < n; ++i) std::fprintf(f.get(), ",%.17g", r.x[i]);
    for (int i = 0; i < n; ++i) std::fprintf(f.get(), ",%.17g", r.d[i]);
    for (int i = 0; i < n; ++i) std::fprintf(f.get(), ",%.17g", r.d_hat[i]);
    std::fprintf(f.get(), ",%.17g,%ld,%d,%d,%.17g\n", r.err_norm, r.depth,
                 r.lower_ok ? 1 : 0, r.upper_ok ? 1 : 0, r.pe);
  }
  detail::finish_write(f, path);
}

/// Re-read a trajectory CSV written by write_trajectory_csv. Fields not
/// stored in the file (margins, clamp counts) come back zeroed.
inline std::vector<TrajectoryRecord> read_trajectory_csv(
    const std::string& path, int* n_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory file: " + path);
  std::string header;
  if (!std::getline(in, header)) {
    throw std::runtime_error("empty trajectory file: " + path);
  }
  int n = 0;
  {
    size_t pos = 0;
    while ((pos = header.find(",x_", pos)) != std::string::npos) {
      ++n;
      ++pos;
    }
  }
  if (n == 0) throw std::runtime_error("no state columns in: " + path);
  if (n_out) *n_out = n;
  std::vector<TrajectoryRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const std::vector<double> v = detail::parse_list(line, path);
    if (static_cast<int>(v.size()) != 3 * n + 7) {
      throw std::runtime_error("bad trajectory row width in: " + path);
    }
    TrajectoryRecord r;
    r.k = std::lround(v[0]);
    r.t = v[1];
    r.x = Eigen::Map<const Eigen::VectorXd>(v.data() + 2, n);
    r.d = Eigen::Map<const Eigen::VectorXd>(v.data() + 2 + n, n);
    r.d_hat = Eigen::Map<const Eigen::VectorXd>(v.data() + 2 + 2 * n, n);
    r.err_norm = v[2 + 3 * n];
    r.depth = std::lround(v[3 + 3 * n]);
    r.lower_ok = v[4 + 3 * n] != 0.0;
    r.upper_ok = v[5 + 3 * n] != 0.0;
    r.pe = v[6 + 3 * n];
    records.push_back(std::move(r));
  }
  return records;
}

namespace detail {

/// Two-column t/value series, decimated to at most ~2000 points.
inline void write_plot_series(const std::vector<TrajectoryRecord>& records,
                              const std::string& path,
                              const std::function<double(const TrajectoryRecord&)>& value) {
  auto f = open_write(path);
  std::fputs("t,value\n", f.get());
  const long stride =
      std::max<long>(1, static_cast<long>(records.size()) / 2000);
  for (size_t i = 0; i < records.size();
       i += static_cast<size_t>(stride)) {
    std::fprintf(f.get(), "%.17g,%.17g\n", records[i].t, value(records[i]));
  }
  finish_write(f, path);
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_vector(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += fmt_double(v[i]);
  }
  return s;
}

}  // namespace detail

/// Echo of every resolved setting, including derived quantities, as the same
/// flat key = value format the loader accepts.
inline void write_config_echo(const ResolvedExperiment& R,
                              const std::string& path) {
  const ExperimentConfig& c = R.cfg;
  auto f = detail::open_write(path);
  auto put = [&](const std::string& k, const std::string& v) {
    std::fprintf(f.get(), "%s = %s\n", k.c_str(), v.c_str());
  };
  put("n", std::to_string(c.n));
  put("h", detail::fmt_double(c.h));
  put("T", detail::fmt_double(c.T));
  put("kappa", detail::fmt_double(c.kappa));
  put("omega", detail::fmt_double(c.omega));
  put("seed", std::to_string(c.seed));
  put("mode", c.mode == RunMode::cl
                  ? "cl"
                  : (c.mode == RunMode::conventional ? "conventional"
                                                     : "both"));
  put("control", c.control == ControlMode::compensate ? "compensate" : "off");
  put("observer_time",
      c.observer_time == ObserverTime::continuous ? "continuous" : "discrete");
  put("observer.integrator",
      c.integrator == Integrator::rk4 ? "rk4" : "euler");
  put("output_dir", c.output_dir);
  if (!c.graph_file.empty()) {
    put("graph.file", c.graph_file);
  } else {
    put("graph.density", detail::fmt_double(c.graph_density));
    put("graph.weight_lo", detail::fmt_double(c.weight_lo));
    put("graph.weight_hi", detail::fmt_double(c.weight_hi));
  }
  put("lambda.values", detail::fmt_vector(R.lambda.entries()));
  put("disturbance.amplitude", detail::fmt_vector(R.profile.amplitude));
  put("disturbance.offset", detail::fmt_vector(R.profile.offset));
  put("disturbance.frequency", detail::fmt_vector(R.profile.frequency));
  put("disturbance.phase", detail::fmt_vector(R.profile.phase));
  put("delta_baseline", detail::fmt_vector(R.delta_baseline));
  put("control.epsilon", detail::fmt_double(R.ctrl.epsilon));
  put("control.delta_max", detail::fmt_double(R.ctrl.delta_max));
  put("stack.max_age", std::to_string(R.max_age));
  put("pe.window", detail::fmt_double(c.pe_window));
  put("derived.steps", std::to_string(R.K));
  put("derived.bounds_lower_diag",
      detail::fmt_vector(R.S_L.mat().diagonal()));
  put("derived.bounds_upper_diag",
      detail::fmt_vector(R.S_U.mat().diagonal()));
  detail::finish_write(f, path);
}

/// Trajectory + metrics + per-figure plot series for one tagged run.
inline void write_outputs(const RunResult& result, const MetricsReport& report,
                          const ResolvedExperiment& R, const std::string& tag,
                          const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const int n = R.cfg.n;
  write_trajectory_csv(result.records, n, dir + "/trajectory_" + tag + ".csv");
  {
    std::ofstream js(dir + "/metrics_" + tag + ".json");
    if (!js) throw std::runtime_error("cannot write metrics for " + tag);
    js << metrics_to_json(report).dump(2) << "\n";
  }
  detail::write_plot_series(result.records, dir + "/plot_err_" + tag + ".csv",
                            [](const TrajectoryRecord& r) { return r.err_norm; });
  detail::write_plot_series(
      result.records, dir + "/plot_depth_" + tag + ".csv",
      [](const TrajectoryRecord& r) { return static_cast<double>(r.depth); });
  detail::write_plot_series(result.records, dir + "/plot_pe_" + tag + ".csv",
                            [](const TrajectoryRecord& r) { return r.pe; });
  const int stride = (n + 7) / 8;
  for (int i = 0; i < n; i += stride) {
    const std::string node = std::to_string(i + 1);
    detail::write_plot_series(
        result.records,
        dir + "/plot_infection_" + tag + "_node" + node + ".csv",
        [i](const TrajectoryRecord& r) { return r.x[i]; });
    detail::write_plot_series(
        result.records, dir + "/plot_dhat_" + tag + "_node" + node + ".csv",
        [i](const TrajectoryRecord& r) { return r.d_hat[i]; });
  }
}

/// Inputs shared by every mode: resolved-config echo and the true-rate plots.
inline void write_common_outputs(const ResolvedExperiment& R,
                                 const std::vector<TrajectoryRecord>& records,
                                 const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_config_echo(R, dir + "/config_resolved.txt");
  const int n = R.cfg.n;
  const int stride = (n + 7) / 8;
  for (int i = 0; i < n; i += stride) {
    detail::write_plot_series(
        records, dir + "/plot_rates_node" + std::to_string(i + 1) + ".csv",
        [i](const TrajectoryRecord& r) { return r.d[i]; });
  }
}

// ---------------------------------------------------------------------------
// Entry points shared by the CLI and the test suite
// ---------------------------------------------------------------------------

inline const char* mode_tag(ObserverMode m) {
  return m == ObserverMode::cl ? "cl" : "conventional";
}

/// Run the configured mode(s), write all outputs, and return the process exit
/// status: 0 on success, 2 if any run was divergence-tagged. Configuration
/// problems throw (the CLI maps them to exit 1).
inline int execute_run(const ExperimentConfig& cfg, std::ostream& log) {
  ResolvedExperiment R = resolve_experiment(cfg);
  const std::string dir = R.cfg.output_dir;
  std::vector<ObserverMode> modes;
  if (R.cfg.mode == RunMode::cl || R.cfg.mode == RunMode::both) {
    modes.push_back(ObserverMode::cl);
  }
  if (R.cfg.mode == RunMode::conventional || R.cfg.mode == RunMode::both) {
    modes.push_back(ObserverMode::conventional);
  }
  bool any_diverged = false;
  bool wrote_common = false;
  for (ObserverMode m : modes) {
    RunResult res = run_one(R, m);
    MetricsReport rep = summarize(res.records);
    rep.diverged = res.diverged;
    rep.diverged_step = res.diverged_step;
    if (!wrote_common) {
      write_common_outputs(R, res.records, dir);
      wrote_common = true;
    }
    write_outputs(res, rep, R, mode_tag(m), dir);
    any_diverged = any_diverged || res.diverged;
    log << mode_tag(m) << ": steps=" << rep.steps
        << " rmse_total=" << rep.rmse_total
        << " rmse_singular=" << rep.rmse_singular
        << " max_depth=" << rep.max_depth
        << (res.diverged ? " DIVERGED" : "") << "\n";
  }
  return any_diverged ? 2 : 0;
}

/// Force mode=both, run both observers on the shared scenario, and emit a
/// joint comparison report alongside the per-mode outputs.
inline int execute_compare(const ExperimentConfig& cfg, std::ostream& log) {
  ExperimentConfig c = cfg;
  c.mode = RunMode::both;
  ResolvedExperiment R = resolve_experiment(c);
  const std::string dir = R.cfg.output_dir;

  RunResult cl = run_one(R, ObserverMode::cl);
  RunResult conv = run_one(R, ObserverMode::conventional);
  MetricsReport rep_cl = summarize(cl.records);
  rep_cl.diverged = cl.diverged;
  rep_cl.diverged_step = cl.diverged_step;
  MetricsReport rep_conv = summarize(conv.records);
  rep_conv.diverged = conv.diverged;
  rep_conv.diverged_step = conv.diverged_step;

  write_common_outputs(R, cl.records, dir);
  write_outputs(cl, rep_cl, R, "cl", dir);
  write_outputs(conv, rep_conv, R, "conventional", dir);

  nlohmann::json joint{
      {"cl", metrics_to_json(rep_cl)},
      {"conventional", metrics_to_json(rep_conv)},
      {"singular_count", rep_cl.singular_count},
      {"rmse_singular_ratio",
       rep_conv.rmse_singular > 0.0
           ? rep_cl.rmse_singular / rep_conv.rmse_singular
           : 0.0},
      {"rmse_total_ratio", rep_conv.rmse_total > 0.0
                               ? rep_cl.rmse_total / rep_conv.rmse_total
                               : 0.0}};
  {
    std::ofstream js(dir + "/metrics_compare.json");
    if (!js) throw std::runtime_error("cannot write comparison report");
    js << joint.dump(2) << "\n";
  }
  log << "cl:           rmse_singular=" << rep_cl.rmse_singular
      << " rmse_total=" << rep_cl.rmse_total
      << " max_depth=" << rep_cl.max_depth << "\n";
  log << "conventional: rmse_singular=" << rep_conv.rmse_singular
      << " rmse_total=" << rep_conv.rmse_total
      << " max_depth=" << rep_conv.max_depth << "\n";
  log << "singular steps: " << rep_cl.singular_count << "  rmse ratio: "
      << joint["rmse_singular_ratio"].get<double>() << "\n";
  return (cl.diverged || conv.diverged) ? 2 : 0;
}

/// Resolve the config, evaluate stack-bound feasibility, and print the bound
/// diagonals without simulating.
inline int execute_check(const ExperimentConfig& cfg, std::ostream& log) {
  ResolvedExperiment R = resolve_experiment(cfg);
  const ExperimentConfig& c = R.cfg;
  log << "n = " << c.n << ", h = " << c.h << ", T = " << c.T
      << ", steps = " << R.K << "\n";
  log << "kappa = " << c.kappa << ", omega = " << c.omega
      << ", h*omega = " << c.h * c.omega << " (feasible, needs <= 0.25)\n";
  log << "stack max_age = " << R.max_age << " steps\n";
  log << "S_L diagonal = " << detail::fmt_vector(R.S_L.mat().diagonal())
      << "\n";
  log << "S_U diagonal = " << detail::fmt_vector(R.S_U.mat().diagonal())
      << "\n";
  return 0;
}

}  // namespace cldob
