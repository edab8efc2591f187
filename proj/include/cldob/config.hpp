#pragma once

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cldob/observer.hpp"

namespace cldob {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class RunMode { cl, conventional, both };
enum class ControlMode { off, compensate };
enum class ObserverTime { discrete, continuous };

/// Flat experiment description as read from a key = value config file.
/// Per-node quantities accept either a single value (broadcast) or a comma
/// list of exactly n entries.
struct ExperimentConfig {
  int n = 10;
  double h = 1e-3;
  double T = 5.0;
  double kappa = 100.0;
  double omega = 5.0;
  unsigned long long seed = 1;
  RunMode mode = RunMode::both;
  ControlMode control = ControlMode::off;
  ObserverTime observer_time = ObserverTime::discrete;
  std::string output_dir = "out";

  double lambda_uniform = -5.0;
  std::vector<double> lambda_values;  // overrides lambda_uniform when set

  std::string graph_file;  // adjacency CSV; empty selects the generator
  double graph_density = 0.5;
  double weight_lo = 0.7;
  double weight_hi = 1.3;

  std::vector<double> dist_amplitude{0.25};
  std::vector<double> dist_offset{0.3};
  std::vector<double> dist_frequency;  // default: spread over [freq_lo, freq_hi]
  std::vector<double> dist_phase;      // default: common trough at 0.6 T
  double freq_lo = 0.1;
  double freq_hi = 0.5;

  std::vector<double> delta_baseline{1.0};
  double control_epsilon = 1e-3;
  double control_delta_max = 0.0;  // 0 selects 10 * max baseline
  long max_age = 0;                // 0 selects 5 / (h min|lambda|) steps
  double pe_window = 1.0;
  Integrator integrator = Integrator::euler;

  long steps() const {
    const double ratio = T / h;
    const long k = std::lround(ratio);
    if (k < 1 || std::abs(ratio - static_cast<double>(k)) > 1e-9 * ratio) {
      throw ConfigError("T/h must be an integer step count");
    }
    return k;
  }

  void validate() const {
    if (n < 2) throw ConfigError("n must be >= 2");
    if (!(h > 0.0)) throw ConfigError("h must be > 0");
    if (!(T > 0.0)) throw ConfigError("T must be > 0");
    if (!(kappa > 0.0)) throw ConfigError("kappa must be > 0");
    if (!(omega > 0.0)) throw ConfigError("omega must be > 0");
    if (observer_time == ObserverTime::discrete && h * omega > 0.25) {
      throw ConfigError("h*omega must be <= 1/4 for the discrete observer");
    }
    steps();
    if (graph_file.empty()) {
      if (!(graph_density > 0.0 && graph_density <= 1.0)) {
        throw ConfigError("graph.density must be in (0, 1]");
      }
      if (!(weight_lo > 0.0 && weight_hi >= weight_lo)) {
        throw ConfigError("graph weight range must satisfy 0 < lo <= hi");
      }
    }
    if (!(freq_lo > 0.0 && freq_hi >= freq_lo)) {
      throw ConfigError("disturbance frequency range must satisfy 0 < lo <= hi");
    }
    if (!(control_epsilon > 0.0)) throw ConfigError("control.epsilon must be > 0");
    if (max_age < 0) throw ConfigError("stack.max_age must be >= 0");
    if (!(pe_window > 0.0)) throw ConfigError("pe.window must be > 0");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = 0;
  size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline double parse_double(const std::string& raw, const std::string& key) {
  const std::string v = trim(raw);
  if (v.empty()) throw ConfigError("empty value for " + key);
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || !std::isfinite(x)) {
    throw ConfigError("bad numeric value for " + key + ": '" + raw + "'");
  }
  return x;
}

inline long parse_long(const std::string& raw, const std::string& key) {
  const double x = parse_double(raw, key);
  const long k = std::lround(x);
  if (std::abs(x - static_cast<double>(k)) > 1e-12) {
    throw ConfigError("expected integer for " + key + ": '" + raw + "'");
  }
  return k;
}

inline std::vector<double> parse_list(const std::string& raw,
                                      const std::string& key) {
  std::vector<double> out;
  size_t start = 0;
  while (start <= raw.size()) {
    const size_t comma = raw.find(',', start);
    const std::string piece =
        raw.substr(start, comma == std::string::npos ? std::string::npos
                                                     : comma - start);
    out.push_back(parse_double(piece, key));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

}  // namespace detail

/// Apply one key/value setting. Unknown keys are errors.
inline void apply_setting(ExperimentConfig& cfg, const std::string& key,
                          const std::string& value) {
  using detail::parse_double;
  using detail::parse_list;
  using detail::parse_long;
  if (key == "n") {
    cfg.n = static_cast<int>(parse_long(value, key));
  } else if (key == "h") {
    cfg.h = parse_double(value, key);
  } else if (key == "T") {
    cfg.T = parse_double(value, key);
  } else if (key == "kappa") {
    cfg.kappa = parse_double(value, key);
  } else if (key == "omega") {
    cfg.omega = parse_double(value, key);
  } else if (key == "seed") {
    const long s = parse_long(value, key);
    if (s < 0) throw ConfigError("seed must be >= 0");
    cfg.seed = static_cast<unsigned long long>(s);
  } else if (key == "mode") {
    const std::string v = detail::trim(value);
    if (v == "cl") cfg.mode = RunMode::cl;
    else if (v == "conventional") cfg.mode = RunMode::conventional;
    else if (v == "both") cfg.mode = RunMode::both;
    else throw ConfigError("mode must be cl|conventional|both");
  } else if (key == "control") {
    const std::string v = detail::trim(value);
    if (v == "off") cfg.control = ControlMode::off;
    else if (v == "compensate") cfg.control = ControlMode::compensate;
    else throw ConfigError("control must be off|compensate");
  } else if (key == "observer_time") {
    const std::string v = detail::trim(value);
    if (v == "discrete") cfg.observer_time = ObserverTime::discrete;
    else if (v == "continuous") cfg.observer_time = ObserverTime::continuous;
    else throw ConfigError("observer_time must be discrete|continuous");
  } else if (key == "output_dir") {
    cfg.output_dir = detail::trim(value);
  } else if (key == "lambda.uniform") {
    cfg.lambda_uniform = parse_double(value, key);
  } else if (key == "lambda.values") {
    cfg.lambda_values = parse_list(value, key);
  } else if (key == "graph.file") {
    cfg.graph_file = detail::trim(value);
  } else if (key == "graph.density") {
    cfg.graph_density = parse_double(value, key);
  } else if (key == "graph.weight_lo") {
    cfg.weight_lo = parse_double(value, key);
  } else if (key == "graph.weight_hi") {
    cfg.weight_hi = parse_double(value, key);
  } else if (key == "disturbance.amplitude") {
    cfg.dist_amplitude = parse_list(value, key);
  } else if (key == "disturbance.offset") {
    cfg.dist_offset = parse_list(value, key);
  } else if (key == "disturbance.frequency") {
    cfg.dist_frequency = parse_list(value, key);
  } else if (key == "disturbance.phase") {
    cfg.dist_phase = parse_list(value, key);
  } else if (key == "disturbance.freq_lo") {
    cfg.freq_lo = parse_double(value, key);
  } else if (key == "disturbance.freq_hi") {
    cfg.freq_hi = parse_double(value, key);
  } else if (key == "delta_baseline") {
    cfg.delta_baseline = parse_list(value, key);
  } else if (key == "control.epsilon") {
    cfg.control_epsilon = parse_double(value, key);
  } else if (key == "control.delta_max") {
    cfg.control_delta_max = parse_double(value, key);
  } else if (key == "stack.max_age") {
    cfg.max_age = parse_long(value, key);
  } else if (key == "pe.window") {
    cfg.pe_window = parse_double(value, key);
  } else if (key == "observer.integrator") {
    const std::string v = detail::trim(value);
    if (v == "euler") cfg.integrator = Integrator::euler;
    else if (v == "rk4") cfg.integrator = Integrator::rk4;
    else throw ConfigError("observer.integrator must be euler|rk4");
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

/// Parse a config file of '#'-commented key = value lines.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  ExperimentConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const size_t eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key = value");
    }
    const std::string key = detail::trim(body.substr(0, eq));
    const std::string value = detail::trim(body.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    }
    try {
      apply_setting(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  // A relative graph.file names a sibling of the config file, not of the
  // process working directory, so configs stay relocatable as a bundle.
  if (!cfg.graph_file.empty()) {
    const std::filesystem::path gp(cfg.graph_file);
    if (gp.is_relative()) {
      cfg.graph_file =
          (std::filesystem::path(path).parent_path() / gp).string();
    }
  }
  return cfg;
}

}  // namespace cldob
