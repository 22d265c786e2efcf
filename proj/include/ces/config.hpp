#pragma once

// Pipeline configuration: one versioned JSON document, validated strictly
// (unknown keys rejected, every error names the offending field).

#include "ces/calibration.hpp"
#include "ces/dynamics.hpp"
#include "ces/emulator.hpp"
#include "ces/misfit.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace ces {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Keys accepted in each block; "problem.<kind>" lists the keys of one problem kind.
inline const std::map<std::string, std::vector<std::string>>& config_keys() {
  static const std::map<std::string, std::vector<std::string>> keys{
      {"", {"schema_version", "seed", "output_dir", "workers", "problem", "prior", "calibration", "emulation",
            "sampling", "darcy_uq"}},
      {"problem.linear", {"kind", "data_seed", "output_dim", "row_correlation", "truth", "noise_std"}},
      {"problem.darcy",
       {"kind", "data_seed", "grid", "modes", "truth_modes", "observations", "noise_std", "tau", "alpha",
        "cg_tolerance"}},
      {"problem.lorenz63", {"kind", "data_seed", "sigma", "truth", "step", "spinup", "window", "horizon"}},
      {"problem.lorenz96",
       {"kind", "data_seed", "slow", "fast", "truth", "step", "spinup", "window", "horizon"}},
      {"prior", {"mean", "variances", "covariance"}},
      {"calibration", {"variant", "ensemble_size", "iterations", "dt0", "snapshot_stride", "max_retries"}},
      {"emulation", {"transform", "kernel", "mean", "design", "restarts", "max_iterations", "lengthscale_priors"}},
      {"sampling", {"misfit", "samples", "scale", "chains", "burn_in"}},
      {"darcy_uq", {"samples", "bins"}},
  };
  return keys;
}

struct LinearProblemConfig {
  Index output_dim = 10;
  double row_correlation = -0.9;
  Vector truth = (Vector(2) << -1.0, 2.0).finished();
  double noise_std = 0.1;
};

struct DarcyProblemConfig {
  int grid = 64;
  Index modes = 10;
  Index truth_modes = 256;
  int observations = 50;
  double noise_std = 0.005;
  double tau = 3.0;
  double alpha = 2.0;
  double cg_tolerance = 1e-10;
};

/// Truth given in natural parameters (r, b); θ = (log r, log b).
struct Lorenz63ProblemConfig {
  double sigma = 10.0;
  Vector truth = (Vector(2) << 28.0, 8.0 / 3.0).finished();
  TimeAverageSettings averaging{0.01, 30.0, 10.0};
  double horizon = 360.0;
};

/// Truth given in natural parameters (h, F, c, b); θ = (h, F, log c, b).
struct Lorenz96ProblemConfig {
  int slow = 36;
  int fast = 10;
  Vector truth = (Vector(4) << 1.0, 10.0, 10.0, 10.0).finished();
  TimeAverageSettings averaging{0.005, 10.0, 100.0};
  double horizon = 4e4;
};

using ProblemVariant = std::variant<LinearProblemConfig, DarcyProblemConfig, Lorenz63ProblemConfig, Lorenz96ProblemConfig>;

struct ProblemConfig {
  std::string kind;
  std::uint64_t data_seed = 0;
  ProblemVariant spec;
};

struct PriorConfig {
  Vector mean;
  Matrix covariance;
};

struct CalibrationConfig {
  CalibrationVariant variant = CalibrationVariant::eks;
  Index ensemble_size = 16;
  int iterations = 20;
  double dt0 = 1.0;
  int snapshot_stride = 0;
  int max_retries = 3;
};

enum class DesignRule { final_snapshot, all_snapshots };

struct EmulationConfig {
  TransformKind transform = TransformKind::identity;
  KernelFamily kernel = KernelFamily::squared_exponential;
  MeanFamily mean = MeanFamily::zero;
  DesignRule design = DesignRule::final_snapshot;
  int restarts = 8;
  int max_iterations = 200;
  bool lengthscale_priors = true;
};

struct SamplingConfig {
  MisfitKind misfit = MisfitKind::phi_m;
  Index samples = 20000;
  double scale = 1.0;
  int chains = 1;
  Index burn_in = 0;
};

struct DarcyUqConfig {
  int samples = 250;
  int bins = 40;
};

struct PipelineConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 0;
  std::string output_dir = "ces-run";
  unsigned workers = 1;
  ProblemConfig problem;
  PriorConfig prior;
  CalibrationConfig calibration;
  EmulationConfig emulation;
  SamplingConfig sampling;
  DarcyUqConfig darcy_uq;
  json source;  // validated input document
};

namespace detail {

inline std::string field(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline void check_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError((path.empty() ? std::string("config") : path) + ": expected an object");
}

inline void reject_unknown(const json& j, const std::string& path, const std::vector<std::string>& allowed) {
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const auto& a : allowed) ok = ok || a == k;
    if (!ok) throw ConfigError(field(path, k) + ": unknown key");
  }
}

inline double get_number(const json& j, const std::string& path, const std::string& key, double fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(field(path, key) + ": expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigError(field(path, key) + ": must be finite");
  return d;
}

inline double get_positive(const json& j, const std::string& path, const std::string& key, double fallback) {
  const double d = get_number(j, path, key, fallback);
  if (!(d > 0)) throw ConfigError(field(path, key) + ": must be positive");
  return d;
}

inline std::int64_t get_integer(const json& j, const std::string& path, const std::string& key, std::int64_t fallback,
                                std::int64_t min_value) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer()) throw ConfigError(field(path, key) + ": expected an integer");
  const auto i = v.get<std::int64_t>();
  if (i < min_value) throw ConfigError(field(path, key) + ": must be at least " + std::to_string(min_value));
  return i;
}

inline std::uint64_t get_seed(const json& j, const std::string& path, const std::string& key, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ConfigError(field(path, key) + ": expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline bool get_bool(const json& j, const std::string& path, const std::string& key, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean()) throw ConfigError(field(path, key) + ": expected true or false");
  return j.at(key).get<bool>();
}

inline std::string get_string(const json& j, const std::string& path, const std::string& key,
                              const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ConfigError(field(path, key) + ": expected a string");
  return j.at(key).get<std::string>();
}

template <class E>
E get_enum(const json& j, const std::string& path, const std::string& key, E fallback,
           const std::vector<std::pair<std::string, E>>& names) {
  if (!j.contains(key)) return fallback;
  const std::string s = get_string(j, path, key, "");
  std::string options;
  for (const auto& [name, value] : names) {
    if (name == s) return value;
    options += (options.empty() ? "" : ", ") + name;
  }
  throw ConfigError(field(path, key) + ": '" + s + "' is not one of " + options);
}

inline Vector get_vector(const json& j, const std::string& path, const std::string& key, const Vector& fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_array() || v.empty()) throw ConfigError(field(path, key) + ": expected a non-empty array of numbers");
  Vector out(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ConfigError(field(path, key) + "[" + std::to_string(i) + "]: expected a number");
    out(static_cast<Index>(i)) = v[i].get<double>();
  }
  return out;
}

inline Matrix get_matrix(const json& j, const std::string& path, const std::string& key) {
  const auto& v = j.at(key);
  const std::string f = field(path, key);
  if (!v.is_array() || v.empty() || !v[0].is_array()) throw ConfigError(f + ": expected an array of rows");
  Matrix out(static_cast<Index>(v.size()), static_cast<Index>(v[0].size()));
  for (std::size_t r = 0; r < v.size(); ++r) {
    if (!v[r].is_array() || v[r].size() != v[0].size()) throw ConfigError(f + ": rows must have equal length");
    for (std::size_t c = 0; c < v[r].size(); ++c) {
      if (!v[r][c].is_number())
        throw ConfigError(f + "[" + std::to_string(r) + "][" + std::to_string(c) + "]: expected a number");
      out(static_cast<Index>(r), static_cast<Index>(c)) = v[r][c].get<double>();
    }
  }
  return out;
}

inline TimeAverageSettings get_averaging(const json& j, const std::string& path, TimeAverageSettings s) {
  s.step = get_positive(j, path, "step", s.step);
  s.spinup = get_number(j, path, "spinup", s.spinup);
  if (s.spinup < 0) throw ConfigError(field(path, "spinup") + ": must be non-negative");
  s.window = get_positive(j, path, "window", s.window);
  if (s.window < s.step) throw ConfigError(field(path, "window") + ": must be at least one integrator step");
  return s;
}

inline Vector get_truth(const json& j, const std::string& path, const Vector& fallback, Index size) {
  Vector t = get_vector(j, path, "truth", fallback);
  if (t.size() != size) throw ConfigError(field(path, "truth") + ": expected " + std::to_string(size) + " values");
  return t;
}

inline ProblemConfig parse_problem(const json& j) {
  const std::string path = "problem";
  check_object(j, path);
  ProblemConfig pc;
  if (!j.contains("kind")) throw ConfigError("problem.kind: required");
  pc.kind = get_string(j, path, "kind", "");
  const auto keys = config_keys().find("problem." + pc.kind);
  if (keys == config_keys().end())
    throw ConfigError("problem.kind: '" + pc.kind + "' is not one of linear, darcy, lorenz63, lorenz96");
  reject_unknown(j, path, keys->second);
  pc.data_seed = get_seed(j, path, "data_seed", 0);
  if (pc.kind == "linear") {
    LinearProblemConfig c;
    c.output_dim = get_integer(j, path, "output_dim", c.output_dim, 1);
    c.row_correlation = get_number(j, path, "row_correlation", c.row_correlation);
    if (!(std::abs(c.row_correlation) < 1)) throw ConfigError("problem.row_correlation: must lie in (-1, 1)");
    c.truth = get_truth(j, path, c.truth, 2);
    c.noise_std = get_positive(j, path, "noise_std", c.noise_std);
    pc.spec = c;
  } else if (pc.kind == "darcy") {
    DarcyProblemConfig c;
    c.grid = static_cast<int>(get_integer(j, path, "grid", c.grid, 4));
    c.modes = get_integer(j, path, "modes", c.modes, 1);
    c.truth_modes = get_integer(j, path, "truth_modes", c.truth_modes, 1);
    if (c.truth_modes < c.modes) throw ConfigError("problem.truth_modes: must be at least problem.modes");
    c.observations = static_cast<int>(get_integer(j, path, "observations", c.observations, 1));
    c.noise_std = get_positive(j, path, "noise_std", c.noise_std);
    c.tau = get_positive(j, path, "tau", c.tau);
    c.alpha = get_positive(j, path, "alpha", c.alpha);
    c.cg_tolerance = get_positive(j, path, "cg_tolerance", c.cg_tolerance);
    pc.spec = c;
  } else if (pc.kind == "lorenz63") {
    Lorenz63ProblemConfig c;
    c.sigma = get_positive(j, path, "sigma", c.sigma);
    c.truth = get_truth(j, path, c.truth, 2);
    if ((c.truth.array() <= 0).any()) throw ConfigError("problem.truth: r and b must be positive");
    c.averaging = get_averaging(j, path, c.averaging);
    c.horizon = get_positive(j, path, "horizon", c.horizon);
    pc.spec = c;
  } else {
    Lorenz96ProblemConfig c;
    c.slow = static_cast<int>(get_integer(j, path, "slow", c.slow, 4));
    c.fast = static_cast<int>(get_integer(j, path, "fast", c.fast, 1));
    if (c.slow * c.fast < 4) throw ConfigError("problem.fast: the fast ring needs at least 4 variables");
    c.truth = get_truth(j, path, c.truth, 4);
    if (!(c.truth(2) > 0)) throw ConfigError("problem.truth: c must be positive");
    c.averaging = get_averaging(j, path, c.averaging);
    c.horizon = get_positive(j, path, "horizon", c.horizon);
    pc.spec = c;
  }
  return pc;
}

inline PriorConfig parse_prior(const json& j) {
  const std::string path = "prior";
  check_object(j, path);
  reject_unknown(j, path, config_keys().at(path));
  if (!j.contains("mean")) throw ConfigError("prior.mean: required");
  PriorConfig p;
  p.mean = get_vector(j, path, "mean", {});
  const bool has_var = j.contains("variances"), has_cov = j.contains("covariance");
  if (has_var == has_cov) throw ConfigError("prior: exactly one of prior.variances and prior.covariance is required");
  if (has_var) {
    const Vector v = get_vector(j, path, "variances", {});
    if (v.size() != p.mean.size()) throw ConfigError("prior.variances: length must equal prior.mean");
    if ((v.array() <= 0).any()) throw ConfigError("prior.variances: entries must be positive");
    p.covariance = v.asDiagonal();
  } else {
    p.covariance = get_matrix(j, path, "covariance");
    if (p.covariance.rows() != p.mean.size() || p.covariance.cols() != p.mean.size())
      throw ConfigError("prior.covariance: must be square with the length of prior.mean");
  }
  return p;
}

inline CalibrationConfig parse_calibration(const json& j) {
  const std::string path = "calibration";
  check_object(j, path);
  reject_unknown(j, path, config_keys().at(path));
  CalibrationConfig c;
  c.variant = get_enum<CalibrationVariant>(j, path, "variant", c.variant,
                                           {{"eks", CalibrationVariant::eks}, {"eki", CalibrationVariant::eki}});
  c.ensemble_size = get_integer(j, path, "ensemble_size", c.ensemble_size, 2);
  c.iterations = static_cast<int>(get_integer(j, path, "iterations", c.iterations, 0));
  c.dt0 = get_positive(j, path, "dt0", c.dt0);
  c.snapshot_stride = static_cast<int>(get_integer(j, path, "snapshot_stride", c.snapshot_stride, 0));
  c.max_retries = static_cast<int>(get_integer(j, path, "max_retries", c.max_retries, 0));
  return c;
}

inline EmulationConfig parse_emulation(const json& j) {
  const std::string path = "emulation";
  check_object(j, path);
  reject_unknown(j, path, config_keys().at(path));
  EmulationConfig e;
  e.transform = get_enum<TransformKind>(j, path, "transform", e.transform,
                                        {{"identity", TransformKind::identity},
                                         {"time-diag", TransformKind::time_diag},
                                         {"svd", TransformKind::svd}});
  e.kernel = get_enum<KernelFamily>(j, path, "kernel", e.kernel,
                                    {{"squared-exponential", KernelFamily::squared_exponential},
                                     {"matern52", KernelFamily::matern52}});
  e.mean = get_enum<MeanFamily>(j, path, "mean", e.mean, {{"zero", MeanFamily::zero}, {"linear", MeanFamily::linear}});
  e.design = get_enum<DesignRule>(j, path, "design", e.design,
                                  {{"final", DesignRule::final_snapshot}, {"all", DesignRule::all_snapshots}});
  e.restarts = static_cast<int>(get_integer(j, path, "restarts", e.restarts, 1));
  e.max_iterations = static_cast<int>(get_integer(j, path, "max_iterations", e.max_iterations, 1));
  e.lengthscale_priors = get_bool(j, path, "lengthscale_priors", e.lengthscale_priors);
  return e;
}

inline SamplingConfig parse_sampling(const json& j) {
  const std::string path = "sampling";
  check_object(j, path);
  reject_unknown(j, path, config_keys().at(path));
  SamplingConfig s;
  s.misfit = get_enum<MisfitKind>(j, path, "misfit", s.misfit,
                                  {{"phi_m", MisfitKind::phi_m},
                                   {"phi_gp", MisfitKind::phi_gp},
                                   {"phi_gp_combined", MisfitKind::phi_gp_combined},
                                   {"phi_T_direct", MisfitKind::phi_T_direct}});
  s.samples = get_integer(j, path, "samples", s.samples, 1);
  s.scale = get_positive(j, path, "scale", s.scale);
  s.chains = static_cast<int>(get_integer(j, path, "chains", s.chains, 1));
  s.burn_in = get_integer(j, path, "burn_in", s.burn_in, 0);
  if (s.burn_in >= s.samples) throw ConfigError("sampling.burn_in: must be smaller than sampling.samples");
  return s;
}

inline DarcyUqConfig parse_darcy_uq(const json& j) {
  const std::string path = "darcy_uq";
  check_object(j, path);
  reject_unknown(j, path, config_keys().at(path));
  DarcyUqConfig d;
  d.samples = static_cast<int>(get_integer(j, path, "samples", d.samples, 1));
  d.bins = static_cast<int>(get_integer(j, path, "bins", d.bins, 1));
  return d;
}

}  // namespace detail

/// Validates and converts a configuration document.
inline PipelineConfig parse_config(const json& j) {
  using namespace detail;
  check_object(j, "");
  reject_unknown(j, "", config_keys().at(""));
  PipelineConfig c;
  if (!j.contains("schema_version")) throw ConfigError("schema_version: required");
  c.schema_version = static_cast<int>(get_integer(j, "", "schema_version", 0, 0));
  if (c.schema_version != kSchemaVersion)
    throw ConfigError("schema_version: unsupported version " + std::to_string(c.schema_version) + " (expected " +
                      std::to_string(kSchemaVersion) + ")");
  c.seed = get_seed(j, "", "seed", 0);
  c.output_dir = get_string(j, "", "output_dir", c.output_dir);
  if (c.output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  c.workers = static_cast<unsigned>(get_integer(j, "", "workers", 1, 1));
  for (const char* block : {"problem", "prior"})
    if (!j.contains(block)) throw ConfigError(std::string(block) + ": required");
  c.problem = parse_problem(j.at("problem"));
  c.prior = parse_prior(j.at("prior"));
  c.calibration = parse_calibration(j.value("calibration", json::object()));
  c.emulation = parse_emulation(j.value("emulation", json::object()));
  c.sampling = parse_sampling(j.value("sampling", json::object()));
  c.darcy_uq = parse_darcy_uq(j.value("darcy_uq", json::object()));

  const Index p = std::visit(
      [](const auto& s) -> Index {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, DarcyProblemConfig>) return s.modes;
        else if constexpr (std::is_same_v<S, Lorenz96ProblemConfig>) return 4;
        else return 2;
      },
      c.problem.spec);
  if (c.prior.mean.size() != p)
    throw ConfigError("prior.mean: problem '" + c.problem.kind + "' has " + std::to_string(p) + " parameters, got " +
                      std::to_string(c.prior.mean.size()));
  c.source = j;
  return c;
}

inline PipelineConfig parse_config_text(const std::string& text, const std::string& origin = "config") {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": invalid JSON: " + e.what());
  }
  return parse_config(j);
}

}  // namespace ces
