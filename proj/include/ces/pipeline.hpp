#pragma once

// Stage orchestration for calibrate → emulate → sample and the Darcy forward
// UQ analysis. Every stage reads and writes artifacts under the output
// directory and records itself in manifest.json.

#include "ces/diagnostics.hpp"
#include "ces/gamma_prior.hpp"
#include "ces/serialize.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

namespace ces {

/// Command-line overrides applied on top of the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<std::string> output_dir;
  std::optional<Index> burn_in;
};

inline PipelineConfig apply_overrides(PipelineConfig cfg, const Overrides& o) {
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.source["seed"] = *o.seed;
  }
  if (o.workers) {
    if (*o.workers < 1) throw ConfigError("--workers: must be at least 1");
    cfg.workers = *o.workers;
    cfg.source["workers"] = *o.workers;
  }
  if (o.output_dir) {
    if (o.output_dir->empty()) throw ConfigError("--out: must not be empty");
    cfg.output_dir = *o.output_dir;
    cfg.source["output_dir"] = *o.output_dir;
  }
  if (o.burn_in) {
    if (*o.burn_in < 0 || *o.burn_in >= cfg.sampling.samples)
      throw ConfigError("--burn-in: must be in [0, sampling.samples)");
    cfg.sampling.burn_in = *o.burn_in;
    cfg.source["sampling"]["burn_in"] = *o.burn_in;
  }
  return cfg;
}

inline std::string config_hash(const PipelineConfig& cfg) { return sha256_hex(cfg.source.dump()); }

/// manifest.json: config hash, seeds, per-stage status and timings, and the
/// checksum of every file a stage wrote.
class Manifest {
 public:
  explicit Manifest(const PipelineConfig& cfg) : dir_(cfg.output_dir) {
    const fs::path path = dir_ / "manifest.json";
    if (fs::exists(path)) {
      try {
        doc_ = json::parse(read_file(path));
      } catch (const json::exception&) {
        log().warn("replacing unreadable manifest {}", path.string());
        doc_ = json::object();
      }
    }
    if (!doc_.is_object()) doc_ = json::object();
    doc_["library"] = {{"name", "ces"}, {"version", kVersion}};
    doc_["config_hash"] = config_hash(cfg);
    doc_["config"] = cfg.source;
    doc_["seed"] = cfg.seed;
    if (!doc_.contains("stages")) doc_["stages"] = json::object();
  }

  const fs::path& dir() const { return dir_; }

  void begin(const std::string& stage) {
    doc_["stages"][stage] = {{"status", "running"}, {"config_hash", doc_["config_hash"]}};
    start_ = std::chrono::steady_clock::now();
    write();
  }

  void finish(const std::string& stage, const std::vector<std::string>& files, json extra = json::object()) {
    auto& s = doc_["stages"][stage];
    s["status"] = "ok";
    s["seconds"] = elapsed();
    json inventory = json::object();
    for (const auto& f : files) inventory[f] = sha256_file(dir_ / f);
    s["files"] = std::move(inventory);
    for (auto& [k, v] : extra.items()) s[k] = v;
    write();
  }

  void fail(const std::string& stage, const std::string& error) {
    auto& s = doc_["stages"][stage];
    s["status"] = "failed";
    s["seconds"] = elapsed();
    s["error"] = error;
    write();
  }

  const json& document() const { return doc_; }

 private:
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }
  void write() const { write_json(dir_ / "manifest.json", doc_); }

  fs::path dir_;
  json doc_ = json::object();
  std::chrono::steady_clock::time_point start_{};
};

/// Runs body under the manifest, marking the stage failed if it throws.
template <class Body>
auto run_stage(Manifest& m, const std::string& stage, Body&& body) {
  m.begin(stage);
  try {
    return body();
  } catch (const std::exception& e) {
    m.fail(stage, e.what());
    throw;
  }
}

inline std::string format_vector(const Vector& v) {
  std::string s = "[";
  for (Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt::format("{:.6g}", v(i));
  return s + "]";
}

// --- calibrate ------------------------------------------------------------------

struct CalibrateOutput {
  ProblemSetup setup;
  CalibrationResult result;
};

inline CalibrationSettings calibration_settings(const PipelineConfig& cfg) {
  CalibrationSettings s;
  s.variant = cfg.calibration.variant;
  s.ensemble_size = cfg.calibration.ensemble_size;
  s.iterations = cfg.calibration.iterations;
  s.snapshot_stride = cfg.calibration.snapshot_stride;
  s.timestep.dt0 = cfg.calibration.dt0;
  s.max_retries = cfg.calibration.max_retries;
  s.workers = cfg.workers;
  return s;
}

inline CalibrateOutput cmd_calibrate(const PipelineConfig& cfg, std::ostream& out) {
  Manifest manifest(cfg);
  return run_stage(manifest, "calibrate", [&] {
    CalibrateOutput o{make_problem_setup(cfg), {}};
    o.result = run_calibration(o.setup.problem, o.setup.prior, calibration_settings(cfg), cfg.seed);
    const fs::path dir = manifest.dir() / "calibrate";
    write_snapshots(dir / "snapshots.csv", o.result.snapshots, o.setup.names);
    write_json(dir / "data.json", data_to_json(o.setup));
    const Ensemble& last = o.result.final_ensemble();
    const Vector mean = last.particles.rowwise().mean();
    const Matrix cov = ensemble_cov(last);
    json summary{{"iterations_run", o.result.iterations_run},
                 {"ensemble_size", last.size()},
                 {"snapshot_iterations", json::array()},
                 {"timesteps", o.result.timesteps},
                 {"failed_evaluations", o.result.failed_evaluations},
                 {"final_mean", to_json(mean)},
                 {"final_covariance", to_json(cov)}};
    for (const auto& e : o.result.snapshots) summary["snapshot_iterations"].push_back(e.iteration);
    write_json(dir / "summary.json", summary);
    manifest.finish("calibrate", {"calibrate/snapshots.csv", "calibrate/data.json", "calibrate/summary.json"},
                    {{"seed", cfg.seed}});
    out << "calibrate: " << o.result.iterations_run << " iterations, J = " << last.size() << ", "
        << o.result.snapshots.size() << " snapshots\n";
    out << "  final ensemble mean " << format_vector(mean) << "\n";
    out << "  final ensemble sd   " << format_vector(cov.diagonal().cwiseSqrt()) << "\n";
    return o;
  });
}

// --- emulate --------------------------------------------------------------------

struct Design {
  Matrix inputs;   // M × p
  Matrix outputs;  // M × d
  std::vector<int> provenance;
};

inline Design select_design(const std::vector<Ensemble>& snapshots, DesignRule rule) {
  Design d;
  std::vector<const Ensemble*> used;
  if (rule == DesignRule::final_snapshot) used.push_back(&snapshots.back());
  else
    for (const auto& e : snapshots) used.push_back(&e);
  Index rows = 0;
  for (auto* e : used) rows += e->size();
  d.inputs.resize(rows, used.front()->input_dim());
  d.outputs.resize(rows, used.front()->output_dim());
  Index r = 0;
  for (auto* e : used) {
    d.inputs.middleRows(r, e->size()) = e->particles.transpose();
    d.outputs.middleRows(r, e->size()) = e->outputs.transpose();
    r += e->size();
    d.provenance.push_back(e->iteration);
  }
  return d;
}

inline constexpr std::uint64_t kHoldoutTag = 0x48'4f'4c'44;  // "HOLD"

/// RMSE per output on a 10% held-out split, refactorizing the GPs on the other
/// 90% at the fitted hyperparameters.
inline Vector holdout_rmse(const GpEmulator& em, std::uint64_t seed) {
  const Index m = em.design_size();
  const Index test = std::max<Index>(1, m / 10);
  if (m - test < em.input_dim() + 2) return Vector::Constant(em.output_dim(), std::numeric_limits<double>::quiet_NaN());
  std::vector<Index> order(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng = make_stream(seed, {kHoldoutTag});
  std::shuffle(order.begin(), order.end(), rng);
  Matrix xin(m - test, em.input_dim()), yin(m - test, em.output_dim());
  for (Index i = 0; i < m - test; ++i) {
    xin.row(i) = em.design_inputs().row(order[static_cast<std::size_t>(test + i)]);
    yin.row(i) = em.design_outputs().row(order[static_cast<std::size_t>(test + i)]);
  }
  std::vector<KernelSpec> kernels;
  for (const auto& c : em.components()) kernels.push_back(c.kernel());
  const GpEmulator sub =
      rebuild_emulator(xin, yin, em.transform(), em.components().front().mean_family(), kernels);
  Vector sq = Vector::Zero(em.output_dim());
  for (Index i = 0; i < test; ++i) {
    const Index row = order[static_cast<std::size_t>(i)];
    const Vector err = sub.predict_mean(em.design_inputs().row(row).transpose()) - em.design_outputs().row(row).transpose();
    sq += err.array().square().matrix();
  }
  return (sq / static_cast<double>(test)).cwiseSqrt();
}

inline EmulatorSettings emulator_settings(const PipelineConfig& cfg) {
  EmulatorSettings s;
  s.transform = cfg.emulation.transform;
  s.mean = cfg.emulation.mean;
  s.kernel = cfg.emulation.kernel;
  s.fit.restarts = cfg.emulation.restarts;
  s.fit.max_iterations = cfg.emulation.max_iterations;
  s.fit.seed = cfg.seed;
  s.workers = cfg.workers;
  return s;
}

/// Trains the emulator on the configured design; lengthscale priors are
/// elicited from the final snapshot.
inline GpEmulator train_from_snapshots(const PipelineConfig& cfg, const ProblemSetup& setup,
                                       const std::vector<Ensemble>& snapshots) {
  const Design design = select_design(snapshots, cfg.emulation.design);
  LengthscalePriors priors;
  if (cfg.emulation.lengthscale_priors) priors = elicit_lengthscale_priors(snapshots.back().particles.transpose());
  return train_emulator(design.inputs, design.outputs, emulator_settings(cfg), priors, setup.problem.noise_cov,
                        design.provenance);
}

struct EmulateOutput {
  ProblemSetup setup;
  GpEmulator emulator;
  Vector rmse;
};

inline ProblemSetup load_setup(const PipelineConfig& cfg) {
  return setup_from_json(read_json(fs::path(cfg.output_dir) / "calibrate" / "data.json"), cfg.problem);
}

inline std::vector<Ensemble> load_snapshots(const PipelineConfig& cfg, Index p) {
  return read_snapshots(fs::path(cfg.output_dir) / "calibrate" / "snapshots.csv", p);
}

inline EmulateOutput cmd_emulate(const PipelineConfig& cfg, std::ostream& out) {
  Manifest manifest(cfg);
  return run_stage(manifest, "emulate", [&] {
    EmulateOutput o;
    o.setup = load_setup(cfg);
    const auto snapshots = load_snapshots(cfg, o.setup.model->input_dim());
    o.emulator = train_from_snapshots(cfg, o.setup, snapshots);
    const fs::path dir = manifest.dir() / "emulate";
    save_emulator(dir, o.emulator, o.setup.names);
    o.rmse = holdout_rmse(o.emulator, cfg.seed);
    json summary{{"design_size", o.emulator.design_size()},
                 {"provenance", o.emulator.provenance()},
                 {"holdout_rmse", to_json(o.rmse)}};
    write_json(dir / "summary.json", summary);
    manifest.finish("emulate", {"emulate/emulator.json", "emulate/emulator_design.csv", "emulate/summary.json"});
    out << "emulate: M = " << o.emulator.design_size() << ", " << o.emulator.output_dim() << " outputs ("
        << to_string(o.emulator.transform().kind) << " transform)\n";
    for (std::size_t l = 0; l < o.emulator.components().size(); ++l) {
      const auto& k = o.emulator.components()[l].kernel();
      out << fmt::format("  output {:2d}: sigma2 {:.4g}  lengthscales {}  noise {:.4g}  holdout rmse {:.4g}\n", l + 1,
                         k.amplitude, format_vector(k.lengthscales), k.noise, o.rmse(static_cast<Index>(l)));
    }
    return o;
  });
}

// --- sample ---------------------------------------------------------------------

struct SampleOutput {
  std::vector<Chain> chains;
  std::vector<ChainDiagnostics> diagnostics;
};

inline Misfit make_misfit(const PipelineConfig& cfg, const ProblemSetup& setup,
                          std::shared_ptr<const GpEmulator> emulator) {
  if (cfg.sampling.misfit == MisfitKind::phi_T_direct)
    return Misfit::direct(setup.model, setup.problem.data, setup.problem.noise_cov);
  return Misfit::emulated(cfg.sampling.misfit, std::move(emulator), setup.problem.data, setup.problem.noise_cov);
}

inline json diagnostics_to_json(const ChainDiagnostics& d, const Chain& c, const std::vector<std::string>& names) {
  json j{{"seed", c.seed},
         {"misfit", c.misfit_kind},
         {"samples", d.samples},
         {"burn_in", d.burn_in},
         {"acceptance_rate", d.acceptance_rate},
         {"init", to_json(c.init)},
         {"mean", to_json(d.mean)},
         {"covariance", to_json(d.covariance)},
         {"quantile_levels", std::vector<double>(kForestLevels.begin(), kForestLevels.end())},
         {"quantiles", to_json(d.quantiles)},
         {"parameter_names", names}};
  json iact = json::array();
  for (const auto& e : d.iact) iact.push_back({{"tau", e.tau}, {"window", e.window}, {"capped", e.capped}});
  j["iact"] = std::move(iact);
  return j;
}

/// Forest table: one row per parameter with the five quantiles, median and mean.
inline void write_forest(const fs::path& path, const ChainDiagnostics& d) {
  Matrix t(d.quantiles.rows(), 8);
  for (Index i = 0; i < t.rows(); ++i) {
    t(i, 0) = static_cast<double>(i + 1);
    t.row(i).segment(1, 5) = d.quantiles.row(i);
    t(i, 6) = d.quantiles(i, 2);
    t(i, 7) = d.mean(i);
  }
  write_csv(path, {"parameter", "q025", "q25", "q50", "q75", "q975", "median", "mean"}, t);
}

inline void write_trace(const fs::path& path, const ChainDiagnostics& d, const std::vector<std::string>& names) {
  std::vector<std::string> header{"step"};
  for (const auto& n : names) header.push_back("running_mean_" + n);
  Matrix t(d.running_mean.rows(), 1 + d.running_mean.cols());
  for (Index n = 0; n < t.rows(); ++n) t(n, 0) = static_cast<double>(d.burn_in + n + 1);
  t.rightCols(d.running_mean.cols()) = d.running_mean;
  write_csv(path, header, t);
}

inline SampleOutput cmd_sample(const PipelineConfig& cfg, std::ostream& out) {
  Manifest manifest(cfg);
  return run_stage(manifest, "sample", [&] {
    const ProblemSetup setup = load_setup(cfg);
    const auto snapshots = load_snapshots(cfg, setup.model->input_dim());
    std::shared_ptr<const GpEmulator> emulator;
    if (cfg.sampling.misfit != MisfitKind::phi_T_direct)
      emulator = std::make_shared<const GpEmulator>(load_emulator(fs::path(cfg.output_dir) / "emulate"));
    const Misfit misfit = make_misfit(cfg, setup, emulator);
    const Ensemble& last = snapshots.back();
    const Vector theta0 = last.particles.rowwise().mean();
    const ProposalSpec proposal{ensemble_cov(last), cfg.sampling.scale};

    SampleOutput o;
    const auto n_chains = static_cast<std::size_t>(cfg.sampling.chains);
    o.chains.resize(n_chains);
    o.diagnostics.resize(n_chains);
    parallel_for(n_chains, cfg.workers, [&](std::size_t c) {
      o.chains[c] = run_chain(misfit, setup.prior, theta0, proposal, cfg.sampling.samples, cfg.seed + c,
                              to_string(cfg.sampling.misfit));
      o.diagnostics[c] = diagnose(o.chains[c], cfg.sampling.burn_in);
    });

    const fs::path dir = manifest.dir() / "sample";
    std::vector<std::string> files;
    json diag = json::array();
    std::vector<std::uint64_t> seeds;
    for (std::size_t c = 0; c < n_chains; ++c) {
      const auto seed = o.chains[c].seed;
      const std::string stem = "seed" + std::to_string(seed);
      write_chain(dir / ("chain_" + stem + ".csv"), o.chains[c], setup.names);
      write_forest(dir / ("forest_" + stem + ".csv"), o.diagnostics[c]);
      write_trace(dir / ("trace_" + stem + ".csv"), o.diagnostics[c], setup.names);
      for (const char* kind : {"chain_", "forest_", "trace_"}) files.push_back("sample/" + std::string(kind) + stem + ".csv");
      diag.push_back(diagnostics_to_json(o.diagnostics[c], o.chains[c], setup.names));
      seeds.push_back(seed);
      out << fmt::format("sample: chain seed {} ({}), N_s = {}, acceptance {:.3f}\n", seed, o.chains[c].misfit_kind,
                         o.chains[c].size(), o.diagnostics[c].acceptance_rate);
      out << "  posterior mean " << format_vector(o.diagnostics[c].mean) << "\n";
      out << "  posterior sd   " << format_vector(o.diagnostics[c].covariance.diagonal().cwiseSqrt()) << "\n";
    }
    write_json(dir / "diagnostics.json", diag);
    files.push_back("sample/diagnostics.json");
    manifest.finish("sample", files, {{"chain_seeds", seeds}});
    return o;
  });
}

// --- run ------------------------------------------------------------------------

inline void cmd_run(const PipelineConfig& cfg, std::ostream& out) {
  cmd_calibrate(cfg, out);
  if (cfg.sampling.misfit != MisfitKind::phi_T_direct) cmd_emulate(cfg, out);
  cmd_sample(cfg, out);
}

// --- Darcy forward UQ -----------------------------------------------------------

struct ExceedanceThresholds {
  double pressure = 0.0;
  double permeability = 0.0;
};

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

/// Medians over the observation points of the pressure and permeability of
/// the data-generating field.
inline ExceedanceThresholds darcy_thresholds(const DarcyProblemConfig& c, const Vector& truth_full) {
  const auto full = make_darcy_model(c, truth_full.size());
  const Vector p = full->observe(full->solve(truth_full));
  std::vector<double> a;
  for (const auto& x : full->observation_points()) a.push_back(std::exp(full->field().log_value(truth_full, x[0], x[1])));
  return {median(std::vector<double>(p.data(), p.data() + p.size())), median(std::move(a))};
}

struct ExceedanceCounts {
  Index pressure = 0;
  Index permeability = 0;
};

/// Grid nodes whose pressure / permeability exceed the thresholds.
inline ExceedanceCounts count_exceedances(const DarcyModel& model, const Vector& theta, const ExceedanceThresholds& t) {
  const Matrix a = model.permeability(theta);
  const Matrix p = model.solve_with_permeability(a);
  return {(p.array() > t.pressure).count(), (a.array() > t.permeability).count()};
}

struct DarcyUqOutput {
  ExceedanceThresholds thresholds;
  std::vector<ExceedanceCounts> counts;
  std::vector<Index> steps;
  int skipped = 0;
};

inline DarcyUqOutput cmd_darcy_uq(const PipelineConfig& cfg, std::ostream& out,
                                  const std::optional<std::string>& chain_path = std::nullopt) {
  const auto* dc = std::get_if<DarcyProblemConfig>(&cfg.problem.spec);
  if (!dc) throw ConfigError("problem.kind: darcy-uq requires a darcy problem");
  Manifest manifest(cfg);
  return run_stage(manifest, "darcy_uq", [&] {
    const ProblemSetup setup = load_setup(cfg);
    const fs::path chain_file =
        chain_path ? fs::path(*chain_path) : fs::path(cfg.output_dir) / "sample" / ("chain_seed" + std::to_string(cfg.seed) + ".csv");
    const Chain chain = read_chain(chain_file);
    if (chain.samples.cols() != dc->modes) throw IoError(chain_file.string() + ": chain dimension does not match the problem");
    const Index burn = std::min(cfg.sampling.burn_in, chain.size() - 1);
    const Index available = chain.size() - burn;
    const auto& model = dynamic_cast<const DarcyModel&>(*setup.model);

    DarcyUqOutput o;
    o.thresholds = darcy_thresholds(*dc, setup.truth_full);
    const int n = cfg.darcy_uq.samples;
    for (int i = 0; i < n; ++i) {
      const Index step = burn + static_cast<Index>((static_cast<double>(i) + 0.5) * static_cast<double>(available) / n);
      try {
        o.counts.push_back(count_exceedances(model, chain.samples.row(step).transpose(), o.thresholds));
        o.steps.push_back(step + 1);
      } catch (const NumericalError& e) {
        ++o.skipped;
        log().warn("darcy-uq: skipping chain step {}: {}", step + 1, e.what());
      }
    }
    const fs::path dir = manifest.dir() / "darcy_uq";
    Matrix table(static_cast<Index>(o.counts.size()), 4);
    for (std::size_t i = 0; i < o.counts.size(); ++i) {
      const auto r = static_cast<Index>(i);
      table.row(r) << static_cast<double>(i + 1), static_cast<double>(o.steps[i]),
          static_cast<double>(o.counts[i].pressure), static_cast<double>(o.counts[i].permeability);
    }
    write_csv(dir / "exceedance.csv", {"sample", "step", "pressure_count", "permeability_count"}, table);

    const double total = static_cast<double>((dc->grid + 1) * (dc->grid + 1));
    const int bins = cfg.darcy_uq.bins;
    Matrix hist = Matrix::Zero(bins, 4);
    for (int b = 0; b < bins; ++b) {
      hist(b, 0) = total * b / bins;
      hist(b, 1) = total * (b + 1) / bins;
    }
    for (const auto& c : o.counts) {
      const auto bin = [&](Index v) { return std::min<Index>(bins - 1, static_cast<Index>(v * bins / total)); };
      hist(bin(c.pressure), 2) += 1.0;
      hist(bin(c.permeability), 3) += 1.0;
    }
    if (!o.counts.empty()) hist.rightCols(2) /= static_cast<double>(o.counts.size());
    write_csv(dir / "histogram.csv", {"bin_lower", "bin_upper", "pressure_fraction", "permeability_fraction"}, hist);
    write_json(dir / "summary.json", {{"pressure_threshold", o.thresholds.pressure},
                                      {"permeability_threshold", o.thresholds.permeability},
                                      {"samples", o.counts.size()},
                                      {"skipped", o.skipped},
                                      {"grid_nodes", total},
                                      {"chain", chain_file.string()}});
    manifest.finish("darcy_uq", {"darcy_uq/exceedance.csv", "darcy_uq/histogram.csv", "darcy_uq/summary.json"});
    out << fmt::format("darcy-uq: {} samples ({} skipped); thresholds pressure {:.6g}, permeability {:.6g}\n",
                       o.counts.size(), o.skipped, o.thresholds.pressure, o.thresholds.permeability);
    return o;
  });
}

}  // namespace ces
