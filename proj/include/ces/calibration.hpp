#pragma once

// Ensemble Kalman inversion (EKI) and the ensemble Kalman sampler (EKS) with
// the linearly implicit split-step update and adaptive time step.

#include "ces/log.hpp"
#include "ces/prior.hpp"
#include "ces/problem.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace ces {

/// J particles (columns of `particles`) with their forward evaluations.
struct Ensemble {
  int iteration = 0;
  Matrix particles;  // p × J
  Matrix outputs;    // d × J, may be empty before evaluation
  std::vector<Vector> carry;

  Index size() const { return particles.cols(); }
  Index input_dim() const { return particles.rows(); }
  Index output_dim() const { return outputs.rows(); }
  bool evaluated() const { return outputs.cols() == particles.cols() && outputs.rows() > 0; }
};

struct EnsembleMean {
  Vector theta;
  Vector output;
};

inline EnsembleMean ensemble_mean(const Ensemble& e) {
  if (e.size() == 0) throw ConfigError("ensemble is empty");
  EnsembleMean m;
  m.theta = e.particles.rowwise().mean();
  if (e.outputs.cols() == e.size() && e.outputs.rows() > 0) m.output = e.outputs.rowwise().mean();
  return m;
}

/// C(Θ) = (1/J) Σ (θ_k − θ̄)(θ_k − θ̄)ᵀ
inline Matrix ensemble_cov(const Matrix& particles) {
  if (particles.cols() == 0) throw ConfigError("ensemble is empty");
  const Vector mean = particles.rowwise().mean();
  const Matrix c = particles.colwise() - mean;
  return (c * c.transpose()) / static_cast<double>(particles.cols());
}

inline Matrix ensemble_cov(const Ensemble& e) { return ensemble_cov(e.particles); }

/// J×J matrix D(j, k) = (1/J) ⟨G_k − Ḡ, G_j − y⟩_Γ.
inline Matrix misfit_coupling(const Ensemble& e, const Vector& y, const Matrix& noise_cov) {
  if (!e.evaluated()) throw ConfigError("ensemble has no forward evaluations");
  if (y.size() != e.output_dim()) throw ConfigError("data dimension does not match ensemble outputs");
  Eigen::LLT<Matrix> chol(noise_cov);
  if (chol.info() != Eigen::Success) throw NumericalError("noise covariance is singular");
  const Vector gbar = e.outputs.rowwise().mean();
  const Matrix spread = chol.matrixL().solve(Matrix(e.outputs.colwise() - gbar));
  const Matrix resid = chol.matrixL().solve(Matrix(e.outputs.colwise() - y));
  return resid.transpose() * spread / static_cast<double>(e.size());
}

struct TimestepRule {
  double dt0 = 1.0;
  double epsilon = 1e-8;
  double max_factor = 10.0;
};

/// Δt_n = Δt₀ / (‖D_n‖_F + ε), capped at max_factor·Δt₀.
inline double adaptive_timestep(const Matrix& coupling, const TimestepRule& rule) {
  const double dt = rule.dt0 / (coupling.norm() + rule.epsilon);
  return std::min(dt, rule.max_factor * rule.dt0);
}

inline double adaptive_timestep(const Ensemble& e, const Vector& y, const Matrix& noise_cov, const TimestepRule& rule) {
  return adaptive_timestep(misfit_coupling(e, y, noise_cov), rule);
}

/// Explicit Euler step of the EKI particle flow.
inline Ensemble eki_step(const Ensemble& e, const Vector& y, const Matrix& noise_cov, double dt) {
  const Matrix d = misfit_coupling(e, y, noise_cov);
  const Vector mean = e.particles.rowwise().mean();
  const Matrix centered = e.particles.colwise() - mean;
  Ensemble next;
  next.iteration = e.iteration + 1;
  next.particles = e.particles - dt * centered * d.transpose();
  next.carry = e.carry;
  return next;
}

enum class CalibrationVariant { eki, eks };

struct EksOptions {
  bool prior_damping = true;
  bool noise = true;
  double jitter_first = 1e-12;
  double jitter_last = 1e-6;
};

inline constexpr std::uint64_t kEksNoiseTag = 0x45'4b'53'4e;     // "EKSN"
inline constexpr std::uint64_t kResampleTag = 0x52'45'53'4d;    // "RESM"
inline constexpr std::uint64_t kInitTag = 0x49'4e'49'54;        // "INIT"

/// One split-step EKS update:
///   (I + Δt C Γθ⁻¹) θ*_j = θ_j − Δt Σ_k D_jk θ_k + Δt C Γθ⁻¹ mθ
///   θ_j' = θ*_j + √(2Δt C) ξ_j
/// The noise for particle j is drawn from the stream (seed, iteration, j).
inline Ensemble eks_step(const Ensemble& e, const Vector& y, const Matrix& noise_cov, const GaussianPrior& prior,
                         double dt, std::uint64_t seed, const EksOptions& opt = {}) {
  const Index p = e.input_dim();
  if (prior.dim() != p) throw ConfigError("prior dimension does not match particles");
  const Matrix d = misfit_coupling(e, y, noise_cov);
  const Vector mean = e.particles.rowwise().mean();
  const Matrix centered = e.particles.colwise() - mean;
  const Matrix cov = (centered * centered.transpose()) / static_cast<double>(e.size());

  Matrix rhs = e.particles - dt * centered * d.transpose();
  Matrix lhs = Matrix::Identity(p, p);
  if (opt.prior_damping) {
    const Matrix damping = cov * prior.precision();
    lhs += dt * damping;
    rhs.colwise() += dt * damping * prior.mean();
  }
  Eigen::PartialPivLU<Matrix> lu(lhs);
  Ensemble next;
  next.iteration = e.iteration + 1;
  next.particles = lu.solve(rhs);
  if (!next.particles.allFinite()) throw NumericalError("EKS implicit solve produced non-finite particles");
  next.carry = e.carry;

  if (opt.noise) {
    const Matrix root = sqrt_factor(cov, "EKS ensemble covariance", opt.jitter_first, opt.jitter_last);
    const double scale = std::sqrt(2.0 * dt);
    for (Index j = 0; j < e.size(); ++j) {
      Rng rng = make_stream(seed, {kEksNoiseTag, static_cast<std::uint64_t>(e.iteration), static_cast<std::uint64_t>(j)});
      next.particles.col(j) += scale * root * standard_normal(p, rng);
    }
  }
  return next;
}

struct CalibrationSettings {
  CalibrationVariant variant = CalibrationVariant::eks;
  Index ensemble_size = 16;
  int iterations = 20;
  int snapshot_stride = 0;  // 0: only the initial and final iterations
  TimestepRule timestep;
  EksOptions eks;
  int max_retries = 3;
  unsigned workers = 1;
  bool plateau_stop = false;
  double plateau_tolerance = 1e-3;
  int plateau_window = 3;
};

struct CalibrationResult {
  std::vector<Ensemble> snapshots;
  std::vector<double> timesteps;
  std::uint64_t seed = 0;
  int iterations_run = 0;
  int failed_evaluations = 0;

  const Ensemble& final_ensemble() const { return snapshots.back(); }
};

/// Evaluates every particle (concurrently). A particle whose evaluation fails
/// is redrawn from the Gaussian fit of the successful particles and retried up
/// to `max_retries` times before the whole calibration aborts.
inline int evaluate_ensemble(const ForwardModel& model, Ensemble& e, std::uint64_t seed, int max_retries,
                             unsigned workers) {
  const Index j_count = e.size();
  e.outputs.resize(model.output_dim(), j_count);
  if (static_cast<Index>(e.carry.size()) != j_count) e.carry.assign(j_count, model.initial_carry());
  std::vector<char> ok(j_count, 0);
  std::vector<std::string> reasons(j_count);
  auto eval_one = [&](Index j) {
    try {
      auto r = model.evaluate(e.particles.col(j), e.carry[j]);
      if (r.value.size() != model.output_dim() || !r.value.allFinite())
        throw NumericalError("forward model returned a non-finite output");
      e.outputs.col(j) = r.value;
      e.carry[j] = std::move(r.carry);
      ok[j] = 1;
    } catch (const NumericalError& err) {
      reasons[j] = err.what();
    }
  };
  parallel_for(static_cast<std::size_t>(j_count), workers, [&](std::size_t j) { eval_one(static_cast<Index>(j)); });

  int failures = 0;
  for (Index j = 0; j < j_count; ++j) {
    if (ok[j]) continue;
    std::vector<Index> good;
    for (Index k = 0; k < j_count; ++k)
      if (ok[k]) good.push_back(k);
    if (good.empty()) throw NumericalError("every particle failed to evaluate: " + reasons[j]);
    Matrix sub(e.input_dim(), static_cast<Index>(good.size()));
    for (std::size_t i = 0; i < good.size(); ++i) sub.col(static_cast<Index>(i)) = e.particles.col(good[i]);
    const Vector mean = sub.rowwise().mean();
    const Matrix root = sqrt_factor(ensemble_cov(sub), "resampling covariance", 1e-12, 1e-6);
    for (int attempt = 0; attempt < max_retries && !ok[j]; ++attempt) {
      ++failures;
      log().warn("particle {} failed at iteration {} ({}); resampling, attempt {}", j, e.iteration, reasons[j],
                 attempt + 1);
      Rng rng = make_stream(seed, {kResampleTag, static_cast<std::uint64_t>(e.iteration), static_cast<std::uint64_t>(j),
                                   static_cast<std::uint64_t>(attempt)});
      e.particles.col(j) = mean + root * standard_normal(e.input_dim(), rng);
      e.carry[j] = model.initial_carry();
      eval_one(j);
    }
    if (!ok[j])
      throw NumericalError("particle " + std::to_string(j) + " failed after " + std::to_string(max_retries) +
                           " retries: " + reasons[j]);
  }
  return failures;
}

/// Draws J particles from the prior and runs N EKI/EKS iterations, recording
/// snapshots (with evaluations) at every `snapshot_stride`-th iteration,
/// iteration 0 and the final iteration.
inline CalibrationResult run_calibration(const InverseProblem& problem, const GaussianPrior& prior,
                                         const CalibrationSettings& s, std::uint64_t seed) {
  problem.validate();
  if (s.ensemble_size < 1) throw ConfigError("ensemble size must be positive");
  if (s.iterations < 0) throw ConfigError("iteration count must be non-negative");
  if (!(s.timestep.dt0 > 0)) throw ConfigError("base time step must be positive");
  if (prior.dim() != problem.model->input_dim()) throw ConfigError("prior dimension does not match the model");

  CalibrationResult out;
  out.seed = seed;
  Ensemble e;
  e.particles.resize(prior.dim(), s.ensemble_size);
  for (Index j = 0; j < s.ensemble_size; ++j) {
    Rng rng = make_stream(seed, {kInitTag, static_cast<std::uint64_t>(j)});
    e.particles.col(j) = prior.sample(rng);
  }

  const int stride = s.snapshot_stride > 0 ? s.snapshot_stride : std::max(1, s.iterations);
  std::vector<double> spread_history;
  for (int n = 0;; ++n) {
    e.iteration = n;
    out.failed_evaluations += evaluate_ensemble(*problem.model, e, seed, s.max_retries, s.workers);
    const bool last = n == s.iterations;
    bool stop = last;
    if (s.plateau_stop && !last) {
      spread_history.push_back(ensemble_cov(e).trace());
      const auto h = spread_history.size();
      if (h > static_cast<std::size_t>(s.plateau_window)) {
        const double old = spread_history[h - 1 - s.plateau_window];
        if (std::abs(spread_history.back() - old) <= s.plateau_tolerance * std::max(old, 1e-300)) stop = true;
      }
    }
    if (n % stride == 0 || stop) out.snapshots.push_back(e);
    if (stop) {
      out.iterations_run = n;
      break;
    }
    const double dt = adaptive_timestep(e, problem.data, problem.noise_cov, s.timestep);
    out.timesteps.push_back(dt);
    log().debug("iteration {}: dt = {}", n, dt);
    Ensemble next = s.variant == CalibrationVariant::eks
                        ? eks_step(e, problem.data, problem.noise_cov, prior, dt, seed, s.eks)
                        : eki_step(e, problem.data, problem.noise_cov, dt);
    e = std::move(next);
  }
  return out;
}

}  // namespace ces
