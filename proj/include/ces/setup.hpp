#pragma once

// Builds forward models, synthetic data and priors from a problem
// configuration.

#include "ces/config.hpp"
#include "ces/darcy.hpp"
#include "ces/dynamics.hpp"
#include "ces/linear_model.hpp"
#include "ces/log.hpp"

#include <memory>
#include <string>
#include <vector>

namespace ces {

inline constexpr std::uint64_t kMatrixTag = 0x47'4d'41'54;  // "GMAT"
inline constexpr std::uint64_t kDataTag = 0x44'41'54'41;    // "DATA"
inline constexpr std::uint64_t kTruthTag = 0x54'52'55'54;   // "TRUT"

/// Everything the later stages need about the inverse problem.
struct ProblemSetup {
  std::string kind;
  ForwardModelPtr model;
  InverseProblem problem;
  GaussianPrior prior;
  Vector truth;       // in the inversion's parameter coordinates
  Vector truth_full;  // Darcy: all KL coefficients of the data-generating field
  std::vector<std::string> names;
  Index windows = 0;  // time-averaged problems: windows behind Γ_obs
};

inline Vector lorenz63_theta(const Vector& natural) { return natural.array().log().matrix(); }

inline Vector lorenz96_theta(const Vector& natural) {
  Vector t = natural;
  t(2) = std::log(natural(2));
  return t;
}

inline std::shared_ptr<const DarcyModel> make_darcy_model(const DarcyProblemConfig& c, Index modes) {
  DarcySettings s;
  s.grid = c.grid;
  s.tolerance = c.cg_tolerance;
  return std::make_shared<const DarcyModel>(KLField(modes, c.tau, c.alpha), lattice_points(c.observations), s);
}

/// The forward model used for inversion (cheap to construct).
inline ForwardModelPtr make_forward_model(const ProblemConfig& pc) {
  return std::visit(
      [&](const auto& c) -> ForwardModelPtr {
        using S = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<S, LinearProblemConfig>) {
          Rng rng = make_stream(pc.data_seed, {kMatrixTag});
          return std::make_shared<const LinearModel>(
              LinearModel::random(c.output_dim, LinearModel::correlated_rows(c.row_correlation), rng));
        } else if constexpr (std::is_same_v<S, DarcyProblemConfig>) {
          return make_darcy_model(c, c.modes);
        } else if constexpr (std::is_same_v<S, Lorenz63ProblemConfig>) {
          return std::make_shared<const TimeAveragedModel<Lorenz63>>(Lorenz63{c.sigma}, c.averaging);
        } else {
          return std::make_shared<const TimeAveragedModel<Lorenz96>>(Lorenz96{c.slow, c.fast}, c.averaging);
        }
      },
      pc.spec);
}

namespace detail {

/// Long run at the truth: y is the mean of the window averages and the noise
/// covariance their empirical covariance.
template <class System>
void time_averaged_data(ProblemSetup& s, const TimeAveragedModel<System>& model, double horizon) {
  const auto obs = estimate_obs_covariance(model, s.truth, horizon, model.initial_carry());
  s.problem.data = obs.mean;
  s.problem.noise_cov = obs.covariance;
  s.windows = obs.windows;
  log().info("noise covariance from {} windows", obs.windows);
}

}  // namespace detail

/// Builds the model, draws or simulates the data and assembles the prior.
inline ProblemSetup make_problem_setup(const PipelineConfig& cfg) {
  const ProblemConfig& pc = cfg.problem;
  ProblemSetup s;
  s.kind = pc.kind;
  s.model = make_forward_model(pc);
  s.names = s.model->parameter_names();
  s.problem.model = s.model;
  s.prior = GaussianPrior(cfg.prior.mean, cfg.prior.covariance);

  std::visit(
      [&](const auto& c) {
        using S = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<S, LinearProblemConfig>) {
          s.truth = c.truth;
          Rng rng = make_stream(pc.data_seed, {kDataTag});
          const auto d = s.model->output_dim();
          s.problem.noise_cov = Matrix::Identity(d, d) * (c.noise_std * c.noise_std);
          s.problem.data = (*s.model)(s.truth) + c.noise_std * standard_normal(d, rng);
        } else if constexpr (std::is_same_v<S, DarcyProblemConfig>) {
          Rng truth_rng = make_stream(pc.data_seed, {kTruthTag});
          s.truth_full = standard_normal(c.truth_modes, truth_rng);
          s.truth = s.truth_full.head(c.modes);
          const auto full = make_darcy_model(c, c.truth_modes);
          Rng rng = make_stream(pc.data_seed, {kDataTag});
          const auto d = full->output_dim();
          s.problem.noise_cov = Matrix::Identity(d, d) * (c.noise_std * c.noise_std);
          s.problem.data = (*full)(s.truth_full) + c.noise_std * standard_normal(d, rng);
        } else if constexpr (std::is_same_v<S, Lorenz63ProblemConfig>) {
          s.truth = lorenz63_theta(c.truth);
          detail::time_averaged_data(s, dynamic_cast<const TimeAveragedModel<Lorenz63>&>(*s.model), c.horizon);
        } else {
          s.truth = lorenz96_theta(c.truth);
          detail::time_averaged_data(s, dynamic_cast<const TimeAveragedModel<Lorenz96>&>(*s.model), c.horizon);
        }
      },
      pc.spec);
  s.problem.validate();
  if (s.prior.dim() != s.model->input_dim()) throw ConfigError("prior.mean: dimension does not match the problem");
  return s;
}

}  // namespace ces
