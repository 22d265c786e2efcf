#pragma once

// Random-walk Metropolis on exp(−Φ(θ) − ½‖θ − mθ‖²_Γθ).

#include "ces/log.hpp"
#include "ces/prior.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace ces {

using MisfitFunction = std::function<double(const Vector&)>;

/// −(Φ(θ) + ½‖θ − mθ‖²_Γθ)
template <class F>
double log_post(const F& misfit, const GaussianPrior& prior, const Vector& theta) {
  if (!theta.allFinite()) throw NumericalError("log-posterior evaluated at a non-finite parameter");
  const double v = -(misfit(theta) + prior.half_sq_mahalanobis(theta));
  if (std::isnan(v)) throw NumericalError("log-posterior is NaN");
  return v;
}

/// min{1, exp(lp* − lp)}
inline double acceptance_probability(double log_post_current, double log_post_proposed) {
  const double delta = log_post_proposed - log_post_current;
  if (std::isnan(delta)) return 0.0;
  return delta >= 0 ? 1.0 : std::exp(delta);
}

struct ChainState {
  Vector theta;
  double log_post = 0.0;
};

/// Metropolis accept/reject of `candidate` given a uniform draw u ∈ [0, 1).
/// A target that throws at the candidate rejects it.
template <class LogDensity>
bool metropolis_accept(ChainState& state, const Vector& candidate, const LogDensity& log_density, double u) {
  double lp = 0.0;
  try {
    lp = log_density(candidate);
  } catch (const Error& e) {
    log().warn("proposal rejected: {}", e.what());
    return false;
  }
  if (u < acceptance_probability(state.log_post, lp)) {
    state.theta = candidate;
    state.log_post = lp;
    return true;
  }
  return false;
}

/// Proposal N(0, scale² C).
struct ProposalSpec {
  Matrix covariance;
  double scale = 1.0;

  Matrix factor() const {
    if (!(scale > 0)) throw ConfigError("proposal scale must be positive");
    return scale * sqrt_factor(covariance, "proposal covariance");
  }
};

/// One RWM step with proposal θ* = θ + Lξ. Draws p normals then one uniform.
template <class LogDensity>
bool rwm_step(ChainState& state, const LogDensity& log_density, const Matrix& proposal_factor, Rng& rng) {
  const Vector candidate = state.theta + proposal_factor * standard_normal(state.theta.size(), rng);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  return metropolis_accept(state, candidate, log_density, uniform(rng));
}

struct Chain {
  Matrix samples;  // N_s × p, state after each step
  Vector log_post;
  std::vector<char> accepted;
  std::uint64_t seed = 0;
  std::string misfit_kind;
  Vector init;

  Index size() const { return samples.rows(); }
  double acceptance_rate() const {
    if (accepted.empty()) return 0.0;
    std::size_t n = 0;
    for (char a : accepted) n += a ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(accepted.size());
  }
};

inline constexpr std::uint64_t kChainTag = 0x52'57'4d'43;  // "RWMC"

/// N_s RWM steps from θ₀ against the posterior with the given misfit.
template <class F>
Chain run_chain(const F& misfit, const GaussianPrior& prior, const Vector& theta0, const ProposalSpec& proposal,
                Index n_samples, std::uint64_t seed, std::string misfit_kind = {}) {
  if (n_samples < 1) throw ConfigError("chain length must be at least 1");
  if (theta0.size() != prior.dim()) throw ConfigError("initial point dimension does not match the prior");
  if (proposal.covariance.rows() != prior.dim() || proposal.covariance.cols() != prior.dim())
    throw ConfigError("proposal covariance dimension does not match the prior");
  const Matrix factor = proposal.factor();
  auto target = [&](const Vector& theta) { return log_post(misfit, prior, theta); };

  Chain chain;
  chain.seed = seed;
  chain.misfit_kind = std::move(misfit_kind);
  chain.init = theta0;
  chain.samples.resize(n_samples, prior.dim());
  chain.log_post.resize(n_samples);
  chain.accepted.resize(static_cast<std::size_t>(n_samples));

  ChainState state{theta0, 0.0};
  try {
    state.log_post = target(theta0);
  } catch (const Error& e) {
    throw NumericalError(std::string("log-posterior is undefined at the initial point: ") + e.what());
  }
  if (!std::isfinite(state.log_post)) throw NumericalError("log-posterior is not finite at the initial point");

  Rng rng = make_stream(seed, {kChainTag});
  for (Index n = 0; n < n_samples; ++n) {
    chain.accepted[static_cast<std::size_t>(n)] = rwm_step(state, target, factor, rng) ? 1 : 0;
    chain.samples.row(n) = state.theta.transpose();
    chain.log_post(n) = state.log_post;
  }
  log().info("chain seed {}: acceptance rate {:.3f}", seed, chain.acceptance_rate());
  return chain;
}

}  // namespace ces
