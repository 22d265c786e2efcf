#pragma once

// Time-averaged forward maps of chaotic ODEs: a fixed-step RK4 integrator, the
// Lorenz '63 and multiscale Lorenz '96 systems, and the long-run estimator of
// the finite-window noise covariance.

#include "ces/forward_model.hpp"
#include "ces/linalg.hpp"

#include <cmath>
#include <concepts>
#include <string>
#include <vector>

namespace ces {

template <class S>
concept DynamicalSystem = requires(const S& s, const Vector& theta, const typename S::Params& prm, const Vector& z,
                                   Vector& dz, Eigen::Ref<Vector> out) {
  { s.state_dim() } -> std::convertible_to<Index>;
  { s.observable_dim() } -> std::convertible_to<Index>;
  { s.parameter_dim() } -> std::convertible_to<Index>;
  { s.params(theta) } -> std::same_as<typename S::Params>;
  s.rhs(prm, z, dz);
  s.observe(z, out);
  { s.reference_state() } -> std::convertible_to<Vector>;
};

/// Lorenz '63 with σ fixed and θ = (log r, log b).
struct Lorenz63 {
  struct Params {
    double sigma, r, b;
  };
  double sigma = 10.0;

  Index state_dim() const { return 3; }
  Index observable_dim() const { return 9; }
  Index parameter_dim() const { return 2; }
  std::vector<std::string> parameter_names() const { return {"log_r", "log_b"}; }

  Params params(const Vector& theta) const { return {sigma, std::exp(theta(0)), std::exp(theta(1))}; }

  void rhs(const Params& p, const Vector& z, Vector& dz) const {
    dz(0) = p.sigma * (z(1) - z(0));
    dz(1) = p.r * z(0) - z(1) - z(0) * z(2);
    dz(2) = z(0) * z(1) - p.b * z(2);
  }

  /// (x₁, x₂, x₃, x₁², x₂², x₃², x₁x₂, x₂x₃, x₃x₁)
  void observe(const Vector& z, Eigen::Ref<Vector> out) const {
    out << z(0), z(1), z(2), z(0) * z(0), z(1) * z(1), z(2) * z(2), z(0) * z(1), z(1) * z(2), z(2) * z(0);
  }

  Vector reference_state() const { return Vector::Ones(3); }
};

/// Two-scale Lorenz '96 with K slow variables X_k and L fast variables Y_{l,k}
/// per slow variable, θ = (h, F, log c, b). The state stores X followed by the
/// fast variables in k-major order, so Y_{l+L,k} = Y_{l,k+1} is simply the
/// next entry of one periodic ring of length K·L.
struct Lorenz96 {
  struct Params {
    double h, forcing, c, b;
  };
  int slow = 36;
  int fast = 10;

  Index state_dim() const { return static_cast<Index>(slow) * (1 + fast); }
  Index observable_dim() const { return 5; }
  Index parameter_dim() const { return 4; }
  std::vector<std::string> parameter_names() const { return {"h", "F", "log_c", "b"}; }

  Params params(const Vector& theta) const { return {theta(0), theta(1), std::exp(theta(2)), theta(3)}; }

  void rhs(const Params& p, const Vector& z, Vector& dz) const {
    const int K = slow, L = fast, n = K * L;
    const double* x = z.data();
    const double* y = z.data() + K;
    double* dx = dz.data();
    double* dy = dz.data() + K;
    const double coupling = p.h * p.c / L;
    for (int k = 0; k < K; ++k) {
      const int km1 = k == 0 ? K - 1 : k - 1;
      const int km2 = k >= 2 ? k - 2 : k + K - 2;
      const int kp1 = k == K - 1 ? 0 : k + 1;
      double ysum = 0.0;
      for (int l = 0; l < L; ++l) ysum += y[k * L + l];
      dx[k] = -x[km1] * (x[km2] - x[kp1]) - x[k] + p.forcing - coupling * ysum;
    }
    const double cb = p.c * p.b, chl = p.c * p.h / L;
    auto fast_term = [&](int j, int jm1, int jp1, int jp2) {
      dy[j] = -cb * y[jp1] * (y[jp2] - y[jm1]) - p.c * y[j] + chl * x[j / L];
    };
    fast_term(0, n - 1, 1, 2);
    for (int j = 1; j < n - 2; ++j) fast_term(j, j - 1, j + 1, j + 2);
    fast_term(n - 2, n - 3, n - 1, 0);
    fast_term(n - 1, n - 2, 0, 1);
  }

  /// (1/K) Σ_k (X_k, Ȳ_k, X_k², X_k Ȳ_k, Ȳ_k²)
  void observe(const Vector& z, Eigen::Ref<Vector> out) const {
    out.setZero();
    for (int k = 0; k < slow; ++k) {
      const double xk = z(k);
      double ybar = 0.0;
      for (int l = 0; l < fast; ++l) ybar += z(slow + k * fast + l);
      ybar /= fast;
      out(0) += xk;
      out(1) += ybar;
      out(2) += xk * xk;
      out(3) += xk * ybar;
      out(4) += ybar * ybar;
    }
    out /= slow;
  }

  /// Deterministic, slightly asymmetric start used before spin-up.
  Vector reference_state() const {
    Vector z(state_dim());
    for (int k = 0; k < slow; ++k) z(k) = 1.0 + 0.1 * std::sin(0.7 * k);
    for (Index j = slow; j < z.size(); ++j) z(j) = 0.01 * std::cos(1.3 * static_cast<double>(j));
    return z;
  }
};

struct TimeAverageSettings {
  double step = 0.01;
  double spinup = 30.0;
  double window = 10.0;
};

struct TimeAverage {
  Vector value;
  Vector endpoint;
};

/// Trapezoidal running average of φ sampled on a uniform step grid. Feeding the
/// same samples in any number of chunks gives the same result.
class TrapezoidAverager {
 public:
  explicit TrapezoidAverager(Index dim) : sum_(Vector::Zero(dim)), first_(Vector::Zero(dim)), last_(Vector::Zero(dim)) {}

  void push(const Vector& sample) {
    if (count_ == 0) first_ = sample;
    last_ = sample;
    sum_ += sample;
    ++count_;
  }

  /// Mean over the interval spanned by the samples.
  Vector average() const {
    if (count_ < 2) throw ConfigError("time average needs at least two samples");
    return (sum_ - 0.5 * (first_ + last_)) / static_cast<double>(count_ - 1);
  }

  Index samples() const { return count_; }

 private:
  Vector sum_, first_, last_;
  Index count_ = 0;
};

/// G_T(θ; z₀) = (1/T) ∫_{T₀}^{T₀+T} φ(z(t; θ)) dt for a DynamicalSystem,
/// integrated with explicit RK4 at a fixed step.
template <DynamicalSystem System>
class TimeAveragedModel final : public ForwardModel {
 public:
  using Params = typename System::Params;

  TimeAveragedModel(System system, TimeAverageSettings settings, Vector initial_state = {})
      : system_(std::move(system)), settings_(settings) {
    if (!(settings_.step > 0)) throw ConfigError("integrator step must be positive");
    if (!(settings_.window > 0)) throw ConfigError("averaging window must be positive");
    if (settings_.spinup < 0) throw ConfigError("spinup must be non-negative");
    initial_ = initial_state.size() ? std::move(initial_state) : system_.reference_state();
    if (initial_.size() != system_.state_dim()) throw ConfigError("initial state has the wrong dimension");
  }

  Index input_dim() const override { return system_.parameter_dim(); }
  Index output_dim() const override { return system_.observable_dim(); }
  Vector initial_carry() const override { return initial_; }
  std::vector<std::string> parameter_names() const override { return system_.parameter_names(); }
  const System& system() const { return system_; }
  const TimeAverageSettings& settings() const { return settings_; }

  Evaluation evaluate(const Vector& theta, const Vector& carry) const override {
    check_input(theta);
    auto avg = time_average(theta, carry.size() ? carry : initial_);
    return {std::move(avg.value), std::move(avg.endpoint)};
  }

  Index steps(double duration) const { return static_cast<Index>(std::llround(duration / settings_.step)); }

  /// Advances z in place by n RK4 steps starting at time t0, calling
  /// visit(z) after every step. Throws DivergenceError on blow-up.
  template <class Visitor>
  void advance(const Params& p, Vector& z, Index n, double t0, Visitor&& visit) const {
    const double h = settings_.step;
    Vector k1(z.size()), k2(z.size()), k3(z.size()), k4(z.size()), tmp(z.size());
    for (Index s = 0; s < n; ++s) {
      system_.rhs(p, z, k1);
      tmp = z + 0.5 * h * k1;
      system_.rhs(p, tmp, k2);
      tmp = z + 0.5 * h * k2;
      system_.rhs(p, tmp, k3);
      tmp = z + h * k3;
      system_.rhs(p, tmp, k4);
      z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!z.allFinite() || z.cwiseAbs().maxCoeff() > 1e12)
        throw DivergenceError(t0 + (s + 1) * h, "trajectory diverged");
      visit(z);
    }
  }

  void advance(const Params& p, Vector& z, Index n, double t0 = 0.0) const {
    advance(p, z, n, t0, [](const Vector&) {});
  }

  /// States at t = 0, h, ..., duration as columns.
  Matrix integrate(const Vector& theta, const Vector& z0, double duration) const {
    check_input(theta);
    check_state(z0);
    const Index n = steps(duration);
    Matrix traj(z0.size(), n + 1);
    traj.col(0) = z0;
    Vector z = z0;
    Index col = 1;
    advance(system_.params(theta), z, n, 0.0, [&](const Vector& s) { traj.col(col++) = s; });
    return traj;
  }

  TimeAverage time_average(const Vector& theta, const Vector& z0) const {
    check_input(theta);
    check_state(z0);
    const Params p = system_.params(theta);
    Vector z = z0;
    const Index spin = steps(settings_.spinup);
    advance(p, z, spin, 0.0);
    TrapezoidAverager avg(output_dim());
    Vector phi(output_dim());
    system_.observe(z, phi);
    avg.push(phi);
    advance(p, z, window_steps(), spin * settings_.step, [&](const Vector& s) {
      system_.observe(s, phi);
      avg.push(phi);
    });
    return {avg.average(), z};
  }

  Index window_steps() const {
    const Index n = steps(settings_.window);
    if (n < 1) throw ConfigError("averaging window is shorter than one integrator step");
    return n;
  }

  /// State reached after integrating from the reference state for `duration`
  /// at parameters theta.
  Vector spun_up_state(const Vector& theta, double duration) const {
    Vector z = system_.reference_state();
    advance(system_.params(theta), z, steps(duration));
    return z;
  }

 private:
  void check_state(const Vector& z) const {
    if (z.size() != system_.state_dim()) throw ConfigError("state has the wrong dimension");
    if (!z.allFinite()) throw ConfigError("initial state must be finite");
  }

  System system_;
  TimeAverageSettings settings_;
  Vector initial_;
};

struct ObsCovariance {
  Vector mean;
  Matrix covariance;
  Index windows = 0;
  Matrix window_averages;  // d × windows
};

/// Splits one trajectory of length `horizon` (spin-up included) into
/// ⌊(horizon − T₀)/T⌋ windows of length T after discarding the model's spin-up
/// and returns the mean and unbiased covariance of the window averages. The
/// covariance is symmetrized and regularized by 1e-8 × mean diagonal.
template <DynamicalSystem System>
ObsCovariance estimate_obs_covariance(const TimeAveragedModel<System>& model, const Vector& theta, double horizon,
                                      const Vector& z0) {
  const auto& s = model.settings();
  const Index d = model.output_dim();
  const Index windows = static_cast<Index>(std::floor((horizon - s.spinup) / s.window + 1e-9));
  if (windows < d + 1)
    throw ConfigError("obs covariance needs at least " + std::to_string(d + 1) + " windows, horizon gives " +
                      std::to_string(std::max<Index>(windows, 0)));
  const auto p = model.system().params(theta);
  Vector z = z0;
  const Index spin = model.steps(s.spinup);
  model.advance(p, z, spin, 0.0);
  const Index per = model.window_steps();
  Matrix avgs(d, windows);
  Vector phi(d);
  for (Index w = 0; w < windows; ++w) {
    TrapezoidAverager avg(d);
    model.system().observe(z, phi);
    avg.push(phi);
    model.advance(p, z, per, (spin + w * per) * s.step, [&](const Vector& st) {
      model.system().observe(st, phi);
      avg.push(phi);
    });
    avgs.col(w) = avg.average();
  }
  ObsCovariance out;
  out.windows = windows;
  out.mean = avgs.rowwise().mean();
  const Matrix centered = avgs.colwise() - out.mean;
  out.covariance = symmetrize(centered * centered.transpose() / static_cast<double>(windows - 1));
  const double mean_diag = out.covariance.diagonal().mean();
  const double jitter = 1e-8 * (mean_diag > 0 ? mean_diag : 1.0);
  out.covariance.diagonal().array() += jitter;
  out.window_averages = std::move(avgs);
  return out;
}

}  // namespace ces
