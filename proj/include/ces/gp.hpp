#pragma once

// Single-output Gaussian-process regression with empirical-Bayes
// hyperparameters (type-II maximum likelihood plus Gamma lengthscale priors).

#include "ces/gamma_prior.hpp"
#include "ces/kernel.hpp"
#include "ces/linalg.hpp"
#include "ces/log.hpp"
#include "ces/optimize.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace ces {

enum class MeanFamily { zero, linear };

inline std::string to_string(MeanFamily m) { return m == MeanFamily::zero ? "zero" : "linear"; }

using LengthscalePriors = std::vector<std::optional<GammaPrior>>;

/// Basis of the mean function: none, or [1, θ₁..θ_p].
inline Matrix mean_basis(MeanFamily family, const Matrix& inputs) {
  if (family == MeanFamily::zero) return Matrix(inputs.rows(), 0);
  Matrix h(inputs.rows(), inputs.cols() + 1);
  h.col(0).setOnes();
  h.rightCols(inputs.cols()) = inputs;
  return h;
}

inline Vector mean_basis(MeanFamily family, const Vector& theta) {
  if (family == MeanFamily::zero) return Vector(0);
  Vector h(theta.size() + 1);
  h(0) = 1.0;
  h.tail(theta.size()) = theta;
  return h;
}

/// Jitter ladder on the kernel diagonal, relative to its mean: 1e-10 → 1e-6.
inline constexpr double kGpJitterFirst = 1e-10;
inline constexpr double kGpJitterLast = 1e-6;

/// Log marginal likelihood of a GP over log-hyperparameters
///   u = (log σ², log ℓ₁, …, log ℓ_p, log λ²),
/// with linear-mean coefficients profiled out, plus the log Gamma prior
/// density of each ℓ_i. Gradients are analytic.
class MarginalLikelihood {
 public:
  MarginalLikelihood(const Matrix& inputs, const Vector& targets, MeanFamily mean, KernelFamily kernel,
                     LengthscalePriors priors = {})
      : x_(inputs), y_(targets), mean_(mean), kernel_(kernel), priors_(std::move(priors)) {
    const Index m = x_.rows(), p = x_.cols();
    if (y_.size() != m) throw ConfigError("GP targets and inputs disagree in length");
    if (!priors_.empty() && static_cast<Index>(priors_.size()) != p)
      throw ConfigError("one lengthscale prior per input dimension is required");
    h_ = mean_basis(mean_, x_);
    sq_.resize(p);
    for (Index i = 0; i < p; ++i) {
      sq_[i].resize(m, m);
      for (Index a = 0; a < m; ++a)
        for (Index b = 0; b < m; ++b) {
          const double d = x_(a, i) - x_(b, i);
          sq_[i](a, b) = d * d;
        }
    }
  }

  Index parameter_count() const { return x_.cols() + 2; }

  static KernelSpec spec_from(KernelFamily family, const Vector& u) {
    KernelSpec k;
    k.family = family;
    k.amplitude = std::exp(u(0));
    k.lengthscales = u.segment(1, u.size() - 2).array().exp();
    k.noise = std::exp(u(u.size() - 1));
    return k;
  }

  /// Objective value (log evidence + log prior); writes the gradient w.r.t. u.
  double operator()(const Vector& u, Vector* grad) const {
    const Index m = x_.rows(), p = x_.cols();
    const KernelSpec k = spec_from(kernel_, u);
    Matrix r2 = Matrix::Zero(m, m);
    for (Index i = 0; i < p; ++i) r2 += sq_[i] / (k.lengthscales(i) * k.lengthscales(i));
    const Matrix kf = r2.unaryExpr([&](double v) { return k.amplitude * correlation(k.family, v); });
    Matrix kmat = kf;
    kmat.diagonal().array() += k.noise;
    const double scale = kmat.diagonal().mean();
    auto chol = try_cholesky(kmat, kGpJitterFirst * scale, kGpJitterLast * scale);
    if (!chol) return -std::numeric_limits<double>::infinity();
    const auto& llt = chol->llt;

    Vector resid = y_;
    if (h_.cols() > 0) {
      const Matrix kinv_h = llt.solve(h_);
      Eigen::LDLT<Matrix> a(h_.transpose() * kinv_h);
      if (a.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
      resid -= h_ * a.solve(kinv_h.transpose() * y_);
    }
    const Vector alpha = llt.solve(resid);
    double value = -0.5 * resid.dot(alpha) - 0.5 * log_det(llt) - 0.5 * m * std::log(2.0 * std::numbers::pi);
    for (Index i = 0; i < static_cast<Index>(priors_.size()); ++i)
      if (priors_[i]) value += priors_[i]->log_pdf(k.lengthscales(i));

    if (grad) {
      grad->resize(parameter_count());
      // ∂/∂u = ½ tr((ααᵀ − K⁻¹) ∂K/∂u); the profiled mean contributes nothing
      // at its optimum.
      const Matrix w = alpha * alpha.transpose() - llt.solve(Matrix::Identity(m, m));
      (*grad)(0) = 0.5 * (w.array() * kf.array()).sum();
      const Matrix gfac = r2.unaryExpr([&](double v) { return k.amplitude * correlation_lengthscale_factor(k.family, v); });
      const Matrix wg = (w.array() * gfac.array()).matrix();
      for (Index i = 0; i < p; ++i) {
        double g = 0.5 * (wg.array() * sq_[i].array()).sum() / (k.lengthscales(i) * k.lengthscales(i));
        if (i < static_cast<Index>(priors_.size()) && priors_[i]) g += priors_[i]->dlog_pdf_dlog(k.lengthscales(i));
        (*grad)(1 + i) = g;
      }
      (*grad)(p + 1) = 0.5 * k.noise * w.trace();
    }
    return value;
  }

 private:
  Matrix x_;
  Vector y_;
  MeanFamily mean_;
  KernelFamily kernel_;
  LengthscalePriors priors_;
  Matrix h_;
  std::vector<Matrix> sq_;
};

/// A trained single-output GP with its cached factorization.
class GpComponent {
 public:
  GpComponent() = default;

  /// Factorizes the kernel matrix at fixed hyperparameters and profiles the
  /// mean coefficients.
  static GpComponent build(Matrix inputs, Vector targets, MeanFamily mean, KernelSpec kernel) {
    if (!kernel.valid()) throw ConfigError("GP hyperparameters must be strictly positive");
    if (inputs.rows() != targets.size()) throw ConfigError("GP targets and inputs disagree in length");
    if (kernel.lengthscales.size() != inputs.cols()) throw ConfigError("one lengthscale per input dimension required");
    GpComponent c;
    c.x_ = std::move(inputs);
    c.y_ = std::move(targets);
    c.mean_ = mean;
    c.kernel_ = std::move(kernel);
    c.factorize();
    return c;
  }

  const KernelSpec& kernel() const { return kernel_; }
  /// (K + λ²I)⁻¹(y − m(X)); the predictive mean is k(θ)ᵀα.
  const Vector& alpha() const { return alpha_; }
  MeanFamily mean_family() const { return mean_; }
  const Vector& coefficients() const { return beta_; }
  const Matrix& inputs() const { return x_; }
  const Vector& targets() const { return y_; }
  double jitter() const { return jitter_; }
  double log_marginal_likelihood() const { return log_ml_; }

  Vector kernel_column(const Vector& theta) const {
    const Index m = x_.rows();
    Vector ks(m);
    for (Index a = 0; a < m; ++a)
      ks(a) = kernel_.amplitude * correlation(kernel_.family, scaled_sq_distance(kernel_.lengthscales, x_.row(a).transpose(), theta));
    return ks;
  }

  double predict_mean(const Vector& theta) const {
    check(theta);
    double m = kernel_column(theta).dot(alpha_);
    if (beta_.size()) m += mean_basis(mean_, theta).dot(beta_);
    return m;
  }

  struct Prediction {
    double mean;
    double variance;
  };

  /// Predictive mean and variance of a noisy evaluation (includes λ²).
  Prediction predict(const Vector& theta) const {
    check(theta);
    const Vector ks = kernel_column(theta);
    double m = ks.dot(alpha_);
    if (beta_.size()) m += mean_basis(mean_, theta).dot(beta_);
    const Vector v = chol_.matrixL().solve(ks);
    const double var = kernel_.amplitude + kernel_.noise + jitter_ - v.squaredNorm();
    return {m, std::max(var, 0.0)};
  }

 private:
  void check(const Vector& theta) const {
    if (theta.size() != x_.cols()) throw ConfigError("GP input dimension mismatch");
  }

  void factorize() {
    const Index m = x_.rows();
    Matrix kmat(m, m);
    for (Index a = 0; a < m; ++a)
      for (Index b = 0; b <= a; ++b)
        kmat(a, b) = kmat(b, a) =
            kernel_.amplitude *
            correlation(kernel_.family, scaled_sq_distance(kernel_.lengthscales, x_.row(a).transpose(), x_.row(b).transpose()));
    kmat.diagonal().array() += kernel_.noise;
    const double scale = kmat.diagonal().mean();
    auto chol = try_cholesky(kmat, kGpJitterFirst * scale, kGpJitterLast * scale);
    if (!chol) throw NumericalError("GP kernel matrix is ill-conditioned beyond the jitter ladder");
    chol_ = std::move(chol->llt);
    jitter_ = chol->jitter;
    const Matrix h = mean_basis(mean_, x_);
    Vector resid = y_;
    if (h.cols() > 0) {
      const Matrix kinv_h = chol_.solve(h);
      Eigen::LDLT<Matrix> a(h.transpose() * kinv_h);
      beta_ = a.solve(kinv_h.transpose() * y_);
      resid -= h * beta_;
    } else {
      beta_.resize(0);
    }
    alpha_ = chol_.solve(resid);
    log_ml_ = -0.5 * resid.dot(alpha_) - 0.5 * log_det(chol_) - 0.5 * m * std::log(2.0 * std::numbers::pi);
  }

  Matrix x_;
  Vector y_;
  MeanFamily mean_ = MeanFamily::zero;
  KernelSpec kernel_;
  Eigen::LLT<Matrix> chol_;
  double jitter_ = 0.0;
  Vector beta_;
  Vector alpha_;
  double log_ml_ = 0.0;
};

struct GpFitOptions {
  int restarts = 8;
  int max_iterations = 200;
  double gradient_tolerance = 1e-6;
  std::uint64_t seed = 0;
};

struct HyperBox {
  Vector lower;
  Vector upper;
  double log_scale = 0.0;  // log of the residual second moment
};

/// Box for the log-hyperparameters, scaled by the data: the optimizer works
/// unconstrained with a quadratic penalty outside this box.
inline HyperBox hyperparameter_box(const Matrix& inputs, const Vector& targets, MeanFamily mean) {
  const Index p = inputs.cols();
  Vector resid = targets;
  if (mean == MeanFamily::linear) {
    const Matrix h = mean_basis(mean, inputs);
    resid -= h * h.colPivHouseholderQr().solve(targets);
  }
  double v = resid.squaredNorm() / std::max<Index>(1, resid.size());
  if (mean == MeanFamily::linear) v = std::max(v, 1e-12 * (targets.squaredNorm() / std::max<Index>(1, targets.size())));
  if (!(v > 0)) v = 1.0;
  const double lv = std::log(v);
  HyperBox box{Vector(p + 2), Vector(p + 2), lv};
  box.lower(0) = lv - 12.0;
  box.upper(0) = lv + 7.0;
  for (Index i = 0; i < p; ++i) {
    double range = inputs.col(i).maxCoeff() - inputs.col(i).minCoeff();
    if (!(range > 0)) range = 1.0;
    box.lower(1 + i) = std::log(range) - 7.0;
    box.upper(1 + i) = std::log(range) + 7.0;
  }
  box.lower(p + 1) = lv - 25.0;
  box.upper(p + 1) = lv + 2.0;
  return box;
}

/// Empirical-Bayes fit: maximizes the log marginal likelihood plus the log
/// lengthscale priors by multi-start BFGS over log-hyperparameters.
inline GpComponent fit_gp(const Matrix& inputs, const Vector& targets, MeanFamily mean, KernelFamily kernel,
                          const LengthscalePriors& priors = {}, const GpFitOptions& opt = {}) {
  const Index m = inputs.rows(), p = inputs.cols();
  if (m < p + 2) throw ConfigError("insufficient design: GP needs at least p+2 = " + std::to_string(p + 2) + " points, got " + std::to_string(m));
  if (!inputs.allFinite() || !targets.allFinite()) throw ConfigError("GP training data must be finite");
  if (opt.restarts < 1) throw ConfigError("at least one optimizer start is required");

  const MarginalLikelihood ml(inputs, targets, mean, kernel, priors);
  const HyperBox box = hyperparameter_box(inputs, targets, mean);
  constexpr double kPenalty = 100.0;
  const Objective objective = [&](const Vector& u, Vector* grad) {
    const double v = ml(u, grad);
    double pen = 0.0;
    for (Index i = 0; i < u.size(); ++i) {
      const double excess = u(i) < box.lower(i) ? u(i) - box.lower(i) : (u(i) > box.upper(i) ? u(i) - box.upper(i) : 0.0);
      pen += 0.5 * kPenalty * excess * excess;
      if (grad) (*grad)(i) = -(*grad)(i) + kPenalty * excess;
    }
    return -v + pen;
  };

  // Start 0 uses data-scaled lengthscales, start 1 the prior means; the rest
  // perturb start 0 by N(0, 1) in log space.
  Vector u0(p + 2);
  u0(0) = box.log_scale;
  for (Index i = 0; i < p; ++i) u0(1 + i) = 0.5 * (box.lower(1 + i) + box.upper(1 + i)) - std::log(2.0);
  u0(p + 1) = u0(0) + std::log(1e-2);
  std::vector<Vector> starts{u0};
  bool any_prior = false;
  Vector from_prior = u0;
  for (Index i = 0; i < p && i < static_cast<Index>(priors.size()); ++i)
    if (priors[i]) {
      from_prior(1 + i) = std::log(priors[i]->mean());
      any_prior = true;
    }
  if (any_prior && opt.restarts > 1) starts.push_back(from_prior);

  Rng rng = make_stream(opt.seed, {0x47'50'46'54});  // "GPFT"
  while (static_cast<int>(starts.size()) < opt.restarts) starts.push_back(u0 + standard_normal(p + 2, rng));

  Vector best_u;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < starts.size(); ++r) {
    const auto res = minimize_bfgs(objective, starts[r], opt.max_iterations, opt.gradient_tolerance);
    log().debug("GP start {}: objective {} after {} iterations", r, res.value, res.iterations);
    if (std::isfinite(res.value) && res.value < best) {
      best = res.value;
      best_u = res.x;
    }
  }
  if (!std::isfinite(best)) throw NumericalError("GP hyperparameter optimization failed from every start");
  return GpComponent::build(inputs, targets, mean, MarginalLikelihood::spec_from(kernel, best_u));
}

}  // namespace ces
