#pragma once

#include "ces/forward_model.hpp"
#include "ces/linalg.hpp"
#include "ces/prior.hpp"

namespace ces {

/// G(θ) = Gθ with a fixed d×p matrix.
class LinearModel final : public ForwardModel {
 public:
  explicit LinearModel(Matrix g) : g_(std::move(g)) {
    if (g_.size() == 0) throw ConfigError("linear model matrix must be non-empty");
  }

  /// Rows drawn i.i.d. from N(0, row_cov).
  static LinearModel random(Index rows, const Matrix& row_cov, Rng& rng) {
    const Matrix l = sqrt_factor(row_cov, "linear model row covariance");
    Matrix g(rows, row_cov.rows());
    for (Index i = 0; i < rows; ++i) g.row(i) = (l * standard_normal(row_cov.rows(), rng)).transpose();
    return LinearModel(std::move(g));
  }

  /// Row covariance with unit variances and correlation rho (p = 2).
  static Matrix correlated_rows(double rho) {
    Matrix s(2, 2);
    s << 1.0, rho, rho, 1.0;
    return s;
  }

  Index input_dim() const override { return g_.cols(); }
  Index output_dim() const override { return g_.rows(); }
  const Matrix& matrix() const { return g_; }

  Evaluation evaluate(const Vector& theta, const Vector&) const override {
    check_input(theta);
    return {g_ * theta, {}};
  }

 private:
  Matrix g_;
};

struct GaussianPosterior {
  Vector mean;
  Matrix covariance;
};

/// Closed-form posterior of the linear-Gaussian problem:
/// Σ⁻¹ = GᵀΓ⁻¹G + Γθ⁻¹, m = Σ(GᵀΓ⁻¹y + Γθ⁻¹mθ).
inline GaussianPosterior linear_gaussian_posterior(const Matrix& g, const Vector& y, const Matrix& noise_cov,
                                                   const GaussianPrior& prior) {
  Eigen::LLT<Matrix> noise(noise_cov);
  if (noise.info() != Eigen::Success) throw ConfigError("noise covariance is not positive definite");
  const Matrix precision = g.transpose() * noise.solve(g) + prior.precision();
  const Matrix cov = symmetrize(precision.inverse());
  const Vector mean = cov * (g.transpose() * noise.solve(y) + prior.precision_times(prior.mean()));
  return {mean, cov};
}

}  // namespace ces
