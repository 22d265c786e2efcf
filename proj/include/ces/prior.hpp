#pragma once

#include "ces/core.hpp"
#include "ces/linalg.hpp"

#include <string>

namespace ces {

/// Gaussian prior N(mean, covariance) on the unknown parameters.
class GaussianPrior {
 public:
  GaussianPrior() = default;
  GaussianPrior(Vector mean, Matrix covariance) : mean_(std::move(mean)), cov_(std::move(covariance)) {
    if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size())
      throw ConfigError("prior covariance must be " + std::to_string(mean_.size()) + "x" +
                        std::to_string(mean_.size()));
    if (!cov_.isApprox(cov_.transpose(), 1e-12)) throw ConfigError("prior covariance must be symmetric");
    chol_.compute(cov_);
    if (chol_.info() != Eigen::Success) throw ConfigError("prior covariance is not positive definite");
    sqrt_ = chol_.matrixL();
  }

  static GaussianPrior diagonal(Vector mean, const Vector& variances) {
    return GaussianPrior(std::move(mean), variances.asDiagonal().toDenseMatrix());
  }

  Index dim() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return cov_; }
  const Eigen::LLT<Matrix>& cholesky() const { return chol_; }

  /// ½‖θ − m‖²_Γ
  double half_sq_mahalanobis(const Vector& theta) const { return 0.5 * weighted_sq_norm(chol_, theta - mean_); }

  /// Γ⁻¹ a
  Vector precision_times(const Vector& a) const { return chol_.solve(a); }
  Matrix precision_times(const Matrix& a) const { return chol_.solve(a); }
  Matrix precision() const { return chol_.solve(Matrix::Identity(dim(), dim())); }

  Vector sample(Rng& rng) const { return mean_ + sqrt_ * standard_normal(dim(), rng); }

 private:
  Vector mean_;
  Matrix cov_;
  Eigen::LLT<Matrix> chol_;
  Matrix sqrt_;
};

}  // namespace ces
