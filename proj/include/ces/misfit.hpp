#pragma once

// Negative log-likelihood functionals Φ(θ) built on an emulator or directly on
// the forward model.

#include "ces/emulator.hpp"
#include "ces/forward_model.hpp"
#include "ces/linalg.hpp"

#include <cmath>
#include <memory>
#include <string>

namespace ces {

enum class MisfitKind { phi_m, phi_gp, phi_gp_combined, phi_T_direct };

inline std::string to_string(MisfitKind k) {
  switch (k) {
    case MisfitKind::phi_m: return "phi_m";
    case MisfitKind::phi_gp: return "phi_gp";
    case MisfitKind::phi_gp_combined: return "phi_gp_combined";
    case MisfitKind::phi_T_direct: return "phi_T_direct";
  }
  return "?";
}

/// Evaluation rules, with r = y − m(θ):
///   phi_m            ½‖r‖²_Γ
///   phi_gp           ½‖r‖²_{Γ_GP(θ)} + ½ log det Γ_GP(θ)
///   phi_gp_combined  ½‖r‖²_{Γ_GP(θ)+Γ} + ½ log det(Γ_GP(θ)+Γ)
///   phi_T_direct     ½‖y − G(θ)‖²_Γ
/// Emulator-based rules are computed in the emulator's transformed
/// coordinates; log-determinants are corrected by the Jacobian of the
/// transform so every value equals its original-coordinate counterpart.
class Misfit {
 public:
  static Misfit emulated(MisfitKind kind, std::shared_ptr<const GpEmulator> emulator, const Vector& y,
                         const Matrix& noise_cov) {
    if (kind == MisfitKind::phi_T_direct) throw ConfigError("phi_T_direct needs a forward model, not an emulator");
    if (!emulator) throw ConfigError("emulator-based misfit needs an emulator");
    check_dims(emulator->output_dim(), y, noise_cov);
    Misfit f;
    f.kind_ = kind;
    f.y_ = y;
    f.noise_ = noise_cov;
    f.emulator_ = std::move(emulator);
    const OutputTransform& t = f.emulator_->transform();
    const Matrix w = t.linear();
    f.y_t_ = t.forward(y);
    f.noise_t_ = symmetrize(w * noise_cov * w.transpose());
    f.noise_t_chol_ = cholesky_or_throw(f.noise_t_, "transformed noise covariance").llt;
    f.log_det_correction_ = -2.0 * std::log(std::abs(w.determinant()));
    return f;
  }

  static Misfit direct(ForwardModelPtr model, const Vector& y, const Matrix& noise_cov) {
    if (!model) throw ConfigError("phi_T_direct needs a forward model");
    check_dims(model->output_dim(), y, noise_cov);
    Misfit f;
    f.kind_ = MisfitKind::phi_T_direct;
    f.y_ = y;
    f.noise_ = noise_cov;
    f.model_ = std::move(model);
    f.noise_t_ = noise_cov;
    f.noise_t_chol_ = cholesky_or_throw(noise_cov, "noise covariance").llt;
    return f;
  }

  MisfitKind kind() const { return kind_; }
  const Vector& data() const { return y_; }
  const Matrix& noise_cov() const { return noise_; }
  const std::shared_ptr<const GpEmulator>& emulator() const { return emulator_; }
  const ForwardModelPtr& model() const { return model_; }
  /// ỹ: data in the emulator's output coordinates.
  const Vector& transformed_data() const { return y_t_; }

  double operator()(const Vector& theta) const {
    if (!theta.allFinite()) throw NumericalError("misfit evaluated at a non-finite parameter");
    switch (kind_) {
      case MisfitKind::phi_T_direct: {
        const Vector g = (*model_)(theta);
        if (!g.allFinite()) throw NumericalError("forward model returned a non-finite output");
        return 0.5 * weighted_sq_norm(noise_t_chol_, y_ - g);
      }
      case MisfitKind::phi_m:
        return 0.5 * weighted_sq_norm(noise_t_chol_, y_t_ - emulator_->predict_mean_transformed(theta));
      case MisfitKind::phi_gp: {
        const auto p = emulator_->predict_transformed(theta);
        if ((p.variance.array() <= 0).any()) throw NumericalError("emulator variance is not positive");
        const Vector r = y_t_ - p.mean;
        return 0.5 * (r.array().square() / p.variance.array()).sum() +
               0.5 * (p.variance.array().log().sum() + log_det_correction_);
      }
      case MisfitKind::phi_gp_combined: {
        const auto p = emulator_->predict_transformed(theta);
        Matrix cov = noise_t_;
        cov.diagonal() += p.variance;
        const auto chol = cholesky_or_throw(cov, "combined misfit covariance");
        const Vector r = y_t_ - p.mean;
        return 0.5 * weighted_sq_norm(chol.llt, r) + 0.5 * (log_det(chol.llt) + log_det_correction_);
      }
    }
    throw ConfigError("unknown misfit kind");
  }

 private:
  static void check_dims(Index d, const Vector& y, const Matrix& noise_cov) {
    if (y.size() != d)
      throw ConfigError("data has length " + std::to_string(y.size()) + " but outputs have dimension " +
                        std::to_string(d));
    if (noise_cov.rows() != d || noise_cov.cols() != d)
      throw ConfigError("noise covariance must be " + std::to_string(d) + "x" + std::to_string(d));
  }

  MisfitKind kind_ = MisfitKind::phi_m;
  Vector y_;
  Matrix noise_;
  std::shared_ptr<const GpEmulator> emulator_;
  ForwardModelPtr model_;
  Vector y_t_;
  Matrix noise_t_;
  Eigen::LLT<Matrix> noise_t_chol_;
  double log_det_correction_ = 0.0;  // log det(W⁻¹ W⁻ᵀ)
};

}  // namespace ces
