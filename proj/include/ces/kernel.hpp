#pragma once

#include "ces/core.hpp"

#include <cmath>
#include <string>

namespace ces {

enum class KernelFamily { squared_exponential, matern52 };

inline std::string to_string(KernelFamily f) {
  return f == KernelFamily::squared_exponential ? "squared-exponential" : "matern52";
}

/// Stationary anisotropic kernel
///   k(θ, θ') = σ² ρ(‖θ − θ'‖_D) + λ² δ(θ, θ'),   ‖a‖²_D = Σ a_i² / ℓ_i²,
/// with ρ(r) = exp(−r²/2) (squared exponential) or (1 + √5 r + 5r²/3) e^{−√5 r}
/// (Matérn 5/2).
struct KernelSpec {
  KernelFamily family = KernelFamily::squared_exponential;
  double amplitude = 1.0;  // σ²
  Vector lengthscales;     // ℓ_i
  double noise = 0.0;      // λ²

  bool valid() const {
    return amplitude > 0 && noise >= 0 && lengthscales.size() > 0 && (lengthscales.array() > 0).all();
  }
};

/// ρ as a function of the squared scaled distance.
inline double correlation(KernelFamily f, double r2) {
  if (f == KernelFamily::squared_exponential) return std::exp(-0.5 * r2);
  const double r = std::sqrt(r2);
  const double s5r = std::sqrt(5.0) * r;
  return (1.0 + s5r + 5.0 * r2 / 3.0) * std::exp(-s5r);
}

/// g such that ∂ρ/∂log ℓ_i = g(r²) · (θ_i − θ'_i)² / ℓ_i².
inline double correlation_lengthscale_factor(KernelFamily f, double r2) {
  if (f == KernelFamily::squared_exponential) return std::exp(-0.5 * r2);
  const double s5r = std::sqrt(5.0 * r2);
  return (5.0 / 3.0) * (1.0 + s5r) * std::exp(-s5r);
}

inline double scaled_sq_distance(const Vector& lengthscales, const Eigen::Ref<const Vector>& a,
                                 const Eigen::Ref<const Vector>& b) {
  return ((a - b).array() / lengthscales.array()).square().sum();
}

inline double kernel_eval(const KernelSpec& k, const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  if (a.size() != k.lengthscales.size() || b.size() != k.lengthscales.size())
    throw ConfigError("kernel input dimension mismatch");
  const double r2 = scaled_sq_distance(k.lengthscales, a, b);
  double v = k.amplitude * correlation(k.family, r2);
  if ((a.array() == b.array()).all()) v += k.noise;
  return v;
}

}  // namespace ces
