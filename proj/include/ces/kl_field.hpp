#pragma once

#include "ces/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace ces {

/// Truncated Karhunen-Loeve expansion of a log-normal field on [0,1]²:
///
///   log a(x; θ) = Σ_k θ_k √λ_k cos(π⟨ℓ_k, x⟩),   λ_ℓ = (π²|ℓ|² + τ²)^(−α).
///
/// Wave vectors ℓ ∈ Z² are taken from a half plane (ℓ and −ℓ give the same
/// cosine) and ordered so that λ_k is non-increasing; ties are broken by
/// (ℓ₁, ℓ₂) to keep the ordering deterministic.
class KLField {
 public:
  struct Mode {
    int l1;
    int l2;
    double eigenvalue;
  };

  KLField(Index size, double tau = 3.0, double alpha = 2.0) : tau_(tau), alpha_(alpha) {
    if (size < 1) throw ConfigError("KL truncation size must be positive");
    if (!(tau > 0) || !(alpha > 0)) throw ConfigError("KL decay parameters tau and alpha must be positive");
    int radius = 2;
    while (half_plane_count(radius) < size) radius *= 2;
    std::vector<Mode> all;
    for (int l1 = 0; l1 <= radius; ++l1)
      for (int l2 = -radius; l2 <= radius; ++l2) {
        if (l1 == 0 && l2 < 0) continue;
        all.push_back({l1, l2, eigenvalue(l1, l2)});
      }
    std::sort(all.begin(), all.end(), [](const Mode& a, const Mode& b) {
      const int na = a.l1 * a.l1 + a.l2 * a.l2, nb = b.l1 * b.l1 + b.l2 * b.l2;
      if (na != nb) return na < nb;
      if (a.l1 != b.l1) return a.l1 < b.l1;
      return a.l2 < b.l2;
    });
    modes_.assign(all.begin(), all.begin() + size);
  }

  Index size() const { return static_cast<Index>(modes_.size()); }
  double tau() const { return tau_; }
  double alpha() const { return alpha_; }
  const std::vector<Mode>& modes() const { return modes_; }

  double eigenvalue(int l1, int l2) const {
    const double pi2 = std::numbers::pi * std::numbers::pi;
    return std::pow(pi2 * (l1 * l1 + l2 * l2) + tau_ * tau_, -alpha_);
  }

  static double basis(const Mode& m, double x1, double x2) {
    return std::cos(std::numbers::pi * (m.l1 * x1 + m.l2 * x2));
  }

  double log_value(const Vector& theta, double x1, double x2) const {
    check(theta);
    double s = 0.0;
    for (Index k = 0; k < size(); ++k) s += theta(k) * std::sqrt(modes_[k].eigenvalue) * basis(modes_[k], x1, x2);
    return s;
  }

  /// Field values a(x) on the (n+1)×(n+1) nodes x = (i/n, j/n); entry (i, j).
  Matrix sample_grid(const Vector& theta, int n) const {
    check(theta);
    if (n < 2) throw ConfigError("grid resolution must be at least 2");
    Matrix log_a = Matrix::Zero(n + 1, n + 1);
    Vector c1(n + 1), s1(n + 1), c2(n + 1), s2(n + 1);
    for (Index k = 0; k < size(); ++k) {
      const auto& m = modes_[k];
      const double w = theta(k) * std::sqrt(m.eigenvalue);
      if (w == 0.0) continue;
      for (int i = 0; i <= n; ++i) {
        const double x = static_cast<double>(i) / n;
        c1(i) = std::cos(std::numbers::pi * m.l1 * x);
        s1(i) = std::sin(std::numbers::pi * m.l1 * x);
        c2(i) = std::cos(std::numbers::pi * m.l2 * x);
        s2(i) = std::sin(std::numbers::pi * m.l2 * x);
      }
      // cos(a + b) = cos a cos b − sin a sin b
      log_a.noalias() += w * (c1 * c2.transpose() - s1 * s2.transpose());
    }
    return log_a.array().exp().matrix();
  }

 private:
  static Index half_plane_count(int r) { return static_cast<Index>(r + 1) * (2 * r + 1) - r; }

  void check(const Vector& theta) const {
    if (theta.size() != size())
      throw ConfigError("KL field expects " + std::to_string(size()) + " coefficients, got " +
                        std::to_string(theta.size()));
    if (!theta.allFinite()) throw ConfigError("KL coefficients must be finite");
  }

  double tau_;
  double alpha_;
  std::vector<Mode> modes_;
};

}  // namespace ces
