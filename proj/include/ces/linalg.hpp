#pragma once

#include "ces/core.hpp"

#include <cmath>
#include <optional>
#include <string>

namespace ces {

/// Cholesky factor of a (nearly) SPD matrix. Retries with a diagonal jitter
/// that grows by 10x from `first` to `last` when plain factorization fails.
struct JitteredCholesky {
  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;
};

inline std::optional<JitteredCholesky> try_cholesky(const Matrix& a, double first = 1e-12, double last = 1e-6) {
  auto attempt = [&](double jitter) -> std::optional<JitteredCholesky> {
    Matrix m = a;
    if (jitter > 0) m.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) return std::nullopt;
    const auto diag = llt.matrixLLT().diagonal();
    if (!diag.allFinite() || (diag.array() <= 0.0).any()) return std::nullopt;
    return JitteredCholesky{std::move(llt), jitter};
  };
  if (auto ok = attempt(0.0)) return ok;
  for (double j = first; j <= last * (1 + 1e-12); j *= 10.0)
    if (auto ok = attempt(j)) return ok;
  return std::nullopt;
}

inline JitteredCholesky cholesky_or_throw(const Matrix& a, const std::string& what, double first = 1e-12,
                                          double last = 1e-6) {
  if (!a.allFinite()) throw NumericalError(what + ": matrix has non-finite entries");
  auto c = try_cholesky(a, first, last);
  if (!c) throw NumericalError(what + ": Cholesky failed after jitter escalation to " + std::to_string(last));
  return std::move(*c);
}

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// ‖r‖²_A = rᵀ A⁻¹ r given the Cholesky factor of A.
inline double weighted_sq_norm(const Eigen::LLT<Matrix>& chol, const Vector& r) {
  Vector w = chol.matrixL().solve(r);
  return w.squaredNorm();
}

inline double log_det(const Eigen::LLT<Matrix>& chol) {
  return 2.0 * chol.matrixLLT().diagonal().array().log().sum();
}

/// Lower-triangular square root used to draw N(0, a) vectors.
inline Matrix sqrt_factor(const Matrix& a, const std::string& what, double first = 1e-12, double last = 1e-6) {
  return cholesky_or_throw(a, what, first, last).llt.matrixL();
}

}  // namespace ces
