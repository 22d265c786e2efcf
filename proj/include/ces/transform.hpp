#pragma once

// Output changes of variables that make per-output GP emulation sensible:
// diagonalization of the observation-noise covariance, or PCA of the design.

#include "ces/core.hpp"
#include "ces/linalg.hpp"

#include <string>

namespace ces {

enum class TransformKind { identity, time_diag, svd };

inline std::string to_string(TransformKind k) {
  switch (k) {
    case TransformKind::identity: return "identity";
    case TransformKind::time_diag: return "time-diag";
    case TransformKind::svd: return "svd";
  }
  return "?";
}

/// Affine map g ↦ t = W (g − offset) with
///   identity:  W = I
///   time-diag: W = Qᵀ where Γ_obs = Q diag(scales) Qᵀ (scales descending)
///   svd:       W = D⁻¹ Vᵀ where G − 1 m_Gᵀ = Ĝ D Vᵀ (D = diag(scales), descending)
struct OutputTransform {
  TransformKind kind = TransformKind::identity;
  Matrix basis;   // Q or V, d × d
  Vector scales;  // Γ̃_obs diagonal or singular values D
  Vector offset;  // m_G for svd, zero otherwise

  Index dim() const { return offset.size(); }

  static OutputTransform identity(Index d) {
    return {TransformKind::identity, Matrix::Identity(d, d), Vector::Ones(d), Vector::Zero(d)};
  }

  /// Linear part W.
  Matrix linear() const {
    switch (kind) {
      case TransformKind::identity: return Matrix::Identity(dim(), dim());
      case TransformKind::time_diag: return basis.transpose();
      case TransformKind::svd: return scales.cwiseInverse().asDiagonal() * basis.transpose();
    }
    return {};
  }

  Vector forward(const Vector& g) const {
    if (g.size() != dim()) throw ConfigError("output transform dimension mismatch");
    switch (kind) {
      case TransformKind::identity: return g;
      case TransformKind::time_diag: return basis.transpose() * g;
      case TransformKind::svd: return scales.cwiseInverse().asDiagonal() * (basis.transpose() * (g - offset));
    }
    return {};
  }

  /// Applies forward() to every row of an M × d design.
  Matrix forward_rows(const Matrix& rows) const {
    Matrix out(rows.rows(), rows.cols());
    for (Index i = 0; i < rows.rows(); ++i) out.row(i) = forward(rows.row(i).transpose()).transpose();
    return out;
  }

  /// Mean in original coordinates: Q t or V D t + m_G.
  Vector inverse_mean(const Vector& t) const {
    switch (kind) {
      case TransformKind::identity: return t;
      case TransformKind::time_diag: return basis * t;
      case TransformKind::svd: return basis * (scales.asDiagonal() * t) + offset;
    }
    return {};
  }

  /// Covariance in original coordinates of a diagonal transformed covariance:
  /// Q diag(v) Qᵀ or V D diag(v) D Vᵀ.
  Matrix inverse_cov(const Vector& variances) const {
    switch (kind) {
      case TransformKind::identity: return variances.asDiagonal();
      case TransformKind::time_diag: return symmetrize(basis * variances.asDiagonal() * basis.transpose());
      case TransformKind::svd: {
        const Matrix vd = basis * scales.asDiagonal();
        return symmetrize(vd * variances.asDiagonal() * vd.transpose());
      }
    }
    return {};
  }
};

/// Eigendecomposition Γ_obs = Q Γ̃ Qᵀ with eigenvalues in descending order.
inline OutputTransform build_time_diag_transform(const Matrix& gamma_obs) {
  if (gamma_obs.rows() != gamma_obs.cols() || gamma_obs.rows() == 0) throw ConfigError("Γ_obs must be square");
  if (!gamma_obs.allFinite()) throw NumericalError("Γ_obs has non-finite entries");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(gamma_obs));
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of Γ_obs failed");
  const Index d = gamma_obs.rows();
  OutputTransform t;
  t.kind = TransformKind::time_diag;
  t.basis = eig.eigenvectors().rowwise().reverse();
  t.scales = eig.eigenvalues().reverse();
  t.offset = Vector::Zero(d);
  if ((t.scales.array() <= 0).any()) throw NumericalError("Γ_obs is not positive definite");
  return t;
}

/// Thin SVD of the centered M × d design, keeping all d components.
inline OutputTransform build_svd_transform(const Matrix& design) {
  const Index m = design.rows(), d = design.cols();
  if (m < 2) throw ConfigError("svd transform needs at least two design rows");
  if (!design.allFinite()) throw NumericalError("design has non-finite entries");
  OutputTransform t;
  t.kind = TransformKind::svd;
  t.offset = design.colwise().mean().transpose();
  const Matrix centered = design.rowwise() - t.offset.transpose();
  Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinU | Eigen::ComputeFullV);
  const Vector s = svd.singularValues();
  if (s.size() < d || !(s(d - 1) > 1e-12 * s(0)))
    throw ConfigError("svd transform needs a design of full output rank (M > d and non-degenerate outputs)");
  t.basis = svd.matrixV();
  t.scales = s.head(d);
  return t;
}

inline OutputTransform build_transform(TransformKind kind, const Matrix& design, const Matrix& gamma_obs) {
  switch (kind) {
    case TransformKind::identity: return OutputTransform::identity(design.cols());
    case TransformKind::time_diag: return build_time_diag_transform(gamma_obs);
    case TransformKind::svd: return build_svd_transform(design);
  }
  throw ConfigError("unknown transform");
}

}  // namespace ces
