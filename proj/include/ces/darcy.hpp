#pragma once

#include "ces/forward_model.hpp"
#include "ces/kl_field.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace ces {

using Point2 = std::array<double, 2>;

enum class DarcyPreconditioner { incomplete_cholesky, jacobi };

struct DarcySettings {
  int grid = 64;
  double tolerance = 1e-10;
  int max_iterations = 0;  // 0: solver default (2 × unknowns)
  DarcyPreconditioner preconditioner = DarcyPreconditioner::incomplete_cholesky;
};

/// Interior uniform lattice of `count` points, nx × ny with nx·ny = count and
/// nx, ny as close as possible; x₁ = i/(nx+1), x₂ = j/(ny+1).
inline std::vector<Point2> lattice_points(int count) {
  if (count < 1) throw ConfigError("observation count must be positive");
  int ny = static_cast<int>(std::sqrt(static_cast<double>(count)));
  while (count % ny != 0) --ny;
  const int nx = count / ny;
  std::vector<Point2> pts;
  for (int j = 1; j <= ny; ++j)
    for (int i = 1; i <= nx; ++i) pts.push_back({static_cast<double>(i) / (nx + 1), static_cast<double>(j) / (ny + 1)});
  return pts;
}

inline std::vector<Point2> random_points(int count, Rng& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<Point2> pts(count);
  for (auto& p : pts) p = {u(rng), u(rng)};
  return pts;
}

/// Pressure p solving −∇·(a∇p) = f on [0,1]², p = 0 on the boundary, with the
/// log-permeability given by a KL expansion. Observations are p at fixed points.
///
/// Discretization: 5-point finite differences on an n×n cell grid with nodal
/// permeability harmonically averaged onto cell faces; the SPD system is solved
/// with preconditioned conjugate gradients.
class DarcyModel final : public ForwardModel {
 public:
  using SparseMatrix = Eigen::SparseMatrix<double>;

  DarcyModel(KLField field, std::vector<Point2> observation_points, DarcySettings settings = {},
             std::function<double(double, double)> source = [](double, double) { return 1.0; })
      : field_(std::move(field)), points_(std::move(observation_points)), settings_(settings) {
    if (settings_.grid < 2) throw ConfigError("Darcy grid resolution must be at least 2");
    for (const auto& p : points_) check_point(p);
    const int n = settings_.grid;
    source_.resize(n + 1, n + 1);
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j <= n; ++j) source_(i, j) = source(static_cast<double>(i) / n, static_cast<double>(j) / n);
  }

  Index input_dim() const override { return field_.size(); }
  Index output_dim() const override { return static_cast<Index>(points_.size()); }
  int grid() const { return settings_.grid; }
  const KLField& field() const { return field_; }
  const std::vector<Point2>& observation_points() const { return points_; }
  const Matrix& source() const { return source_; }

  Evaluation evaluate(const Vector& theta, const Vector&) const override {
    check_input(theta);
    return {observe(solve(theta)), {}};
  }

  Matrix permeability(const Vector& theta) const { return field_.sample_grid(theta, settings_.grid); }

  Matrix solve(const Vector& theta) const {
    check_input(theta);
    return solve_with_permeability(permeability(theta));
  }

  /// Solves for nodal pressure given nodal permeability on the (n+1)² grid.
  Matrix solve_with_permeability(const Matrix& a) const {
    const int n = settings_.grid;
    if (a.rows() != n + 1 || a.cols() != n + 1) throw ConfigError("permeability grid has the wrong shape");
    if (!a.allFinite() || (a.array() <= 0.0).any()) throw NumericalError("permeability must be positive and finite");
    const int m = n - 1;
    Matrix p = Matrix::Zero(n + 1, n + 1);
    if (m < 1) return p;

    const SparseMatrix op = assemble(a);
    Vector rhs(m * m);
    for (int j = 1; j < n; ++j)
      for (int i = 1; i < n; ++i) rhs(unknown(i, j)) = source_(i, j);

    Vector x;
    double err = 0.0;
    Index iters = 0;
    bool ok = false;
    auto run = [&](auto& cg) {
      cg.setTolerance(settings_.tolerance);
      if (settings_.max_iterations > 0) cg.setMaxIterations(settings_.max_iterations);
      cg.compute(op);
      x = cg.solve(rhs);
      err = cg.error();
      iters = cg.iterations();
      ok = cg.info() == Eigen::Success;
    };
    if (settings_.preconditioner == DarcyPreconditioner::incomplete_cholesky) {
      Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper, Eigen::IncompleteCholesky<double>> cg;
      run(cg);
    } else {
      Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg;
      run(cg);
    }
    if (!ok || !x.allFinite())
      throw NumericalError("Darcy CG did not converge: relative residual " + std::to_string(err) + " after " +
                           std::to_string(iters) + " iterations");
    for (int j = 1; j < n; ++j)
      for (int i = 1; i < n; ++i) p(i, j) = x(unknown(i, j));
    return p;
  }

  /// Discrete operator for a given nodal permeability (interior unknowns only).
  SparseMatrix assemble(const Matrix& a) const {
    const int n = settings_.grid;
    const int m = n - 1;
    const double inv_h2 = static_cast<double>(n) * n;
    auto face = [&](int i0, int j0, int i1, int j1) {
      const double u = a(i0, j0), v = a(i1, j1);
      return 2.0 * u * v / (u + v);
    };
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(5 * m * m);
    for (int j = 1; j < n; ++j)
      for (int i = 1; i < n; ++i) {
        const int row = unknown(i, j);
        const std::array<std::array<int, 2>, 4> nbr{{{i + 1, j}, {i - 1, j}, {i, j + 1}, {i, j - 1}}};
        double diag = 0.0;
        for (const auto& [ni, nj] : nbr) {
          const double c = face(i, j, ni, nj) * inv_h2;
          diag += c;
          if (ni >= 1 && ni < n && nj >= 1 && nj < n) t.emplace_back(row, unknown(ni, nj), -c);
        }
        t.emplace_back(row, row, diag);
      }
    SparseMatrix op(m * m, m * m);
    op.setFromTriplets(t.begin(), t.end());
    return op;
  }

  /// Bilinear interpolation of nodal pressure at the observation points.
  Vector observe(const Matrix& pressure) const {
    Vector out(output_dim());
    for (Index k = 0; k < output_dim(); ++k) out(k) = interpolate(pressure, points_[k]);
    return out;
  }

  static double interpolate(const Matrix& nodal, const Point2& x) {
    check_point(x);
    const int n = static_cast<int>(nodal.rows()) - 1;
    const double u = x[0] * n, v = x[1] * n;
    const int i = std::min(static_cast<int>(std::floor(u)), n - 1);
    const int j = std::min(static_cast<int>(std::floor(v)), n - 1);
    const double fu = u - i, fv = v - j;
    return (1 - fu) * (1 - fv) * nodal(i, j) + fu * (1 - fv) * nodal(i + 1, j) + (1 - fu) * fv * nodal(i, j + 1) +
           fu * fv * nodal(i + 1, j + 1);
  }

 private:
  static void check_point(const Point2& p) {
    if (!(p[0] >= 0.0 && p[0] <= 1.0 && p[1] >= 0.0 && p[1] <= 1.0))
      throw ConfigError("observation point (" + std::to_string(p[0]) + ", " + std::to_string(p[1]) +
                        ") lies outside [0,1]^2");
  }

  int unknown(int i, int j) const { return (i - 1) + (j - 1) * (settings_.grid - 1); }

  KLField field_;
  std::vector<Point2> points_;
  DarcySettings settings_;
  Matrix source_;
};

}  // namespace ces
