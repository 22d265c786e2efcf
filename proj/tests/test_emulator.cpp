#include "ces/dynamics.hpp"
#include "ces/emulator.hpp"
#include "ces/linear_model.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

namespace ces {
namespace {

Matrix gaussian_rows(Index m, Index p, std::uint64_t seed) {
  Rng rng = make_stream(seed);
  Matrix x(m, p);
  for (Index i = 0; i < m; ++i) x.row(i) = standard_normal(p, rng).transpose();
  return x;
}

Matrix smooth_outputs(const Matrix& x) {
  Matrix y(x.rows(), 3);
  for (Index i = 0; i < x.rows(); ++i) {
    y(i, 0) = std::sin(x(i, 0)) + x(i, 1);
    y(i, 1) = 2.0 * y(i, 0) + 0.3 * std::cos(x(i, 1));
    y(i, 2) = x(i, 0) * x(i, 1);
  }
  return y;
}

TEST(TimeDiag, DiagonalNoiseGivesSignedPermutation) {
  const Vector diag = (Vector(4) << 0.5, 3.0, 0.1, 2.0).finished();
  const OutputTransform t = build_time_diag_transform(diag.asDiagonal());
  EXPECT_EQ(t.scales, (Vector(4) << 3.0, 2.0, 0.5, 0.1).finished());
  EXPECT_LT((t.basis.transpose() * t.basis - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-14);
  for (Index j = 0; j < 4; ++j) {
    EXPECT_EQ((t.basis.col(j).array().abs() == 1.0).count(), 1);
    EXPECT_EQ((t.basis.col(j).array() == 0.0).count(), 3);
  }
}

TEST(TimeDiag, TransformedNoiseIsDiagonal) {
  const TimeAveragedModel<Lorenz63> m(Lorenz63{}, {0.01, 30.0, 10.0});
  const Vector theta = (Vector(2) << std::log(28.0), std::log(8.0 / 3.0)).finished();
  const auto obs = estimate_obs_covariance(m, theta, 360.0, m.initial_carry());
  const OutputTransform t = build_time_diag_transform(obs.covariance);
  const Matrix w = t.linear();
  const Matrix tilde = w * obs.covariance * w.transpose();
  const double scale = obs.covariance.diagonal().maxCoeff();
  Matrix off = tilde;
  off.diagonal().setZero();
  EXPECT_LT(off.cwiseAbs().maxCoeff(), 1e-10 * scale);
  EXPECT_LT((tilde.diagonal() - t.scales).cwiseAbs().maxCoeff(), 1e-10 * scale);
  for (Index i = 1; i < t.scales.size(); ++i) EXPECT_GE(t.scales(i - 1), t.scales(i));
}

TEST(Svd, RoundTripAndOrthonormalBasis) {
  const Matrix y = smooth_outputs(gaussian_rows(20, 2, 1));
  const OutputTransform t = build_svd_transform(y);
  EXPECT_LT((t.basis.transpose() * t.basis - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
  for (Index i = 0; i < y.rows(); ++i) {
    const Vector g = y.row(i).transpose();
    EXPECT_LT((t.inverse_mean(t.forward(g)) - g).cwiseAbs().maxCoeff(), 1e-10);
  }
  // Transformed design has identity Gram matrix.
  const Matrix z = t.forward_rows(y);
  EXPECT_LT((z.transpose() * z - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Svd, RankDeficientDesignIsRejected) {
  Matrix y = smooth_outputs(gaussian_rows(20, 2, 2));
  y.col(2) = 2.0 * y.col(0);
  EXPECT_THROW(build_svd_transform(y), ConfigError);
  EXPECT_THROW(build_svd_transform(y.topRows(1)), ConfigError);
}

TEST(Emulator, SingleOutputIdentityEqualsScalarGp) {
  const Matrix x = gaussian_rows(15, 2, 3);
  const Matrix y = smooth_outputs(x).col(0);
  EmulatorSettings s;
  s.fit.seed = 17;
  const GpEmulator em = train_emulator(x, y, s);
  GpFitOptions opt;
  opt.seed = component_seed(17, 0);
  const GpComponent gp = fit_gp(x, y.col(0), s.mean, s.kernel, {}, opt);
  const Matrix probe = gaussian_rows(10, 2, 4);
  for (Index i = 0; i < probe.rows(); ++i) {
    const Vector th = probe.row(i).transpose();
    const auto a = em.predict(th);
    const auto b = gp.predict(th);
    EXPECT_EQ(a.mean(0), b.mean);
    EXPECT_EQ(a.covariance(0, 0), b.variance);
  }
}

TEST(Emulator, DesignPermutationInvariance) {
  const Matrix x = gaussian_rows(25, 2, 5);
  const Matrix y = smooth_outputs(x);
  std::vector<Index> perm(25);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[3], perm[11]);
  Matrix xp(25, 2), yp(25, 3);
  for (Index i = 0; i < 25; ++i) {
    xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    yp.row(i) = y.row(perm[static_cast<std::size_t>(i)]);
  }
  EmulatorSettings s;
  s.transform = TransformKind::svd;
  s.mean = MeanFamily::linear;
  const GpEmulator a = train_emulator(x, y, s);

  // Fixed hyperparameters: only summation order differs.
  std::vector<KernelSpec> kernels;
  for (const auto& c : a.components()) kernels.push_back(c.kernel());
  const GpEmulator b = rebuild_emulator(xp, yp, build_svd_transform(yp), s.mean, kernels);
  const GpEmulator c = train_emulator(xp, yp, s);
  double alpha_scale = 1.0;
  for (const auto& comp : a.components()) alpha_scale = std::max(alpha_scale, comp.alpha().cwiseAbs().sum());
  const Matrix probe = gaussian_rows(10, 2, 6);
  for (Index i = 0; i < probe.rows(); ++i) {
    const Vector th = probe.row(i).transpose();
    const auto pa = a.predict(th), pb = b.predict(th), pc = c.predict(th);
    // K⁻¹y is large for these smooth outputs, so summation order shows at ~1e-7.
    EXPECT_LT((pa.mean - pb.mean).cwiseAbs().maxCoeff(), 1e-12 * alpha_scale);
    EXPECT_LT((pa.covariance - pb.covariance).cwiseAbs().maxCoeff(), 1e-8);
    // Refitting also recovers the same optimum up to optimizer tolerance.
    EXPECT_LT((pa.mean - pc.mean).cwiseAbs().maxCoeff(), 1e-4 * (1.0 + pa.mean.cwiseAbs().maxCoeff()));
  }
}

TEST(Emulator, SvdCovarianceIsCongruentToComponentVariances) {
  const Matrix x = gaussian_rows(20, 2, 7);
  const Matrix y = smooth_outputs(x);
  EmulatorSettings s;
  s.transform = TransformKind::svd;
  const GpEmulator em = train_emulator(x, y, s);
  const OutputTransform& t = em.transform();
  const Vector th = (Vector(2) << 0.3, -0.8).finished();
  Vector var(3), mean(3);
  for (Index l = 0; l < 3; ++l) {
    const auto r = em.components()[static_cast<std::size_t>(l)].predict(th);
    var(l) = r.variance;
    mean(l) = r.mean;
  }
  const Matrix vd = t.basis * t.scales.asDiagonal();
  const auto pr = em.predict(th);
  EXPECT_LT((pr.covariance - vd * var.asDiagonal() * vd.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((pr.mean - (vd * mean + t.offset)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((pr.covariance - pr.covariance.transpose()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Emulator, IdentityTransformGivesDiagonalCovariance) {
  const Matrix x = gaussian_rows(20, 2, 8);
  const GpEmulator em = train_emulator(x, smooth_outputs(x), EmulatorSettings{});
  const auto pr = em.predict((Vector(2) << 0.1, 0.2).finished());
  Matrix off = pr.covariance;
  off.diagonal().setZero();
  EXPECT_EQ(off.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE((pr.covariance.diagonal().array() >= 0).all());
}

TEST(Emulator, TracksLinearModelAlongASlice) {
  Rng rng = make_stream(9);
  const LinearModel model = LinearModel::random(4, LinearModel::correlated_rows(0.5), rng);
  const Matrix x = gaussian_rows(40, 2, 10);
  Matrix y(40, 4);
  for (Index i = 0; i < 40; ++i) y.row(i) = model(x.row(i).transpose()).transpose();
  // Four outputs of a rank-2 map: svd would reject the design.
  EmulatorSettings s;
  s.transform = TransformKind::identity;
  const GpEmulator em = train_emulator(x, y, s);
  for (int k = 0; k <= 20; ++k) {
    const Vector th = (Vector(2) << -1.0 + 0.1 * k, 0.5).finished();
    const auto pr = em.predict(th);
    const Vector truth = model(th);
    for (Index l = 0; l < 4; ++l)
      EXPECT_LE(std::abs(pr.mean(l) - truth(l)), 2.0 * std::sqrt(pr.covariance(l, l)) + 1e-6) << "slice " << k;
  }
}

TEST(Emulator, FitIsIndependentOfWorkerCount) {
  const Matrix x = gaussian_rows(20, 2, 11);
  const Matrix y = smooth_outputs(x);
  EmulatorSettings s;
  s.workers = 1;
  const GpEmulator a = train_emulator(x, y, s);
  s.workers = 3;
  const GpEmulator b = train_emulator(x, y, s);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(a.components()[l].kernel().lengthscales, b.components()[l].kernel().lengthscales);
}

TEST(Emulator, RejectsInvalidInput) {
  const Matrix x = gaussian_rows(20, 2, 12);
  const Matrix y = smooth_outputs(x);
  EXPECT_THROW(train_emulator(x.topRows(3), y.topRows(3), EmulatorSettings{}), ConfigError);
  EXPECT_THROW(train_emulator(x, y.topRows(10), EmulatorSettings{}), ConfigError);
  EmulatorSettings td;
  td.transform = TransformKind::time_diag;
  EXPECT_THROW(train_emulator(x, y, td, {}, Matrix::Identity(2, 2)), ConfigError);
  const GpEmulator em = train_emulator(x, y, EmulatorSettings{});
  EXPECT_THROW(em.predict(Vector::Zero(3)), ConfigError);
}

}  // namespace
}  // namespace ces
