#include "ces/calibration.hpp"
#include "ces/linear_model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <memory>

namespace ces {
namespace {

Ensemble make_ensemble(const Matrix& particles, const ForwardModel& model) {
  Ensemble e;
  e.particles = particles;
  e.outputs.resize(model.output_dim(), particles.cols());
  for (Index j = 0; j < particles.cols(); ++j) e.outputs.col(j) = model(particles.col(j));
  return e;
}

struct LinearFixture {
  std::shared_ptr<LinearModel> model;
  InverseProblem problem;
  GaussianPrior prior;

  explicit LinearFixture(std::uint64_t seed = 1, Index d = 10) {
    Rng rng = make_stream(seed);
    model = std::make_shared<LinearModel>(LinearModel::random(d, LinearModel::correlated_rows(-0.9), rng));
    problem.model = model;
    problem.noise_cov = 0.01 * Matrix::Identity(d, d);
    problem.data = (*model)((Vector(2) << -1.0, 2.0).finished()) + 0.1 * standard_normal(d, rng);
    prior = GaussianPrior(Vector::Zero(2), Matrix::Identity(2, 2));
  }
};

TEST(EnsembleStats, SingleParticle) {
  Ensemble e;
  e.particles = (Matrix(2, 1) << 3.0, 4.0).finished();
  e.outputs = (Matrix(1, 1) << 7.0).finished();
  const auto m = ensemble_mean(e);
  EXPECT_EQ(m.theta, e.particles.col(0));
  EXPECT_EQ(m.output(0), 7.0);
}

TEST(EnsembleStats, MidpointOfTwoParticles) {
  Ensemble e;
  e.particles = (Matrix(2, 2) << 0.0, 2.0, 0.0, 4.0).finished();
  const auto m = ensemble_mean(e);
  EXPECT_DOUBLE_EQ(m.theta(0), 1.0);
  EXPECT_DOUBLE_EQ(m.theta(1), 2.0);
}

TEST(EnsembleStats, MeanMatchesDirectSummation) {
  Rng rng = make_stream(4);
  Ensemble e;
  e.particles.resize(3, 5);
  for (Index j = 0; j < 5; ++j) e.particles.col(j) = standard_normal(3, rng);
  const auto m = ensemble_mean(e);
  for (Index i = 0; i < 3; ++i) {
    double s = 0.0;
    for (Index j = 0; j < 5; ++j) s += e.particles(i, j);
    EXPECT_NEAR(m.theta(i), s / 5.0, 1e-15);
  }
}

TEST(EnsembleStats, CovarianceExamples) {
  const Matrix same = Matrix::Constant(2, 4, 1.5);
  EXPECT_EQ(ensemble_cov(same), Matrix::Zero(2, 2));
  const Matrix pm = (Matrix(2, 2) << 1.0, -1.0, 0.0, 0.0).finished();
  const Matrix expected = (Matrix(2, 2) << 1.0, 0.0, 0.0, 0.0).finished();
  EXPECT_EQ(ensemble_cov(pm), expected);
  EXPECT_THROW(ensemble_cov(Matrix(2, 0)), ConfigError);
}

TEST(Eki, SingleParticleIsUnchanged) {
  LinearFixture f;
  const Ensemble e = make_ensemble((Matrix(2, 1) << 0.5, -0.5).finished(), *f.model);
  const Ensemble next = eki_step(e, f.problem.data, f.problem.noise_cov, 0.7);
  EXPECT_EQ(next.particles, e.particles);
  EXPECT_EQ(next.iteration, 1);
}

TEST(Eki, ConsensusIsAFixedPoint) {
  LinearFixture f;
  const Ensemble e = make_ensemble(Matrix::Constant(2, 6, 0.3), *f.model);
  EXPECT_EQ(eki_step(e, f.problem.data, f.problem.noise_cov, 1.0).particles, e.particles);
}

TEST(Eki, TwoParticleStepMatchesDoubleSum) {
  LinearFixture f(2, 3);
  const Matrix theta = (Matrix(2, 2) << 0.1, -0.4, 0.7, 0.2).finished();
  const Ensemble e = make_ensemble(theta, *f.model);
  const double dt = 0.3;
  const Matrix ginv = f.problem.noise_cov.inverse();
  const Vector gbar = 0.5 * (e.outputs.col(0) + e.outputs.col(1));
  Matrix expected = theta;
  for (int j = 0; j < 2; ++j)
    for (int k = 0; k < 2; ++k) {
      const double w = (e.outputs.col(k) - gbar).dot(ginv * (e.outputs.col(j) - f.problem.data)) / 2.0;
      expected.col(j) -= dt * w * theta.col(k);
    }
  // The drift may use θ_k or θ_k − θ̄ (Σ_k (G_k − Ḡ) = 0 makes them equal).
  EXPECT_LT((eki_step(e, f.problem.data, f.problem.noise_cov, dt).particles - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Eks, ConsensusStaysPut) {
  LinearFixture f;
  const Ensemble e = make_ensemble(Matrix::Constant(2, 5, 0.3), *f.model);
  const Ensemble next = eks_step(e, f.problem.data, f.problem.noise_cov, f.prior, 1.0, 7);
  // Only the 1e-12 jitter of the covariance square root can move particles.
  EXPECT_LT((next.particles - e.particles).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Eks, SmallStepIsContinuous) {
  LinearFixture f;
  Rng rng = make_stream(5);
  Matrix theta(2, 8);
  for (Index j = 0; j < 8; ++j) theta.col(j) = standard_normal(2, rng);
  const Ensemble e = make_ensemble(theta, *f.model);
  double last = std::numeric_limits<double>::infinity();
  for (double dt : {1e-2, 1e-4, 1e-6, 1e-8}) {
    const double move = (eks_step(e, f.problem.data, f.problem.noise_cov, f.prior, dt, 3).particles - theta).norm();
    EXPECT_LT(move, last);
    last = move;
  }
  EXPECT_LT(last, 2e-3);
}

TEST(Eks, NoNoiseNoDampingReducesToEki) {
  LinearFixture f;
  Rng rng = make_stream(6);
  Matrix theta(2, 6);
  for (Index j = 0; j < 6; ++j) theta.col(j) = standard_normal(2, rng);
  const Ensemble e = make_ensemble(theta, *f.model);
  EksOptions opt;
  opt.noise = false;
  opt.prior_damping = false;
  const Matrix a = eks_step(e, f.problem.data, f.problem.noise_cov, f.prior, 0.05, 1, opt).particles;
  const Matrix b = eki_step(e, f.problem.data, f.problem.noise_cov, 0.05).particles;
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Eks, ImplicitDampingDiffersFromExplicitAtSecondOrder) {
  LinearFixture f;
  Rng rng = make_stream(7);
  Matrix theta(2, 6);
  for (Index j = 0; j < 6; ++j) theta.col(j) = standard_normal(2, rng);
  const Ensemble e = make_ensemble(theta, *f.model);
  EksOptions opt;
  opt.noise = false;
  auto gap = [&](double dt) {
    const Matrix implicit = eks_step(e, f.problem.data, f.problem.noise_cov, f.prior, dt, 1, opt).particles;
    const Matrix c = ensemble_cov(theta);
    Matrix explicit_step = eki_step(e, f.problem.data, f.problem.noise_cov, dt).particles;
    explicit_step -= dt * c * f.prior.precision() * (theta.colwise() - f.prior.mean());
    return (implicit - explicit_step).norm();
  };
  EXPECT_NEAR(std::log2(gap(1e-3) / gap(5e-4)), 2.0, 0.1);
}

TEST(Eks, AffineInvarianceOfTheNoiseFreeFlow) {
  LinearFixture f;
  const Matrix a = (Matrix(2, 2) << 2.0, 0.5, -0.3, 1.5).finished();
  const Vector shift = (Vector(2) << 0.4, -1.0).finished();
  // Particles mapped by θ ↦ Aθ + b, G by G' = G A⁻¹ (affine offset absorbed in y).
  const Matrix ginv = f.model->matrix() * a.inverse();
  auto mapped_model = std::make_shared<LinearModel>(ginv);
  const Vector y_mapped = f.problem.data + ginv * shift;
  const GaussianPrior mapped_prior(a * f.prior.mean() + shift, a * f.prior.covariance() * a.transpose());
  Rng rng = make_stream(8);
  Matrix theta(2, 10);
  for (Index j = 0; j < 10; ++j) theta.col(j) = standard_normal(2, rng);
  Ensemble e = make_ensemble(theta, *f.model);
  Ensemble e2 = make_ensemble((a * theta).colwise() + shift, *mapped_model);
  EksOptions opt;
  opt.noise = false;
  // The data term is explicit; dt must be below 2/‖C GᵀΓ⁻¹G‖ for stability.
  for (int n = 0; n < 5; ++n) {
    e = make_ensemble(eks_step(e, f.problem.data, f.problem.noise_cov, f.prior, 1e-3, 1, opt).particles, *f.model);
    e2 = make_ensemble(eks_step(e2, y_mapped, f.problem.noise_cov, mapped_prior, 1e-3, 1, opt).particles, *mapped_model);
  }
  const Matrix back = a.inverse() * (e2.particles.colwise() - shift);
  EXPECT_LT((back - e.particles).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Timestep, ConsensusHitsTheCap) {
  const TimestepRule rule{0.5, 1e-8, 10.0};
  EXPECT_DOUBLE_EQ(adaptive_timestep(Matrix::Zero(4, 4), rule), 5.0);
}

TEST(Timestep, MatchesExplicitFrobeniusOracle) {
  LinearFixture f(3, 4);
  Rng rng = make_stream(9);
  Matrix theta(2, 3);
  for (Index j = 0; j < 3; ++j) theta.col(j) = standard_normal(2, rng);
  const Ensemble e = make_ensemble(theta, *f.model);
  const Matrix ginv = f.problem.noise_cov.inverse();
  const Vector gbar = e.outputs.rowwise().mean();
  double fro = 0.0;
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k) {
      const double d = (e.outputs.col(k) - gbar).dot(ginv * (e.outputs.col(j) - f.problem.data)) / 3.0;
      fro += d * d;
    }
  const TimestepRule rule{1.0, 1e-8, 1e12};
  EXPECT_NEAR(adaptive_timestep(e, f.problem.data, f.problem.noise_cov, rule), 1.0 / (std::sqrt(fro) + 1e-8), 1e-12);
}

TEST(Calibration, ZeroIterationsReturnsPriorSample) {
  LinearFixture f;
  CalibrationSettings s;
  s.ensemble_size = 7;
  s.iterations = 0;
  const auto r = run_calibration(f.problem, f.prior, s, 3);
  ASSERT_EQ(r.snapshots.size(), 1u);
  EXPECT_EQ(r.snapshots[0].iteration, 0);
  for (Index j = 0; j < 7; ++j) {
    Rng rng = make_stream(3, {kInitTag, static_cast<std::uint64_t>(j)});
    EXPECT_EQ(r.snapshots[0].particles.col(j), f.prior.sample(rng));
  }
  EXPECT_TRUE(r.snapshots[0].evaluated());
}

TEST(Calibration, SnapshotScheduleOfTheLargeDesign) {
  LinearFixture f;
  CalibrationSettings s;
  s.ensemble_size = 100;
  s.iterations = 54;
  s.snapshot_stride = 6;
  const auto r = run_calibration(f.problem, f.prior, s, 1);
  ASSERT_EQ(r.snapshots.size(), 10u);
  Index rows = 0;
  for (std::size_t i = 0; i < r.snapshots.size(); ++i) {
    EXPECT_EQ(r.snapshots[i].iteration, static_cast<int>(6 * i));
    rows += r.snapshots[i].size();
  }
  EXPECT_EQ(rows, 1000);
  EXPECT_EQ(r.timesteps.size(), 54u);
}

TEST(Calibration, DefaultKeepsFirstAndLast) {
  LinearFixture f;
  CalibrationSettings s;
  s.iterations = 20;
  const auto r = run_calibration(f.problem, f.prior, s, 1);
  ASSERT_EQ(r.snapshots.size(), 2u);
  EXPECT_EQ(r.final_ensemble().iteration, 20);
  for (const auto& e : r.snapshots) {
    EXPECT_TRUE(e.particles.allFinite());
    EXPECT_TRUE(e.outputs.allFinite());
  }
}

TEST(Calibration, DeterministicForASeedAndWorkerCount) {
  LinearFixture f;
  CalibrationSettings s;
  s.iterations = 5;
  const auto a = run_calibration(f.problem, f.prior, s, 11);
  s.workers = 4;
  const auto b = run_calibration(f.problem, f.prior, s, 11);
  EXPECT_EQ(a.final_ensemble().particles, b.final_ensemble().particles);
  const auto c = run_calibration(f.problem, f.prior, s, 12);
  EXPECT_NE(a.final_ensemble().particles, c.final_ensemble().particles);
}

TEST(Calibration, LargeEnsembleMeanApproachesAnalyticPosterior) {
  LinearFixture f;
  CalibrationSettings s;
  s.ensemble_size = 512;
  s.iterations = 30;
  const auto r = run_calibration(f.problem, f.prior, s, 5);
  const auto post = linear_gaussian_posterior(f.model->matrix(), f.problem.data, f.problem.noise_cov, f.prior);
  const Vector mean = r.final_ensemble().particles.rowwise().mean();
  EXPECT_LT((mean - post.mean).norm(), 0.1 * post.mean.norm());
}

TEST(Calibration, StationaryCovarianceBiasShrinksWithTheTimestep) {
  // The split scheme is stationary at an inflated covariance (about 1.45x at
  // dt0 = 1 here); the inflation is O(dt) and vanishes as dt0 -> 0.
  LinearFixture f;
  const auto post = linear_gaussian_posterior(f.model->matrix(), f.problem.data, f.problem.noise_cov, f.prior);
  CalibrationSettings s;
  s.ensemble_size = 512;
  s.iterations = 300;
  auto error_at = [&](double dt0) {
    s.timestep.dt0 = dt0;
    const Matrix cov = ensemble_cov(run_calibration(f.problem, f.prior, s, 5).final_ensemble());
    return (cov - post.covariance).norm() / post.covariance.norm();
  };
  const double coarse = error_at(1.0), fine = error_at(0.1);
  EXPECT_LT(fine, 0.15);
  EXPECT_LT(fine, coarse);
}

TEST(Calibration, EkiCollapsesTowardsTheData) {
  LinearFixture f;
  CalibrationSettings s;
  s.variant = CalibrationVariant::eki;
  s.ensemble_size = 20;
  s.iterations = 30;
  const auto r = run_calibration(f.problem, f.prior, s, 5);
  EXPECT_LT(ensemble_cov(r.final_ensemble()).trace(), 0.1 * ensemble_cov(r.snapshots.front()).trace());
}

/// Fails for θ₀ > 1 and otherwise behaves like the identity.
class FragileModel final : public ForwardModel {
 public:
  Index input_dim() const override { return 2; }
  Index output_dim() const override { return 2; }
  Evaluation evaluate(const Vector& theta, const Vector&) const override {
    if (theta(0) > 1.0) throw NumericalError("unstable");
    return {theta, {}};
  }
};

TEST(Calibration, FailedParticlesAreResampled) {
  InverseProblem p;
  p.model = std::make_shared<FragileModel>();
  p.data = Vector::Zero(2);
  p.noise_cov = Matrix::Identity(2, 2);
  const GaussianPrior prior(Vector::Zero(2), Matrix::Identity(2, 2));
  CalibrationSettings s;
  s.ensemble_size = 50;
  s.iterations = 2;
  s.max_retries = 20;
  const auto r = run_calibration(p, prior, s, 2);
  EXPECT_GT(r.failed_evaluations, 0);
  for (const auto& e : r.snapshots) {
    EXPECT_TRUE((e.particles.row(0).array() <= 1.0).all());
    EXPECT_TRUE(e.outputs.allFinite());
  }
}

TEST(Calibration, AbortsWhenResamplingKeepsFailing) {
  InverseProblem p;
  p.model = std::make_shared<FragileModel>();
  p.data = Vector::Zero(2);
  p.noise_cov = Matrix::Identity(2, 2);
  const GaussianPrior prior((Vector(2) << 1.5, 0.0).finished(), 1e-6 * Matrix::Identity(2, 2));
  CalibrationSettings s;
  s.ensemble_size = 4;
  s.iterations = 1;
  EXPECT_THROW(run_calibration(p, prior, s, 2), NumericalError);
}

TEST(Calibration, RejectsInvalidSettings) {
  LinearFixture f;
  CalibrationSettings s;
  s.ensemble_size = 0;
  EXPECT_THROW(run_calibration(f.problem, f.prior, s, 1), ConfigError);
  s.ensemble_size = 4;
  s.timestep.dt0 = 0.0;
  EXPECT_THROW(run_calibration(f.problem, f.prior, s, 1), ConfigError);
  s.timestep.dt0 = 1.0;
  const GaussianPrior wrong(Vector::Zero(3), Matrix::Identity(3, 3));
  EXPECT_THROW(run_calibration(f.problem, wrong, s, 1), ConfigError);
}

}  // namespace
}  // namespace ces
