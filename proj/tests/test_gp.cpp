#include "ces/gamma_prior.hpp"
#include "ces/gp.hpp"

#include <gtest/gtest.h>

#include <boost/math/distributions/gamma.hpp>

#include <cmath>
#include <numbers>

namespace ces {
namespace {

Matrix random_inputs(Index m, Index p, std::uint64_t seed) {
  Rng rng = make_stream(seed);
  Matrix x(m, p);
  for (Index i = 0; i < m; ++i) x.row(i) = standard_normal(p, rng).transpose();
  return x;
}

TEST(Kernel, ZeroDistanceGivesAmplitudePlusNoise) {
  for (auto fam : {KernelFamily::squared_exponential, KernelFamily::matern52}) {
    KernelSpec k{fam, 1.7, Vector::Constant(2, 0.5), 0.3};
    const Vector a = (Vector(2) << 0.1, 0.2).finished();
    EXPECT_DOUBLE_EQ(kernel_eval(k, a, a), 2.0);
  }
}

TEST(Kernel, DecaysWithDistance) {
  for (auto fam : {KernelFamily::squared_exponential, KernelFamily::matern52}) {
    KernelSpec k{fam, 1.0, Vector::Ones(1), 0.0};
    // Matern 5/2 at r = 60: (1 + √5·60 + 5·60²/3)·exp(−√5·60) ≈ 3.3e-55.
    EXPECT_LT(kernel_eval(k, Vector::Zero(1), Vector::Constant(1, 60.0)), 1e-50);
  }
}

TEST(Kernel, SquaredExponentialPlugIn) {
  KernelSpec k{KernelFamily::squared_exponential, 1.0, Vector::Constant(1, 2.0), 0.0};
  EXPECT_DOUBLE_EQ(kernel_eval(k, Vector::Zero(1), Vector::Constant(1, 2.0)), std::exp(-0.5));
}

TEST(Kernel, Matern52PlugIn) {
  KernelSpec k{KernelFamily::matern52, 2.0, Vector::Constant(1, 1.0), 0.0};
  const double r = 0.7, s = std::sqrt(5.0) * r;
  EXPECT_NEAR(kernel_eval(k, Vector::Zero(1), Vector::Constant(1, r)), 2.0 * (1 + s + s * s / 3.0) * std::exp(-s), 1e-15);
}

TEST(Kernel, RejectsDimensionMismatch) {
  KernelSpec k{KernelFamily::squared_exponential, 1.0, Vector::Ones(2), 0.0};
  EXPECT_THROW(kernel_eval(k, Vector::Zero(1), Vector::Zero(1)), ConfigError);
}

struct GradientCase {
  KernelFamily kernel;
  MeanFamily mean;
  bool priors;
};

class MarginalLikelihoodGradient : public ::testing::TestWithParam<GradientCase> {};

TEST_P(MarginalLikelihoodGradient, MatchesCentralDifferences) {
  const auto c = GetParam();
  const Index m = 25, p = 3;
  const Matrix x = random_inputs(m, p, 1);
  Rng rng = make_stream(2);
  Vector y(m);
  for (Index i = 0; i < m; ++i) y(i) = std::sin(x(i, 0)) + 0.5 * x(i, 1) * x(i, 2) + 0.1 * standard_normal(1, rng)(0);
  LengthscalePriors priors;
  if (c.priors) priors = elicit_lengthscale_priors(x);
  const MarginalLikelihood ml(x, y, c.mean, c.kernel, priors);
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    Rng r = make_stream(10 + trial);
    Vector u = 0.5 * standard_normal(p + 2, r);
    u(p + 1) = std::log(0.05) + 0.3 * u(p + 1);
    Vector grad;
    ml(u, &grad);
    Vector fd(p + 2);
    const double h = 1e-5;
    for (Index i = 0; i < p + 2; ++i) {
      Vector up = u, um = u;
      up(i) += h;
      um(i) -= h;
      fd(i) = (ml(up, nullptr) - ml(um, nullptr)) / (2 * h);
    }
    const double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
    EXPECT_LT((grad - fd).cwiseAbs().maxCoeff(), 1e-5 * scale) << "trial " << trial << "\n" << grad.transpose() << "\n" << fd.transpose();
  }
}

INSTANTIATE_TEST_SUITE_P(
    AllFamilies, MarginalLikelihoodGradient,
    ::testing::Values(GradientCase{KernelFamily::squared_exponential, MeanFamily::zero, false},
                      GradientCase{KernelFamily::squared_exponential, MeanFamily::linear, false},
                      GradientCase{KernelFamily::matern52, MeanFamily::zero, false},
                      GradientCase{KernelFamily::matern52, MeanFamily::linear, false},
                      GradientCase{KernelFamily::squared_exponential, MeanFamily::linear, true},
                      GradientCase{KernelFamily::matern52, MeanFamily::linear, true}));

TEST(MarginalLikelihood, MatchesDenseGaussianDensity) {
  const Index m = 12;
  const Matrix x = random_inputs(m, 2, 3);
  const Vector y = x.col(0).array().sin();
  const Vector u = (Vector(4) << 0.2, -0.1, 0.3, std::log(0.01)).finished();
  const MarginalLikelihood ml(x, y, MeanFamily::zero, KernelFamily::squared_exponential);
  const KernelSpec k = MarginalLikelihood::spec_from(KernelFamily::squared_exponential, u);
  Matrix kmat(m, m);
  for (Index a = 0; a < m; ++a)
    for (Index b = 0; b < m; ++b) kmat(a, b) = kernel_eval(k, x.row(a).transpose(), x.row(b).transpose());
  const double expected = -0.5 * y.dot(kmat.inverse() * y) - 0.5 * std::log(kmat.determinant()) -
                          0.5 * m * std::log(2.0 * std::numbers::pi);
  EXPECT_NEAR(ml(u, nullptr), expected, 1e-8);
}

TEST(FitGp, ZeroTargetsGiveZeroMean) {
  const Matrix x = random_inputs(10, 2, 4);
  const auto gp = fit_gp(x, Vector::Zero(10), MeanFamily::zero, KernelFamily::squared_exponential);
  Rng rng = make_stream(5);
  for (int i = 0; i < 20; ++i) EXPECT_NEAR(gp.predict_mean(standard_normal(2, rng)), 0.0, 1e-12);
}

TEST(FitGp, LinearMeanReproducesNoiseFreeLines) {
  const Matrix x = random_inputs(15, 2, 6);
  auto line = [](const Vector& t) { return 0.7 - 1.3 * t(0) + 2.1 * t(1); };
  Vector y(15);
  for (Index i = 0; i < 15; ++i) y(i) = line(x.row(i).transpose());
  for (auto fam : {KernelFamily::squared_exponential, KernelFamily::matern52}) {
    const auto gp = fit_gp(x, y, MeanFamily::linear, fam);
    const Matrix held = random_inputs(20, 2, 7);
    for (Index i = 0; i < held.rows(); ++i)
      EXPECT_NEAR(gp.predict_mean(held.row(i).transpose()), line(held.row(i).transpose()), 1e-6);
  }
}

TEST(FitGp, InterpolatesTrainingPointsWithinNoise) {
  const Matrix x = random_inputs(30, 2, 8);
  Rng rng = make_stream(9);
  Vector y(30);
  for (Index i = 0; i < 30; ++i) y(i) = std::sin(2 * x(i, 0)) * std::cos(x(i, 1)) + 0.01 * standard_normal(1, rng)(0);
  const auto gp = fit_gp(x, y, MeanFamily::zero, KernelFamily::squared_exponential);
  const double lambda = std::sqrt(gp.kernel().noise);
  for (Index i = 0; i < 30; ++i) EXPECT_LE(std::abs(gp.predict_mean(x.row(i).transpose()) - y(i)), 3 * lambda + 1e-6);
  EXPECT_TRUE(gp.kernel().valid());
}

TEST(FitGp, PredictiveVarianceIsNonNegative) {
  const Matrix x = random_inputs(40, 3, 10);
  const Vector y = x.col(0).array().cos() + x.col(2).array();
  for (auto fam : {KernelFamily::squared_exponential, KernelFamily::matern52}) {
    const auto gp = fit_gp(x, y, MeanFamily::linear, fam);
    Rng rng = make_stream(11);
    for (int i = 0; i < 10000; ++i) {
      const auto pr = gp.predict(3.0 * standard_normal(3, rng));
      EXPECT_GE(pr.variance, 0.0);
      EXPECT_TRUE(std::isfinite(pr.mean));
    }
  }
}

TEST(FitGp, FitIsDeterministicForASeed) {
  const Matrix x = random_inputs(20, 2, 12);
  const Vector y = x.col(0).array().square();
  GpFitOptions opt;
  opt.seed = 99;
  const auto a = fit_gp(x, y, MeanFamily::zero, KernelFamily::matern52, {}, opt);
  const auto b = fit_gp(x, y, MeanFamily::zero, KernelFamily::matern52, {}, opt);
  EXPECT_EQ(a.kernel().lengthscales, b.kernel().lengthscales);
  EXPECT_EQ(a.kernel().amplitude, b.kernel().amplitude);
}

TEST(FitGp, InsufficientDesignIsRejected) {
  const Matrix x = random_inputs(3, 2, 13);
  try {
    fit_gp(x, Vector::Zero(3), MeanFamily::zero, KernelFamily::squared_exponential);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("insufficient design"), std::string::npos);
  }
  Matrix bad = random_inputs(10, 2, 14);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(fit_gp(bad, Vector::Zero(10), MeanFamily::zero, KernelFamily::squared_exponential), ConfigError);
}

TEST(GpComponent, BuildRejectsInvalidHyperparameters) {
  KernelSpec k{KernelFamily::squared_exponential, -1.0, Vector::Ones(2), 0.0};
  EXPECT_THROW(GpComponent::build(random_inputs(5, 2, 1), Vector::Zero(5), MeanFamily::zero, k), ConfigError);
}

TEST(GammaPrior, QuantilesReproduceTargets) {
  for (auto [lo, hi] : {std::pair{0.1, 1.0 / 3.0}, std::pair{1e-4, 2.0}, std::pair{0.5, 0.6}, std::pair{3.0, 300.0}}) {
    const GammaPrior g = gamma_from_quantiles(lo, hi);
    const boost::math::gamma_distribution<double> dist(g.shape, g.scale);
    EXPECT_NEAR(boost::math::quantile(dist, 0.025) / lo, 1.0, 1e-6);
    EXPECT_NEAR(boost::math::quantile(dist, 0.975) / hi, 1.0, 1e-6);
    EXPECT_GT(g.shape, 0.0);
    EXPECT_GT(g.scale, 0.0);
  }
}

TEST(GammaPrior, LogPdfMatchesBoost) {
  const GammaPrior g{2.5, 0.4};
  const boost::math::gamma_distribution<double> dist(2.5, 0.4);
  for (double x : {0.1, 0.7, 2.0}) EXPECT_NEAR(g.log_pdf(x), std::log(boost::math::pdf(dist, x)), 1e-12);
  const double h = 1e-6, x = 0.8;
  EXPECT_NEAR(g.dlog_pdf_dlog(x), (g.log_pdf(x * std::exp(h)) - g.log_pdf(x * std::exp(-h))) / (2 * h), 1e-6);
}

TEST(GammaPrior, RejectsInvalidTargets) {
  EXPECT_THROW(gamma_from_quantiles(0.0, 1.0), ConfigError);
  EXPECT_THROW(gamma_from_quantiles(2.0, 1.0), ConfigError);
}

TEST(Elicitation, TwoPointsAtUnitDistance) {
  const Matrix x = (Matrix(2, 1) << 0.0, 1.0).finished();
  const auto priors = elicit_lengthscale_priors(x);
  ASSERT_TRUE(priors[0]);
  EXPECT_NEAR(priors[0]->quantile(0.025), 0.1, 1e-6);
  EXPECT_NEAR(priors[0]->quantile(0.975), 1.0 / 3.0, 1e-6);
}

TEST(Elicitation, DegenerateDimensionIsFlat) {
  Matrix x = random_inputs(6, 3, 15);
  x.col(1).setConstant(2.0);
  const auto priors = elicit_lengthscale_priors(x);
  EXPECT_TRUE(priors[0]);
  EXPECT_FALSE(priors[1]);
  EXPECT_TRUE(priors[2]);
  EXPECT_THROW(elicit_lengthscale_priors(Matrix::Zero(1, 2)), ConfigError);
}

}  // namespace
}  // namespace ces
