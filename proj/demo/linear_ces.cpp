// Calibrate-emulate-sample on the two-parameter linear problem, compared with
// the closed-form posterior. Everything stays in memory.

#include "ces/ces.hpp"

#include <fmt/format.h>

#include <memory>

int main() {
  using namespace ces;
  Rng rng = make_stream(7, {kMatrixTag});
  auto model = std::make_shared<const LinearModel>(LinearModel::random(10, LinearModel::correlated_rows(-0.9), rng));
  const Vector truth = (Vector(2) << -1.0, 2.0).finished();
  const Matrix noise = 0.01 * Matrix::Identity(10, 10);
  Rng data_rng = make_stream(7, {kDataTag});
  const Vector y = (*model)(truth) + 0.1 * standard_normal(10, data_rng);
  const GaussianPrior prior(Vector::Zero(2), Matrix::Identity(2, 2));
  const InverseProblem problem{model, y, noise};

  CalibrationSettings cs;
  cs.ensemble_size = 32;
  cs.iterations = 20;
  const auto calib = run_calibration(problem, prior, cs, 11);
  const Ensemble& last = calib.final_ensemble();

  EmulatorSettings es;
  es.fit.seed = 11;
  const auto emulator = std::make_shared<const GpEmulator>(train_emulator(
      last.particles.transpose(), last.outputs.transpose(), es, elicit_lengthscale_priors(last.particles.transpose())));
  const Misfit misfit = Misfit::emulated(MisfitKind::phi_gp_combined, emulator, y, noise);
  const Chain chain = run_chain(misfit, prior, last.particles.rowwise().mean(), {ensemble_cov(last), 1.0}, 20000, 11);
  const auto d = diagnose(chain);
  const auto exact = linear_gaussian_posterior(model->matrix(), y, noise, prior);

  fmt::print("acceptance rate     {:.3f}\n", d.acceptance_rate);
  fmt::print("posterior mean      CES ({:.4f}, {:.4f})  exact ({:.4f}, {:.4f})\n", d.mean(0), d.mean(1),
             exact.mean(0), exact.mean(1));
  fmt::print("posterior sd        CES ({:.4f}, {:.4f})  exact ({:.4f}, {:.4f})\n", std::sqrt(d.covariance(0, 0)),
             std::sqrt(d.covariance(1, 1)), std::sqrt(exact.covariance(0, 0)), std::sqrt(exact.covariance(1, 1)));
  return 0;
}
