#pragma once

#include "ces/core.hpp"
#include "ces/log.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/tools/roots.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace ces {

/// Gamma(shape k, scale s) density on a positive hyperparameter.
struct GammaPrior {
  double shape = 1.0;
  double scale = 1.0;

  double log_pdf(double x) const {
    return (shape - 1.0) * std::log(x) - x / scale - std::lgamma(shape) - shape * std::log(scale);
  }
  /// d log_pdf(x) / d log x
  double dlog_pdf_dlog(double x) const { return (shape - 1.0) - x / scale; }
  double quantile(double q) const { return scale * boost::math::gamma_p_inv(shape, q); }
  double mean() const { return shape * scale; }
};

/// Gamma distribution whose (lower, upper) probability quantiles equal (q_lo, q_hi).
/// The quantile ratio depends on the shape only and is monotone in it, so the
/// shape is found by 1-d root finding on log k and the scale follows.
inline GammaPrior gamma_from_quantiles(double q_lo, double q_hi, double lower = 0.025, double upper = 0.975) {
  if (!(q_lo > 0) || !(q_hi > q_lo)) throw ConfigError("Gamma quantile targets must satisfy 0 < lo < hi");
  const double target = std::log(q_hi / q_lo);
  auto f = [&](double log_k) {
    const double k = std::exp(log_k);
    const double lo = boost::math::gamma_p_inv(k, lower);
    const double hi = boost::math::gamma_p_inv(k, upper);
    if (!(lo > 0)) return std::numeric_limits<double>::max();
    return std::log(hi) - std::log(lo) - target;
  };
  double a = 0.0, b = 0.0;
  // f decreases in k: find a with f(a) > 0 and b with f(b) < 0.
  while (f(a) <= 0) {
    a -= 1.0;
    if (a < -12) throw NumericalError("cannot bracket Gamma shape");
  }
  b = a;
  while (f(b) >= 0) {
    b += 1.0;
    if (b > 30) throw NumericalError("cannot bracket Gamma shape");
  }
  a = b - 1.0;
  std::uintmax_t iters = 200;
  auto [x0, x1] = boost::math::tools::toms748_solve(f, a, b, boost::math::tools::eps_tolerance<double>(50), iters);
  const double k = std::exp(0.5 * (x0 + x1));
  return {k, q_hi / boost::math::gamma_p_inv(k, upper)};
}

/// Per-dimension lengthscale priors from a design: quantiles (2.5%, 97.5%) are
/// matched to (min pairwise distance / 10, max pairwise distance / 3). A
/// dimension where all design points coincide gets no prior (flat).
inline std::vector<std::optional<GammaPrior>> elicit_lengthscale_priors(const Matrix& inputs) {
  const Index m = inputs.rows(), p = inputs.cols();
  if (m < 2) throw ConfigError("lengthscale elicitation needs at least two design points");
  std::vector<std::optional<GammaPrior>> out(p);
  for (Index i = 0; i < p; ++i) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (Index a = 0; a < m; ++a)
      for (Index b = a + 1; b < m; ++b) {
        const double dist = std::abs(inputs(a, i) - inputs(b, i));
        if (dist > 0) lo = std::min(lo, dist);
        hi = std::max(hi, dist);
      }
    if (!(hi > 0)) {
      log().warn("design dimension {} is degenerate; using a flat lengthscale prior", i);
      continue;
    }
    out[i] = gamma_from_quantiles(lo / 10.0, hi / 3.0);
  }
  return out;
}

}  // namespace ces
