#pragma once

#include "ces/core.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>

namespace ces {

/// f(x, grad) returns the objective and writes the gradient when grad != nullptr.
using Objective = std::function<double(const Vector&, Vector*)>;

struct MinimizeResult {
  Vector x;
  double value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

namespace detail {

struct GslObjective {
  const Objective* f;
  Index n;
};

inline Vector from_gsl(const gsl_vector* v, Index n) {
  Vector x(n);
  for (Index i = 0; i < n; ++i) x(i) = gsl_vector_get(v, static_cast<std::size_t>(i));
  return x;
}

inline double safe_value(double v) { return std::isfinite(v) ? v : 1e300; }

inline double gsl_f(const gsl_vector* v, void* params) {
  auto* o = static_cast<GslObjective*>(params);
  return safe_value((*o->f)(from_gsl(v, o->n), nullptr));
}

inline void gsl_fdf(const gsl_vector* v, void* params, double* f, gsl_vector* g) {
  auto* o = static_cast<GslObjective*>(params);
  Vector grad = Vector::Zero(o->n);
  const double value = (*o->f)(from_gsl(v, o->n), &grad);
  if (f) *f = safe_value(value);
  if (!std::isfinite(value) || !grad.allFinite()) grad.setZero();
  for (Index i = 0; i < o->n; ++i) gsl_vector_set(g, static_cast<std::size_t>(i), grad(i));
}

inline void gsl_df(const gsl_vector* v, void* params, gsl_vector* g) { gsl_fdf(v, params, nullptr, g); }

}  // namespace detail

/// Quasi-Newton (GSL BFGS2) minimization with analytic gradients. Stops on a
/// small gradient, on lack of progress, or after max_iterations.
inline MinimizeResult minimize_bfgs(const Objective& f, const Vector& x0, int max_iterations = 200,
                                    double gradient_tolerance = 1e-6) {
  static const bool handler_off = [] {
    gsl_set_error_handler_off();
    return true;
  }();
  (void)handler_off;

  const Index n = x0.size();
  detail::GslObjective params{&f, n};
  gsl_multimin_function_fdf fn;
  fn.n = static_cast<std::size_t>(n);
  fn.f = &detail::gsl_f;
  fn.df = &detail::gsl_df;
  fn.fdf = &detail::gsl_fdf;
  fn.params = &params;

  std::unique_ptr<gsl_vector, decltype(&gsl_vector_free)> x(gsl_vector_alloc(fn.n), &gsl_vector_free);
  for (Index i = 0; i < n; ++i) gsl_vector_set(x.get(), static_cast<std::size_t>(i), x0(i));
  std::unique_ptr<gsl_multimin_fdfminimizer, decltype(&gsl_multimin_fdfminimizer_free)> s(
      gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, fn.n), &gsl_multimin_fdfminimizer_free);
  gsl_multimin_fdfminimizer_set(s.get(), &fn, x.get(), 0.1, 0.1);

  MinimizeResult r;
  for (r.iterations = 0; r.iterations < max_iterations; ++r.iterations) {
    if (gsl_multimin_fdfminimizer_iterate(s.get()) != GSL_SUCCESS) break;
    if (gsl_multimin_test_gradient(s->gradient, gradient_tolerance) == GSL_SUCCESS) {
      r.converged = true;
      ++r.iterations;
      break;
    }
  }
  r.x = detail::from_gsl(s->x, n);
  r.value = s->f;
  if (!r.converged) r.converged = gsl_multimin_test_gradient(s->gradient, gradient_tolerance) == GSL_SUCCESS;
  return r;
}

}  // namespace ces
