#pragma once

#include "ces/core.hpp"

#include <memory>
#include <string>
#include <vector>

namespace ces {

/// Output of one forward evaluation. `carry` is model-specific state handed to
/// the next evaluation of the same particle (the trajectory endpoint for
/// time-averaged models); it is empty for stateless models.
struct Evaluation {
  Vector value;
  Vector carry;
};

/// Parameter-to-data map G: R^p -> R^d. Implementations must be safe to call
/// concurrently from several threads.
class ForwardModel {
 public:
  virtual ~ForwardModel() = default;

  virtual Index input_dim() const = 0;
  virtual Index output_dim() const = 0;

  /// Evaluates G at theta, optionally resuming from a carried state. Throws
  /// ConfigError on dimension mismatch and NumericalError on failure.
  virtual Evaluation evaluate(const Vector& theta, const Vector& carry) const = 0;

  /// State used for the first evaluation of each particle.
  virtual Vector initial_carry() const { return {}; }

  virtual std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    for (Index i = 0; i < input_dim(); ++i) names.push_back("theta_" + std::to_string(i + 1));
    return names;
  }

  Vector operator()(const Vector& theta) const { return evaluate(theta, initial_carry()).value; }

 protected:
  void check_input(const Vector& theta) const {
    if (theta.size() != input_dim())
      throw ConfigError("forward model expects " + std::to_string(input_dim()) + " parameters, got " +
                        std::to_string(theta.size()));
  }
};

using ForwardModelPtr = std::shared_ptr<const ForwardModel>;

}  // namespace ces
