#pragma once

// Stacked per-output GP emulator G^(M)(θ) ~ N(m(θ), Γ_GP(θ)) trained in
// transformed output coordinates.

#include "ces/gp.hpp"
#include "ces/transform.hpp"

#include <string>
#include <vector>

namespace ces {

struct EmulatorSettings {
  TransformKind transform = TransformKind::identity;
  MeanFamily mean = MeanFamily::zero;
  KernelFamily kernel = KernelFamily::squared_exponential;
  GpFitOptions fit;
  unsigned workers = 1;
};

class GpEmulator {
 public:
  GpEmulator() = default;
  GpEmulator(std::vector<GpComponent> components, OutputTransform transform, Matrix design_inputs,
             Matrix design_outputs, std::vector<int> provenance = {})
      : components_(std::move(components)),
        transform_(std::move(transform)),
        inputs_(std::move(design_inputs)),
        outputs_(std::move(design_outputs)),
        provenance_(std::move(provenance)) {
    if (static_cast<Index>(components_.size()) != transform_.dim())
      throw ConfigError("emulator needs one GP component per transformed output");
  }

  Index input_dim() const { return inputs_.cols(); }
  Index output_dim() const { return transform_.dim(); }
  Index design_size() const { return inputs_.rows(); }
  const std::vector<GpComponent>& components() const { return components_; }
  const OutputTransform& transform() const { return transform_; }
  const Matrix& design_inputs() const { return inputs_; }
  const Matrix& design_outputs() const { return outputs_; }
  /// Calibration iterations whose snapshots form the design.
  const std::vector<int>& provenance() const { return provenance_; }

  struct TransformedPrediction {
    Vector mean;
    Vector variance;
  };

  /// Per-component mean and variance in transformed coordinates.
  TransformedPrediction predict_transformed(const Vector& theta) const {
    check(theta);
    TransformedPrediction p{Vector(output_dim()), Vector(output_dim())};
    for (Index l = 0; l < output_dim(); ++l) {
      const auto r = components_[static_cast<std::size_t>(l)].predict(theta);
      p.mean(l) = r.mean;
      p.variance(l) = r.variance;
    }
    return p;
  }

  Vector predict_mean_transformed(const Vector& theta) const {
    check(theta);
    Vector m(output_dim());
    for (Index l = 0; l < output_dim(); ++l) m(l) = components_[static_cast<std::size_t>(l)].predict_mean(theta);
    return m;
  }

  struct Prediction {
    Vector mean;
    Matrix covariance;
  };

  /// m(θ) and Γ_GP(θ) in the original output coordinates.
  Prediction predict(const Vector& theta) const {
    const auto t = predict_transformed(theta);
    return {transform_.inverse_mean(t.mean), transform_.inverse_cov(t.variance)};
  }

  Vector predict_mean(const Vector& theta) const { return transform_.inverse_mean(predict_mean_transformed(theta)); }

 private:
  void check(const Vector& theta) const {
    if (theta.size() != input_dim())
      throw ConfigError("emulator expects " + std::to_string(input_dim()) + " inputs, got " +
                        std::to_string(theta.size()));
  }

  std::vector<GpComponent> components_;
  OutputTransform transform_;
  Matrix inputs_;
  Matrix outputs_;
  std::vector<int> provenance_;
};

/// Seed of the hyperparameter search for output l.
inline std::uint64_t component_seed(std::uint64_t seed, Index l) {
  Rng rng = make_stream(seed, {0x43'4f'4d'50, static_cast<std::uint64_t>(l)});  // "COMP"
  return rng();
}

/// Fits the d output GPs (concurrently) on the transformed M × d design.
/// `gamma_obs` is required by the time-diag transform only.
inline GpEmulator train_emulator(const Matrix& inputs, const Matrix& outputs, const EmulatorSettings& s,
                                 const LengthscalePriors& priors = {}, const Matrix& gamma_obs = {},
                                 std::vector<int> provenance = {}) {
  if (inputs.rows() != outputs.rows()) throw ConfigError("design inputs and outputs disagree in row count");
  if (outputs.cols() == 0) throw ConfigError("design has no outputs");
  const Index m = inputs.rows(), p = inputs.cols();
  if (m < p + 2)
    throw ConfigError("insufficient design: GP needs at least p+2 = " + std::to_string(p + 2) + " points, got " +
                      std::to_string(m));
  OutputTransform t = build_transform(s.transform, outputs, gamma_obs);
  if (t.dim() != outputs.cols()) throw ConfigError("Γ_obs dimension does not match the design outputs");
  const Matrix targets = t.forward_rows(outputs);

  const Index d = outputs.cols();
  std::vector<GpComponent> comps(static_cast<std::size_t>(d));
  parallel_for(static_cast<std::size_t>(d), s.workers, [&](std::size_t l) {
    GpFitOptions opt = s.fit;
    opt.seed = component_seed(s.fit.seed, static_cast<Index>(l));
    try {
      comps[l] = fit_gp(inputs, targets.col(static_cast<Index>(l)), s.mean, s.kernel, priors, opt);
    } catch (const NumericalError& e) {
      throw NumericalError("emulator output " + std::to_string(l) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("emulator output " + std::to_string(l) + ": " + e.what());
    }
  });
  return GpEmulator(std::move(comps), std::move(t), inputs, outputs, std::move(provenance));
}

/// Rebuilds an emulator from stored hyperparameters without refitting.
inline GpEmulator rebuild_emulator(const Matrix& inputs, const Matrix& outputs, OutputTransform t, MeanFamily mean,
                                   const std::vector<KernelSpec>& kernels, std::vector<int> provenance = {}) {
  if (static_cast<Index>(kernels.size()) != t.dim()) throw ConfigError("one kernel per output is required");
  const Matrix targets = t.forward_rows(outputs);
  std::vector<GpComponent> comps;
  comps.reserve(kernels.size());
  for (std::size_t l = 0; l < kernels.size(); ++l)
    comps.push_back(GpComponent::build(inputs, targets.col(static_cast<Index>(l)), mean, kernels[l]));
  return GpEmulator(std::move(comps), std::move(t), inputs, outputs, std::move(provenance));
}

}  // namespace ces
