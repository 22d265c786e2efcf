#pragma once

#include "ces/forward_model.hpp"
#include "ces/linalg.hpp"

#include <string>

namespace ces {

/// y = G(θ) + η, η ~ N(0, noise_cov).
struct InverseProblem {
  ForwardModelPtr model;
  Vector data;
  Matrix noise_cov;

  void validate() const {
    if (!model) throw ConfigError("inverse problem has no forward model");
    if (data.size() != model->output_dim())
      throw ConfigError("data has length " + std::to_string(data.size()) + " but the model outputs " +
                        std::to_string(model->output_dim()));
    if (noise_cov.rows() != data.size() || noise_cov.cols() != data.size())
      throw ConfigError("noise covariance must be square with the data dimension");
    if (!data.allFinite() || !noise_cov.allFinite()) throw ConfigError("data and noise covariance must be finite");
  }
};

}  // namespace ces
