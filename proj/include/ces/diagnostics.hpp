#pragma once

#include "ces/log.hpp"
#include "ces/mcmc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace ces {

inline constexpr std::array<double, 5> kForestLevels{0.025, 0.25, 0.5, 0.75, 0.975};

/// Linear-interpolation sample quantile (type 7) of unsorted values.
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigError("quantile of an empty sample");
  if (!(q >= 0 && q <= 1)) throw ConfigError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Per-column running means: row n holds the mean of rows 0..n.
inline Matrix running_means(const Matrix& samples) {
  Matrix out(samples.rows(), samples.cols());
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(samples.cols());
  for (Index n = 0; n < samples.rows(); ++n) {
    sum += samples.row(n);
    out.row(n) = sum / static_cast<double>(n + 1);
  }
  return out;
}

struct IactEstimate {
  double tau = 1.0;
  Index window = 0;
  bool capped = false;
};

/// Integrated autocorrelation time τ = 1 + 2 Σ_{k=1}^{W} ρ(k) with Sokal's
/// self-consistent window W ≥ c τ. A chain without variance, or one whose
/// window never closes, returns the chain length with capped = true.
inline IactEstimate integrated_autocorrelation_time(const Vector& x, double c = 5.0) {
  const Index n = x.size();
  IactEstimate est;
  if (n < 2) return {static_cast<double>(n), 0, true};
  const Vector centered = x.array() - x.mean();
  const double c0 = centered.squaredNorm() / static_cast<double>(n);
  if (!(c0 > 0)) {
    log().warn("chain coordinate has zero variance; IACT set to the chain length");
    return {static_cast<double>(n), 0, true};
  }
  double tau = 1.0;
  for (Index k = 1; k < n; ++k) {
    const double ck = centered.head(n - k).dot(centered.tail(n - k)) / static_cast<double>(n);
    tau += 2.0 * ck / c0;
    if (static_cast<double>(k) >= c * tau) return {std::max(tau, 1e-12), k, false};
  }
  log().warn("IACT window did not close; IACT set to the chain length");
  return {static_cast<double>(n), n - 1, true};
}

struct ChainDiagnostics {
  Index samples = 0;
  Index burn_in = 0;
  double acceptance_rate = 0.0;
  Vector mean;
  Matrix covariance;                  // unbiased
  Matrix quantiles;                   // p × 5 at kForestLevels
  std::vector<IactEstimate> iact;     // per coordinate
  Matrix running_mean;                // (N_s − burn_in) × p
};

/// Summary statistics of a finished chain after discarding `burn_in` steps.
inline ChainDiagnostics diagnose(const Chain& chain, Index burn_in = 0) {
  if (chain.size() == 0) throw ConfigError("cannot diagnose an empty chain");
  if (burn_in < 0 || burn_in >= chain.size()) throw ConfigError("burn-in must be in [0, chain length)");
  const Matrix kept = chain.samples.bottomRows(chain.size() - burn_in);
  const Index n = kept.rows(), p = kept.cols();
  ChainDiagnostics d;
  d.samples = n;
  d.burn_in = burn_in;
  d.acceptance_rate = chain.acceptance_rate();
  d.mean = kept.colwise().mean().transpose();
  const Matrix centered = kept.rowwise() - d.mean.transpose();
  d.covariance = n > 1 ? Matrix((centered.transpose() * centered) / static_cast<double>(n - 1)) : Matrix::Zero(p, p);
  d.quantiles.resize(p, static_cast<Index>(kForestLevels.size()));
  for (Index i = 0; i < p; ++i) {
    std::vector<double> col(kept.col(i).data(), kept.col(i).data() + n);
    for (std::size_t q = 0; q < kForestLevels.size(); ++q)
      d.quantiles(i, static_cast<Index>(q)) = quantile(col, kForestLevels[q]);
    d.iact.push_back(integrated_autocorrelation_time(kept.col(i)));
  }
  d.running_mean = running_means(kept);
  return d;
}

}  // namespace ces
