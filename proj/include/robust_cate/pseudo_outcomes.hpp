#pragma once

#include <Eigen/Core>
#include <stdexcept>

#include "robust_cate/data.hpp"
#include "robust_cate/nuisance.hpp"

namespace robust_cate {

/// Pooled doubly robust pseudo-outcomes: one target per unit, with optional
/// per-unit weights (all 1 unless overlap weighting is on).
struct PseudoOutcomes {
  Eigen::VectorXd d;
  Eigen::VectorXd weights;
  Eigen::VectorXi source_arm;
};

/// D1 = mu1 - mu0 + (Y - mu1)/pi         for treated units,
/// D0 = mu1 - mu0 - (Y - mu0)/(1 - pi)   for controls,
/// mapped back to the original outcome scale when Y was pre-standardised.
inline PseudoOutcomes dr_pseudo_outcomes(const CausalDataset& dataset,
                                         const NuisanceFits& nuisance) {
  const Eigen::Index n = dataset.n();
  if (nuisance.mu0_hat.size() != n || nuisance.mu1_hat.size() != n ||
      nuisance.pi_hat.size() != n) {
    throw std::invalid_argument("dr_pseudo_outcomes: nuisance does not cover dataset");
  }
  PseudoOutcomes out;
  out.d.resize(n);
  out.weights = Eigen::VectorXd::Ones(n);
  out.source_arm.resize(n);
  const double scale = nuisance.y_scale;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pi = nuisance.pi_hat[i];
    if (!(pi > 0.0) || !(pi < 1.0)) {
      throw std::runtime_error("dr_pseudo_outcomes: propensity at boundary");
    }
    const double y = dataset.y[i] / scale;
    const double contrast = nuisance.mu1_hat[i] - nuisance.mu0_hat[i];
    double d_std;
    if (dataset.w[i] == 1) {
      d_std = contrast + (y - nuisance.mu1_hat[i]) / pi;
    } else {
      d_std = contrast - (y - nuisance.mu0_hat[i]) / (1.0 - pi);
    }
    out.d[i] = scale * d_std;
    out.source_arm[i] = dataset.w[i];
    if (!std::isfinite(out.d[i])) {
      throw std::runtime_error("dr_pseudo_outcomes: non-finite pseudo-outcome");
    }
  }
  return out;
}

/// Overlap weights pi(1-pi), normalised to mean 1 so eta calibration is
/// comparable across weighted and unweighted runs.
inline Eigen::VectorXd overlap_weights(const Eigen::VectorXd& pi_hat) {
  const Eigen::Index n = pi_hat.size();
  if (n == 0) throw std::invalid_argument("overlap_weights: empty input");
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(pi_hat[i] > 0.0) || !(pi_hat[i] < 1.0)) {
      throw std::invalid_argument("overlap_weights: pi outside (0,1)");
    }
    w[i] = pi_hat[i] * (1.0 - pi_hat[i]);
  }
  w *= static_cast<double>(n) / w.sum();
  return w;
}

}  // namespace robust_cate
