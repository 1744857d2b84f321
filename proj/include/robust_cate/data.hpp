#pragma once

#include <Eigen/Core>
#include <optional>
#include <stdexcept>

namespace robust_cate {

/// Observational sample: covariates, binary treatment, outcome, and (for
/// synthetic data) the ground-truth CATE per unit.
struct CausalDataset {
  Eigen::MatrixXd x;
  Eigen::VectorXi w;
  Eigen::VectorXd y;
  std::optional<Eigen::VectorXd> tau_true;

  Eigen::Index n() const { return y.size(); }
  Eigen::Index dim() const { return x.cols(); }

  void validate() const {
    if (x.rows() != y.size() || w.size() != y.size()) {
      throw std::invalid_argument("CausalDataset: row count mismatch");
    }
    if (tau_true && tau_true->size() != y.size()) {
      throw std::invalid_argument("CausalDataset: tau_true size mismatch");
    }
    bool any_treated = false, any_control = false;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      if (w[i] != 0 && w[i] != 1) {
        throw std::invalid_argument("CausalDataset: treatment must be 0/1");
      }
      (w[i] == 1 ? any_treated : any_control) = true;
      if (!std::isfinite(y[i])) {
        throw std::invalid_argument("CausalDataset: non-finite outcome");
      }
    }
    if (!any_treated || !any_control) {
      throw std::invalid_argument("CausalDataset: both arms required");
    }
  }

  bool has_both_arms() const {
    bool t = false, c = false;
    for (Eigen::Index i = 0; i < w.size(); ++i) (w[i] == 1 ? t : c) = true;
    return t && c;
  }
};

}  // namespace robust_cate
