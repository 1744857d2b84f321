#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <vector>

#include "robust_cate/calibration.hpp"
#include "robust_cate/nuts.hpp"

namespace robust_cate {

enum class Pooling { Concatenate, Rubin };

inline const char* pooling_name(Pooling pooling) {
  return pooling == Pooling::Concatenate ? "concat" : "rubin";
}

/// Cut-posterior pooling over M Bayesian-bootstrap nuisance draws.
/// Rubin variance = mean within-draw variance + (1 + 1/M) between-variance.
struct PooledPosterior {
  std::vector<PosteriorDraws> per_m_draws;
  Pooling pooling = Pooling::Concatenate;
  Eigen::VectorXd pooled_mean;
  Eigen::VectorXd pooled_var;

  int m() const { return static_cast<int>(per_m_draws.size()); }

  /// All per-m draws stacked into one matrix (the concatenated posterior).
  Eigen::MatrixXd concatenated() const {
    if (per_m_draws.empty()) throw std::logic_error("PooledPosterior: empty");
    const int dim = per_m_draws[0].dim();
    int total = 0;
    for (const auto& draws : per_m_draws) total += draws.total_draws();
    Eigen::MatrixXd out(total, dim);
    Eigen::Index row = 0;
    for (const auto& draws : per_m_draws) {
      const Eigen::MatrixXd stacked = draws.stacked();
      out.middleRows(row, stacked.rows()) = stacked;
      row += stacked.rows();
    }
    return out;
  }
};

namespace modular_detail {

struct Moments {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

inline Moments draw_moments(const PosteriorDraws& draws) {
  const Eigen::MatrixXd stacked = draws.stacked();
  Moments out;
  out.mean = stacked.colwise().mean();
  out.var.resize(stacked.cols());
  for (Eigen::Index j = 0; j < stacked.cols(); ++j) {
    out.var[j] = (stacked.col(j).array() - out.mean[j]).square().sum() /
                 (stacked.rows() - 1.0);
  }
  return out;
}

}  // namespace modular_detail

/// Fills pooled_mean / pooled_var from the per-m draws according to the
/// pooling rule.
inline void pool_posterior(PooledPosterior& pooled) {
  const int m = pooled.m();
  if (m < 1) throw std::invalid_argument("pool_posterior: no draws");
  const int dim = pooled.per_m_draws[0].dim();

  if (pooled.pooling == Pooling::Concatenate) {
    const Eigen::MatrixXd all = pooled.concatenated();
    pooled.pooled_mean = all.colwise().mean();
    pooled.pooled_var.resize(dim);
    for (int j = 0; j < dim; ++j) {
      pooled.pooled_var[j] =
          (all.col(j).array() - pooled.pooled_mean[j]).square().sum() /
          (all.rows() - 1.0);
    }
    return;
  }

  // Rubin's rules from per-m moments
  Eigen::MatrixXd means(m, dim);
  Eigen::MatrixXd vars(m, dim);
  for (int k = 0; k < m; ++k) {
    const auto moments = modular_detail::draw_moments(pooled.per_m_draws[k]);
    means.row(k) = moments.mean;
    vars.row(k) = moments.var;
  }
  pooled.pooled_mean = means.colwise().mean();
  pooled.pooled_var.resize(dim);
  for (int j = 0; j < dim; ++j) {
    const double within = vars.col(j).mean();
    const double between =
        m > 1 ? (means.col(j).array() - pooled.pooled_mean[j]).square().sum() /
                    (m - 1.0)
              : 0.0;
    pooled.pooled_var[j] = within + (1.0 + 1.0 / m) * between;
  }
}

}  // namespace robust_cate
