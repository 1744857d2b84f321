#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "robust_cate/nuts.hpp"

namespace robust_cate {

struct ChainDiagnostics {
  Eigen::VectorXd r_hat;
  Eigen::VectorXd ess;
  Eigen::VectorXd iac;
  std::vector<double> bfmi;
  int divergences = 0;

  double max_r_hat() const { return r_hat.maxCoeff(); }
  double min_ess() const { return ess.minCoeff(); }
  double min_bfmi() const {
    double m = std::numeric_limits<double>::infinity();
    for (double b : bfmi) m = std::min(m, b);
    return m;
  }
};

namespace diag_detail {

inline double sample_variance(const Eigen::VectorXd& v) {
  const double m = v.mean();
  return (v.array() - m).square().sum() / (v.size() - 1.0);
}

/// Autocovariance at the given lag (biased 1/n normalisation, as standard
/// for ESS estimation).
inline double autocovariance(const Eigen::VectorXd& v, int lag) {
  const double m = v.mean();
  double acc = 0.0;
  for (int t = 0; t + lag < v.size(); ++t) {
    acc += (v[t] - m) * (v[t + lag] - m);
  }
  return acc / v.size();
}

}  // namespace diag_detail

/// Split-Rhat, bulk ESS via Geyer-paired autocorrelation sums, integrated
/// autocorrelation time, per-chain BFMI, and the divergence count.
inline ChainDiagnostics diagnose(const PosteriorDraws& draws) {
  const int n_chains = draws.n_chains();
  const int n = draws.n_samples();
  const int dim = draws.dim();
  if (n_chains < 2) throw std::invalid_argument("diagnose: need >= 2 chains");
  if (n < 10) throw std::invalid_argument("diagnose: need >= 10 draws per chain");

  ChainDiagnostics out;
  out.divergences = draws.divergence_count;
  out.r_hat.resize(dim);
  out.ess.resize(dim);
  out.iac.resize(dim);

  // split each chain into halves
  const int half = n / 2;
  const int n_segments = 2 * n_chains;
  for (int j = 0; j < dim; ++j) {
    std::vector<Eigen::VectorXd> segments;
    segments.reserve(n_segments);
    for (int c = 0; c < n_chains; ++c) {
      const Eigen::VectorXd col = draws.chains[c].col(j);
      segments.push_back(col.head(half));
      segments.push_back(col.segment(half, half));
    }

    double w = 0.0;
    Eigen::VectorXd seg_means(n_segments);
    for (int s = 0; s < n_segments; ++s) {
      seg_means[s] = segments[s].mean();
      w += diag_detail::sample_variance(segments[s]);
    }
    w /= n_segments;
    const double b_over_n = diag_detail::sample_variance(seg_means);
    const double var_plus = (half - 1.0) / half * w + b_over_n;

    if (w <= 0.0) {
      // all segments constant: chains agree exactly
      out.r_hat[j] = 1.0;
      out.ess[j] = static_cast<double>(draws.total_draws());
      out.iac[j] = 1.0;
      continue;
    }
    // floored at 1: values below are estimation noise
    out.r_hat[j] = std::max(1.0, std::sqrt(var_plus / w));

    // Geyer initial monotone positive sequence on the mean autocorrelation
    double rho_prev_pair = 0.0;
    double sum_pairs = 0.0;
    bool first_pair = true;
    for (int k = 0; 2 * k + 1 < half; ++k) {
      double acov_even = 0.0, acov_odd = 0.0;
      for (int s = 0; s < n_segments; ++s) {
        acov_even += diag_detail::autocovariance(segments[s], 2 * k);
        acov_odd += diag_detail::autocovariance(segments[s], 2 * k + 1);
      }
      acov_even /= n_segments;
      acov_odd /= n_segments;
      const double rho_even = 1.0 - (w - acov_even) / var_plus;
      const double rho_odd = 1.0 - (w - acov_odd) / var_plus;
      double pair = rho_even + rho_odd;
      if (pair <= 0.0) break;
      if (!first_pair && pair > rho_prev_pair) pair = rho_prev_pair;
      sum_pairs += pair;
      rho_prev_pair = pair;
      first_pair = false;
    }
    const double tau = std::max(1.0, -1.0 + 2.0 * sum_pairs);
    out.iac[j] = tau;
    out.ess[j] = std::min(static_cast<double>(draws.total_draws()),
                          draws.total_draws() / tau);
  }

  // BFMI per chain: Var[dE]/Var[E] on the stored energies.
  out.bfmi.resize(n_chains);
  for (int c = 0; c < n_chains; ++c) {
    const Eigen::VectorXd e = draws.energy.row(c);
    Eigen::VectorXd de(e.size() - 1);
    for (int t = 0; t + 1 < e.size(); ++t) de[t] = e[t + 1] - e[t];
    const double var_e = diag_detail::sample_variance(e);
    out.bfmi[c] = var_e > 0.0 ? diag_detail::sample_variance(de) / var_e
                              : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

}  // namespace robust_cate
