#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <vector>

#include "robust_cate/basis.hpp"
#include "robust_cate/numeric.hpp"
#include "robust_cate/nuts.hpp"

namespace robust_cate {

struct BetaSummary {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
  Eigen::VectorXd q025;
  Eigen::VectorXd q500;
  Eigen::VectorXd q975;
};

struct CateSummary {
  Eigen::VectorXd tau_mean;
  Eigen::VectorXd tau_lo;
  Eigen::VectorXd tau_hi;
  BetaSummary beta;
};

struct FunctionalSummary {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double sd = 0.0;
};

namespace summary_detail {

inline std::pair<double, double> equal_tailed_ci(std::vector<double> values,
                                                 double level = 0.95) {
  const double alpha = 1.0 - level;
  const double lo = quantile(values, alpha / 2.0);
  const double hi = quantile(std::move(values), 1.0 - alpha / 2.0);
  return {lo, hi};
}

}  // namespace summary_detail

/// Posterior of the linear functional a' beta: mean and equal-tailed 95% CI.
/// Draw columns beyond a's length (an inferred scale parameter) are ignored.
inline FunctionalSummary linear_functional_summary(const PosteriorDraws& draws,
                                                   const Eigen::VectorXd& a,
                                                   double level = 0.95) {
  if (a.size() == 0 || a.isZero(0.0)) {
    throw std::invalid_argument("functional summary: contrast must be nonzero");
  }
  if (a.size() > draws.dim()) {
    throw std::invalid_argument("functional summary: contrast too long");
  }
  const Eigen::MatrixXd stacked = draws.stacked();
  const Eigen::VectorXd values = stacked.leftCols(a.size()) * a;
  FunctionalSummary out;
  out.mean = values.mean();
  out.sd = std::sqrt((values.array() - out.mean).square().sum() /
                     std::max<Eigen::Index>(1, values.size() - 1));
  std::vector<double> v(values.data(), values.data() + values.size());
  std::tie(out.lo, out.hi) = summary_detail::equal_tailed_ci(std::move(v), level);
  return out;
}

/// Per-unit posterior mean and equal-tailed 95% credible interval of
/// phi(x)' beta at the evaluation design matrix.
inline CateSummary summarize_cate(const PosteriorDraws& draws,
                                  const Eigen::MatrixXd& phi_eval,
                                  double level = 0.95) {
  const int p = static_cast<int>(phi_eval.cols());
  if (p > draws.dim()) {
    throw std::invalid_argument("summarize_cate: dimension mismatch");
  }
  const Eigen::MatrixXd stacked = draws.stacked();
  const Eigen::MatrixXd beta = stacked.leftCols(p);

  CateSummary out;
  const Eigen::Index n_eval = phi_eval.rows();
  out.tau_mean.resize(n_eval);
  out.tau_lo.resize(n_eval);
  out.tau_hi.resize(n_eval);
  // tau draws one unit at a time; n_eval x draws fits easily at desk scale
  for (Eigen::Index i = 0; i < n_eval; ++i) {
    const Eigen::VectorXd tau = beta * phi_eval.row(i).transpose();
    out.tau_mean[i] = tau.mean();
    std::vector<double> v(tau.data(), tau.data() + tau.size());
    std::tie(out.tau_lo[i], out.tau_hi[i]) =
        summary_detail::equal_tailed_ci(std::move(v), level);
  }

  out.beta.mean.resize(p);
  out.beta.sd.resize(p);
  out.beta.q025.resize(p);
  out.beta.q500.resize(p);
  out.beta.q975.resize(p);
  for (int j = 0; j < p; ++j) {
    const Eigen::VectorXd col = beta.col(j);
    out.beta.mean[j] = col.mean();
    out.beta.sd[j] = std::sqrt((col.array() - out.beta.mean[j]).square().sum() /
                               std::max<Eigen::Index>(1, col.size() - 1));
    std::vector<double> v(col.data(), col.data() + col.size());
    out.beta.q025[j] = quantile(v, 0.025);
    out.beta.q500[j] = quantile(v, 0.5);
    out.beta.q975[j] = quantile(std::move(v), 0.975);
  }
  return out;
}

/// Convenience overload evaluating the basis at new covariates.
inline CateSummary summarize_cate(const PosteriorDraws& draws,
                                  const BasisSpec& spec,
                                  const Eigen::MatrixXd& x_eval,
                                  double level = 0.95) {
  return summarize_cate(draws, evaluate_basis(spec, x_eval).phi, level);
}

}  // namespace robust_cate
