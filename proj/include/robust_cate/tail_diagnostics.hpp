#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "robust_cate/data.hpp"
#include "robust_cate/gbt.hpp"
#include "robust_cate/nuisance.hpp"
#include "robust_cate/pseudo_outcomes.hpp"

namespace robust_cate {

struct TailEstimate {
  double alpha_hat = 0.0;
  double threshold = 0.0;
  int n_exceedances = 0;
};

/// Hill tail-index estimator. The threshold t is the order statistic
/// leaving floor(top_fraction * n) strict exceedances; alpha-hat is the
/// inverse mean log-exceedance 1 / mean(ln(|v| / t)).
inline TailEstimate hill_estimator(const std::vector<double>& values,
                                   double top_fraction = 0.10) {
  const int n = static_cast<int>(values.size());
  if (n < 20) throw std::invalid_argument("hill: need >= 20 values");
  if (!(top_fraction > 0.0) || top_fraction > 0.5) {
    throw std::invalid_argument("hill: top_fraction outside (0, 0.5]");
  }
  std::vector<double> abs_sorted(values.size());
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(values[i])) throw std::invalid_argument("hill: non-finite value");
    abs_sorted[i] = std::abs(values[i]);
  }
  std::sort(abs_sorted.begin(), abs_sorted.end());
  const int m = std::max(2, static_cast<int>(top_fraction * n));
  const double t = abs_sorted[n - m - 1];
  if (!(t > 0.0)) throw std::invalid_argument("hill: threshold not positive");

  double sum_log = 0.0;
  int count = 0;
  for (int i = n - m; i < n; ++i) {
    if (abs_sorted[i] > t) {
      sum_log += std::log(abs_sorted[i] / t);
      ++count;
    }
  }
  if (count < 2 || sum_log / std::max(count, 1) < 1e-12) {
    throw std::runtime_error("hill: degenerate tail");
  }
  TailEstimate out;
  out.threshold = t;
  out.n_exceedances = count;
  out.alpha_hat = count / sum_log;
  return out;
}

/// Hill plot data: alpha-hat as a function of the number of upper order
/// statistics k.
inline std::vector<std::pair<int, double>> hill_plot(
    const std::vector<double>& values, int k_min = 2, int k_max = -1) {
  const int n = static_cast<int>(values.size());
  if (n < 20) throw std::invalid_argument("hill_plot: need >= 20 values");
  if (k_max < 0) k_max = n / 2;
  std::vector<double> abs_sorted(values.size());
  for (int i = 0; i < n; ++i) abs_sorted[i] = std::abs(values[i]);
  std::sort(abs_sorted.begin(), abs_sorted.end());

  std::vector<std::pair<int, double>> plot;
  for (int k = k_min; k <= k_max && k < n; ++k) {
    const double t = abs_sorted[n - k - 1];
    if (!(t > 0.0)) continue;
    double sum_log = 0.0;
    int count = 0;
    for (int i = n - k; i < n; ++i) {
      if (abs_sorted[i] > t) {
        sum_log += std::log(abs_sorted[i] / t);
        ++count;
      }
    }
    if (count < 2 || sum_log <= 0.0) continue;
    plot.emplace_back(k, count / sum_log);
  }
  return plot;
}

struct AutoSeverityResult {
  SeverityPreset severity = SeverityPreset::None;
  double alpha_hat = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;
  std::string warning;
};

/// Pinned alpha -> severity bands: (5, inf) none, (3, 5] mild,
/// (2, 3] moderate, (-inf, 2] severe.
inline SeverityPreset severity_from_alpha(double alpha_hat) {
  if (alpha_hat > 5.0) return SeverityPreset::None;
  if (alpha_hat > 3.0) return SeverityPreset::Mild;
  if (alpha_hat > 2.0) return SeverityPreset::Moderate;
  return SeverityPreset::Severe;
}

/// Severity recommendation from a Hill fit on quick S-learner residuals:
/// alpha > 5 -> none, (3,5] -> mild, (2,3] -> moderate, <= 2 -> severe.
/// Documented failure mode: dense contamination corrupts the pre-fit and
/// the estimator recommends none where severe is needed.
inline AutoSeverityResult auto_severity(const CausalDataset& dataset,
                                        const GbtParams& quick_fit_params =
                                            GbtParams{}) {
  dataset.validate();
  const Eigen::Index n = dataset.n();
  Eigen::MatrixXd x_ext(n, dataset.dim() + 1);
  x_ext.leftCols(dataset.dim()) = dataset.x;
  for (Eigen::Index i = 0; i < n; ++i) {
    x_ext(i, dataset.dim()) = static_cast<double>(dataset.w[i]);
  }
  const GbtModel s_learner = fit_gbt(x_ext, dataset.y, quick_fit_params);
  std::vector<double> residuals(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    residuals[i] = dataset.y[i] - s_learner.predict_one(x_ext.row(i));
  }

  AutoSeverityResult out;
  try {
    const TailEstimate tail = hill_estimator(residuals, 0.10);
    out.alpha_hat = tail.alpha_hat;
  } catch (const std::exception& err) {
    out.degenerate = true;
    out.severity = SeverityPreset::None;
    out.warning = std::string("WARN.AUTOSEV Hill estimate degenerate (") +
                  err.what() + "); defaulting to severity=none";
    return out;
  }
  out.severity = severity_from_alpha(out.alpha_hat);
  return out;
}

struct OverlapCheck {
  std::vector<std::string> warnings;
  bool auto_overlap = false;
};

/// Warns when propensities approach the boundary ([0.05, 0.95]) and flags
/// the automatic overlap-weight fallback outside [0.02, 0.98].
inline OverlapCheck propensity_warnings(const Eigen::VectorXd& pi_hat) {
  if (pi_hat.size() == 0) throw std::invalid_argument("propensity_warnings: empty");
  const double lo = pi_hat.minCoeff();
  const double hi = pi_hat.maxCoeff();
  if (!(lo > 0.0) || !(hi < 1.0)) {
    throw std::invalid_argument("propensity_warnings: pi outside (0,1)");
  }
  OverlapCheck out;
  if (lo < 0.05 || hi > 0.95) {
    out.warnings.push_back(
        "WARN.OVERLAP propensity estimates outside [0.05, 0.95] (min " +
        std::to_string(lo) + ", max " + std::to_string(hi) +
        "); small-eigenvalue risk for the Welsch Hessian");
  }
  if (lo < 0.02 || hi > 0.98) {
    out.auto_overlap = true;
    out.warnings.push_back(
        "WARN.OVERLAP propensity estimates outside [0.02, 0.98]; "
        "enabling overlap weights automatically");
  }
  return out;
}

/// Legacy tail rescaling D -> D / t^alpha for |D| > t. Gated off by
/// default: the caller must supply both parameters explicitly, and the
/// pipeline attaches a strong warning when it runs. Harmful when the tail
/// carries signal.
inline PseudoOutcomes normalize_extremes(const PseudoOutcomes& d,
                                         double tail_threshold,
                                         double tail_alpha) {
  if (!(tail_threshold > 0.0)) {
    throw std::invalid_argument("normalize_extremes: threshold must be > 0");
  }
  PseudoOutcomes out = d;
  const double divisor = std::pow(tail_threshold, tail_alpha);
  for (Eigen::Index i = 0; i < out.d.size(); ++i) {
    if (std::abs(out.d[i]) > tail_threshold) {
      out.d[i] /= divisor;
    }
  }
  return out;
}

}  // namespace robust_cate
