#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace robust_cate {

struct CoverageReport {
  int covered = 0;
  int total = 0;
  double rate = 0.0;
  double wilson_lo = 0.0;
  double wilson_hi = 0.0;
  double mean_width = 0.0;
};

/// Wilson 95% score interval for k successes out of n.
inline std::pair<double, double> wilson_interval(int k, int n) {
  if (n <= 0 || k < 0 || k > n) throw std::invalid_argument("wilson_interval: bad counts");
  constexpr double z = 1.959963984540054;
  const double nn = n;
  const double p_hat = static_cast<double>(k) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double center = (p_hat + z2 / (2.0 * nn)) / denom;
  const double half =
      z * std::sqrt(p_hat * (1.0 - p_hat) / nn + z2 / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

/// Root-mean-square error between estimated and true per-unit effects.
inline double pehe(std::span<const double> tau_hat,
                   std::span<const double> tau_true) {
  if (tau_hat.size() != tau_true.size() || tau_hat.empty()) {
    throw std::invalid_argument("pehe: length mismatch");
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < tau_hat.size(); ++i) {
    const double d = tau_hat[i] - tau_true[i];
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(tau_hat.size()));
}

inline double ate_error(std::span<const double> tau_hat,
                        std::span<const double> tau_true) {
  if (tau_hat.size() != tau_true.size() || tau_hat.empty()) {
    throw std::invalid_argument("ate_error: length mismatch");
  }
  double mh = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < tau_hat.size(); ++i) {
    mh += tau_hat[i];
    mt += tau_true[i];
  }
  return std::abs(mh - mt) / static_cast<double>(tau_hat.size());
}

inline CoverageReport coverage(std::span<const std::pair<double, double>> intervals,
                               std::span<const double> truths) {
  if (intervals.size() != truths.size() || intervals.empty()) {
    throw std::invalid_argument("coverage: length mismatch");
  }
  CoverageReport report;
  report.total = static_cast<int>(intervals.size());
  double width_sum = 0.0;
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    const auto [lo, hi] = intervals[i];
    if (lo > hi) throw std::invalid_argument("coverage: lo > hi");
    if (lo <= truths[i] && truths[i] <= hi) ++report.covered;
    width_sum += hi - lo;
  }
  report.rate = static_cast<double>(report.covered) / report.total;
  std::tie(report.wilson_lo, report.wilson_hi) =
      wilson_interval(report.covered, report.total);
  report.mean_width = width_sum / report.total;
  return report;
}

/// Winkler interval score at level alpha: width plus (2/alpha)-scaled miss.
inline double winkler_score(double lo, double hi, double truth,
                            double alpha = 0.05) {
  if (lo > hi) throw std::invalid_argument("winkler_score: lo > hi");
  if (!(alpha > 0.0) || !(alpha < 1.0)) {
    throw std::invalid_argument("winkler_score: alpha outside (0,1)");
  }
  double score = hi - lo;
  if (truth < lo) score += (2.0 / alpha) * (lo - truth);
  if (truth > hi) score += (2.0 / alpha) * (truth - hi);
  return score;
}

/// Regret of the plug-in policy 1{tau_hat > 0} against the oracle policy,
/// valuing treatment of unit i at tau_true[i] and no treatment at 0.
inline double policy_regret(std::span<const double> tau_hat,
                            std::span<const double> tau_true) {
  if (tau_hat.size() != tau_true.size() || tau_hat.empty()) {
    throw std::invalid_argument("policy_regret: length mismatch");
  }
  double regret = 0.0;
  for (std::size_t i = 0; i < tau_hat.size(); ++i) {
    const double oracle = std::max(tau_true[i], 0.0);
    const double policy = tau_hat[i] > 0.0 ? tau_true[i] : 0.0;
    regret += oracle - policy;
  }
  return regret / static_cast<double>(tau_hat.size());
}

/// Coverage stratified by quantile bins of a covariate; bins have equal
/// counts up to rounding.
inline std::vector<CoverageReport> stratified_coverage(
    std::span<const std::pair<double, double>> intervals,
    std::span<const double> truths, std::span<const double> strata_values,
    int n_bins = 5) {
  if (intervals.size() != truths.size() ||
      strata_values.size() != truths.size() || intervals.empty()) {
    throw std::invalid_argument("stratified_coverage: length mismatch");
  }
  if (n_bins < 2) throw std::invalid_argument("stratified_coverage: n_bins < 2");
  const auto [mn, mx] =
      std::minmax_element(strata_values.begin(), strata_values.end());
  if (*mn == *mx) {
    throw std::invalid_argument("stratified_coverage: degenerate strata");
  }
  const std::size_t n = truths.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return strata_values[a] < strata_values[b];
  });
  std::vector<std::vector<std::pair<double, double>>> bin_intervals(n_bins);
  std::vector<std::vector<double>> bin_truths(n_bins);
  for (std::size_t rank = 0; rank < n; ++rank) {
    const auto bin = static_cast<std::size_t>(
        std::min<std::size_t>(rank * n_bins / n, n_bins - 1));
    bin_intervals[bin].push_back(intervals[order[rank]]);
    bin_truths[bin].push_back(truths[order[rank]]);
  }
  std::vector<CoverageReport> reports;
  reports.reserve(n_bins);
  for (int b = 0; b < n_bins; ++b) {
    reports.push_back(coverage(bin_intervals[b], bin_truths[b]));
  }
  return reports;
}

}  // namespace robust_cate
