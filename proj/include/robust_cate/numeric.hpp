#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace robust_cate {

inline double mean(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean: empty input");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

/// Unbiased sample variance (n - 1 denominator).
inline double variance(std::span<const double> values) {
  if (values.size() < 2) throw std::invalid_argument("variance: need >= 2");
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return ss / static_cast<double>(values.size() - 1);
}

inline double stddev(std::span<const double> values) {
  return std::sqrt(variance(values));
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty input");
  const std::size_t n = values.size();
  std::nth_element(values.begin(), values.begin() + n / 2, values.end());
  double hi = values[n / 2];
  if (n % 2 == 1) return hi;
  std::nth_element(values.begin(), values.begin() + n / 2 - 1,
                   values.begin() + n / 2);
  return 0.5 * (values[n / 2 - 1] + hi);
}

/// Linear-interpolation quantile (R type 7) on a copy of the input.
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile: empty input");
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("quantile: q outside [0,1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= values.size()) return values.back();
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

inline double weighted_mean(std::span<const double> values,
                            std::span<const double> weights) {
  if (values.size() != weights.size())
    throw std::invalid_argument("weighted_mean: size mismatch");
  double sw = 0.0, swx = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sw += weights[i];
    swx += weights[i] * values[i];
  }
  if (sw <= 0.0) throw std::invalid_argument("weighted_mean: non-positive weight sum");
  return swx / sw;
}

/// Weighted lower median: smallest value whose cumulative weight reaches half.
inline double weighted_median(std::span<const double> values,
                              std::span<const double> weights) {
  if (values.size() != weights.size() || values.empty())
    throw std::invalid_argument("weighted_median: bad input");
  std::vector<std::size_t> order(values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  double total = 0.0;
  for (double w : weights) total += w;
  double acc = 0.0;
  for (std::size_t idx : order) {
    acc += weights[idx];
    if (acc >= 0.5 * total) return values[idx];
  }
  return values[order.back()];
}

inline double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double norm_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

namespace detail {

// Gauss-Kronrod 15-point pair on [-1, 1].
constexpr double kGk15Nodes[8] = {
    0.0,
    0.2077849550078985,
    0.4058451513773972,
    0.5860872354676911,
    0.7415311855993945,
    0.8648644233597691,
    0.9491079123427585,
    0.9914553711208126};
constexpr double kGk15Weights[8] = {
    0.2094821410847278,
    0.2044329400752989,
    0.1903505780647854,
    0.1690047266392679,
    0.1406532597155259,
    0.1047900103222502,
    0.0630920926299786,
    0.0229353220105292};
constexpr double kGauss7Weights[4] = {
    0.4179591836734694,
    0.3818300505051189,
    0.2797053914892767,
    0.1294849661688697};

template <typename F>
void gk15(const F& f, double a, double b, double& result, double& err) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  double kronrod = kGk15Weights[0] * f(c);
  double gauss = kGauss7Weights[0] * f(c);
  for (int i = 1; i < 8; ++i) {
    const double fsum = f(c - h * kGk15Nodes[i]) + f(c + h * kGk15Nodes[i]);
    kronrod += kGk15Weights[i] * fsum;
    if (i % 2 == 0) gauss += kGauss7Weights[i / 2] * fsum;
  }
  result = kronrod * h;
  err = std::abs(kronrod - gauss) * h;
}

}  // namespace detail

/// Adaptive Gauss-Kronrod quadrature with interval bisection.
template <typename F>
double integrate(const F& f, double a, double b, double abs_tol = 1e-10,
                 int max_depth = 50) {
  struct Segment {
    double a, b;
    int depth;
  };
  std::vector<Segment> stack{{a, b, 0}};
  double total = 0.0;
  while (!stack.empty()) {
    const Segment seg = stack.back();
    stack.pop_back();
    double value = 0.0, err = 0.0;
    detail::gk15(f, seg.a, seg.b, value, err);
    if (err < abs_tol * (seg.b - seg.a) / (b - a) || seg.depth >= max_depth) {
      total += value;
    } else {
      const double mid = 0.5 * (seg.a + seg.b);
      stack.push_back({seg.a, mid, seg.depth + 1});
      stack.push_back({mid, seg.b, seg.depth + 1});
    }
  }
  return total;
}

inline double logsumexp(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("logsumexp: empty input");
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - m);
  return m + std::log(sum);
}

}  // namespace robust_cate
