#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "robust_cate/numeric.hpp"

namespace robust_cate {

enum class LossFamily { SquaredError, Huber, Welsch, Tukey };

/// A robust loss with its tuning constant. The constant is ignored for
/// squared error; Huber uses delta, Welsch and Tukey use c.
struct LossKind {
  LossFamily family = LossFamily::SquaredError;
  double tuning = 0.0;

  static LossKind squared_error() { return {LossFamily::SquaredError, 0.0}; }
  static LossKind huber(double delta) {
    check_tuning(delta, "Huber delta");
    return {LossFamily::Huber, delta};
  }
  static LossKind welsch(double c) {
    check_tuning(c, "Welsch c");
    return {LossFamily::Welsch, c};
  }
  static LossKind tukey(double c) {
    check_tuning(c, "Tukey c");
    return {LossFamily::Tukey, c};
  }

 private:
  static void check_tuning(double value, const char* name) {
    if (!(value > 0.0) || !std::isfinite(value)) {
      throw std::invalid_argument(std::string(name) +
                                  " must be positive and finite");
    }
  }
};

/// rho(r), psi(r) = rho'(r), psi'(r) at one residual.
struct LossEval {
  double rho = 0.0;
  double psi = 0.0;
  double psi_prime = 0.0;
};

/// Closed forms:
///   Welsch: rho = (c^2/2)(1 - exp(-r^2/c^2)), psi = r exp(-r^2/c^2)
///   Huber:  psi = r for |r| <= delta, delta*sign(r) beyond
///   Tukey:  rho = (c^2/6)[1 - (1 - (r/c)^2)^3] inside |r| < c, constant outside
inline LossEval evaluate_loss(const LossKind& kind, double r) {
  if (!std::isfinite(r)) throw std::invalid_argument("evaluate_loss: non-finite residual");
  LossEval out;
  switch (kind.family) {
    case LossFamily::SquaredError:
      out.rho = 0.5 * r * r;
      out.psi = r;
      out.psi_prime = 1.0;
      break;
    case LossFamily::Huber: {
      const double delta = kind.tuning;
      if (std::abs(r) <= delta) {
        out.rho = 0.5 * r * r;
        out.psi = r;
        out.psi_prime = 1.0;
      } else {
        out.rho = delta * (std::abs(r) - 0.5 * delta);
        out.psi = r > 0.0 ? delta : -delta;
        out.psi_prime = 0.0;
      }
      break;
    }
    case LossFamily::Welsch: {
      const double c = kind.tuning;
      const double z = (r / c) * (r / c);
      const double e = std::exp(-z);
      out.rho = 0.5 * c * c * (1.0 - e);
      out.psi = r * e;
      out.psi_prime = e * (1.0 - 2.0 * z);
      break;
    }
    case LossFamily::Tukey: {
      const double c = kind.tuning;
      if (std::abs(r) < c) {
        const double u = (r / c) * (r / c);
        const double one_u = 1.0 - u;
        out.rho = (c * c / 6.0) * (1.0 - one_u * one_u * one_u);
        out.psi = r * one_u * one_u;
        out.psi_prime = one_u * (1.0 - 5.0 * u);
      } else {
        out.rho = c * c / 6.0;
        out.psi = 0.0;
        out.psi_prime = 0.0;
      }
      break;
    }
  }
  return out;
}

/// Huber's minimax tuning constant: the delta solving
///   phi(delta)/delta - (1 - Phi(delta)) = eps / (2 (1 - eps))
/// for an assumed contamination rate eps, found by bisection on [1e-6, 10].
inline double minimax_delta(double epsilon) {
  if (!(epsilon > 0.0) || !(epsilon < 0.5)) {
    throw std::invalid_argument("minimax_delta: epsilon must lie in (0, 0.5)");
  }
  const double target = epsilon / (2.0 * (1.0 - epsilon));
  const auto f = [&](double delta) {
    return norm_pdf(delta) / delta - (1.0 - norm_cdf(delta)) - target;
  };
  double lo = 1e-6, hi = 10.0;
  if (f(lo) < 0.0 || f(hi) > 0.0) {
    throw std::runtime_error("minimax_delta: bracket failure");
  }
  // f is strictly decreasing; ~80 bisections reach machine precision.
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-15 * (1.0 + hi)) break;
  }
  return 0.5 * (lo + hi);
}

/// Asymptotic relative efficiency of the Huber estimator at the standard
/// normal: (E[psi'])^2 / Var[psi], by quadrature on [-12, 12].
inline double huber_are(double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    throw std::invalid_argument("huber_are: delta must be positive");
  }
  const LossKind kind = LossKind::huber(delta);
  const auto e_psi_prime = integrate(
      [&](double r) { return evaluate_loss(kind, r).psi_prime * norm_pdf(r); },
      -12.0, 12.0, 1e-10);
  const auto e_psi_sq = integrate(
      [&](double r) {
        const double psi = evaluate_loss(kind, r).psi;
        return psi * psi * norm_pdf(r);
      },
      -12.0, 12.0, 1e-10);
  return e_psi_prime * e_psi_prime / e_psi_sq;
}

/// Median absolute deviation about the median. With consistency scaling the
/// result is divided by 0.6745 so it estimates sigma at the normal.
inline double mad(std::span<const double> values, bool consistency_scaled) {
  if (values.size() < 2) throw std::invalid_argument("mad: need >= 2 values");
  std::vector<double> work(values.begin(), values.end());
  for (double v : work) {
    if (!std::isfinite(v)) throw std::invalid_argument("mad: non-finite value");
  }
  const double med = median(work);
  for (double& v : work) v = std::abs(v - med);
  const double raw = median(std::move(work));
  if (raw <= 0.0) {
    throw std::invalid_argument("mad: zero scale (values too concentrated)");
  }
  return consistency_scaled ? raw / 0.6745 : raw;
}

}  // namespace robust_cate
