#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "robust_cate/data.hpp"
#include "robust_cate/rng.hpp"

namespace robust_cate {

enum class DgpKind {
  Whale,       // point-shift contamination, homogeneous tau = 2
  TailHetero,  // tau = 2 bulk, 10 for |x0| > 1.96; clean noise
  Pareto,      // additive Pareto(1.5) contamination
  TNoise,      // Student-t noise on Y0 (or alpha-stable via params)
  Bimodal,     // sign-symmetric +/- shift contamination
  LowOverlap,  // propensity logit coefficient 3.0
  DollarScale, // tau = 1000, outcomes on the 1e4 scale, +25k whales
  CleanLinear  // no contamination, linear surfaces
};

/// Synthetic benchmark description. `params` carries kind-specific knobs:
///   whale_shift (5000), logit_coef, noise_sd, tau, nu, stable_alpha,
///   pareto_alpha (1.5), tau_tail (10), tail_threshold (1.96),
///   contaminate_treated_only (0/1), b0, b_x0, b_x1.
struct DgpSpec {
  DgpKind kind = DgpKind::Whale;
  int n = 1000;
  int dim = 5;
  double density = 0.0;
  std::map<std::string, double> params;
  std::uint64_t seed = 0;

  double param(const std::string& key, double fallback) const {
    const auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }
};

struct GeneratedData {
  CausalDataset dataset;
  Eigen::VectorXd tau_true;
  Eigen::VectorXi contaminated_mask;
  Eigen::VectorXi subgroup_mask;
};

inline const char* dgp_kind_name(DgpKind kind) {
  switch (kind) {
    case DgpKind::Whale: return "whale";
    case DgpKind::TailHetero: return "tail_hetero";
    case DgpKind::Pareto: return "pareto";
    case DgpKind::TNoise: return "t_noise";
    case DgpKind::Bimodal: return "bimodal";
    case DgpKind::LowOverlap: return "low_overlap";
    case DgpKind::DollarScale: return "dollar_scale";
    case DgpKind::CleanLinear: return "clean_linear";
  }
  return "unknown";
}

inline DgpKind dgp_kind_from_name(const std::string& name) {
  for (DgpKind kind : {DgpKind::Whale, DgpKind::TailHetero, DgpKind::Pareto,
                       DgpKind::TNoise, DgpKind::Bimodal, DgpKind::LowOverlap,
                       DgpKind::DollarScale, DgpKind::CleanLinear}) {
    if (name == dgp_kind_name(kind)) return kind;
  }
  throw std::invalid_argument("unknown DGP kind: " + name);
}

/// Draws a full synthetic dataset. The RNG call order (covariates,
/// treatment, noise, contamination) is fixed so identical specs are
/// byte-identical.
inline GeneratedData generate(const DgpSpec& spec) {
  if (spec.n < 50) throw std::invalid_argument("dgp: n must be >= 50");
  if (spec.dim < 2) throw std::invalid_argument("dgp: dim must be >= 2");
  if (spec.density < 0.0 || spec.density > 1.0) {
    throw std::invalid_argument("dgp: density outside [0,1]");
  }
  const bool dollar = spec.kind == DgpKind::DollarScale;
  const double logit_coef =
      spec.param("logit_coef", spec.kind == DgpKind::LowOverlap ? 3.0 : 0.3);
  const double noise_sd = spec.param("noise_sd", dollar ? 2000.0 : 1.0);
  const double tau_base = spec.param("tau", dollar ? 1000.0 : 2.0);
  const double tau_tail = spec.param("tau_tail", 10.0);
  const double tail_threshold = spec.param("tail_threshold", 1.96);
  const double shift = spec.param("whale_shift", dollar ? 25000.0 : 5000.0);
  const double pareto_alpha = spec.param("pareto_alpha", 1.5);
  const double nu = spec.param("nu", 3.0);
  const double stable_alpha = spec.param("stable_alpha", 0.0);
  const bool treated_only = spec.param("contaminate_treated_only", 0.0) != 0.0;
  const double b0 = spec.param("b0", dollar ? 1000.0 : 1.0);
  const double b_x0 = spec.param("b_x0", dollar ? 500.0 : 0.5);
  const double b_x1 = spec.param("b_x1", dollar ? 500.0 : 0.5);
  double density = spec.density;
  if (dollar && spec.params.find("density") == spec.params.end() &&
      spec.density == 0.0) {
    density = 0.10;
  }

  Rng rng(derive_seed(spec.seed, 0x4d47'5044ULL));
  const int n = spec.n;

  GeneratedData out;
  out.dataset.x.resize(n, spec.dim);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < spec.dim; ++j) out.dataset.x(i, j) = rng.normal();
  }

  out.dataset.w.resize(n);
  for (int i = 0; i < n; ++i) {
    const double pi = 1.0 / (1.0 + std::exp(-logit_coef * out.dataset.x(i, 0)));
    out.dataset.w[i] = rng.bernoulli(pi) ? 1 : 0;
  }

  out.tau_true.resize(n);
  out.subgroup_mask = Eigen::VectorXi::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (spec.kind == DgpKind::TailHetero) {
      const bool in_tail = std::abs(out.dataset.x(i, 0)) > tail_threshold;
      out.subgroup_mask[i] = in_tail ? 1 : 0;
      out.tau_true[i] = in_tail ? tau_tail : tau_base;
    } else {
      out.tau_true[i] = tau_base;
    }
  }

  out.dataset.y.resize(n);
  for (int i = 0; i < n; ++i) {
    double noise;
    if (spec.kind == DgpKind::TNoise) {
      noise = stable_alpha > 0.0 ? rng.alpha_stable(stable_alpha)
                                 : rng.student_t(nu);
      noise *= noise_sd;
    } else {
      noise = noise_sd * rng.normal();
    }
    const double y0 = b0 + b_x0 * out.dataset.x(i, 0) +
                      b_x1 * out.dataset.x(i, 1) + noise;
    out.dataset.y[i] =
        out.dataset.w[i] == 1 ? y0 + out.tau_true[i] : y0;
  }

  out.contaminated_mask = Eigen::VectorXi::Zero(n);
  const bool contaminates =
      spec.kind == DgpKind::Whale || spec.kind == DgpKind::Pareto ||
      spec.kind == DgpKind::Bimodal || spec.kind == DgpKind::LowOverlap ||
      spec.kind == DgpKind::DollarScale;
  if (contaminates && density > 0.0) {
    for (int i = 0; i < n; ++i) {
      if (treated_only && out.dataset.w[i] != 1) continue;
      if (!rng.bernoulli(density)) continue;
      out.contaminated_mask[i] = 1;
      switch (spec.kind) {
        case DgpKind::Pareto:
          out.dataset.y[i] += rng.pareto(pareto_alpha);
          break;
        case DgpKind::Bimodal:
          out.dataset.y[i] += rng.bernoulli(0.5) ? shift : -shift;
          break;
        default:
          out.dataset.y[i] += shift;
          break;
      }
    }
  }

  out.dataset.tau_true = out.tau_true;
  return out;
}

}  // namespace robust_cate
