#pragma once

#include <Eigen/Core>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "robust_cate/losses.hpp"
#include "robust_cate/numeric.hpp"
#include "robust_cate/pseudo_outcomes.hpp"

namespace robust_cate {

enum class LikelihoodFamily { Welsch, Gaussian, StudentT, Tukey };

/// Pseudo-likelihood for the generalised posterior
///   p_eta(beta | D) ∝ p(beta) exp(-eta sum_i w_i rho(r_i)).
/// Gaussian/Student-t scale sigma is inferred with a half-Cauchy(1) prior
/// unless sigma_fixed; Welsch/Tukey have no scale parameter (c is fixed,
/// optionally MAD-rescaled once at fit start).
struct LikelihoodSpec {
  LikelihoodFamily family = LikelihoodFamily::Welsch;
  double c = 1.34;
  double nu = 4.0;
  double sigma = 1.0;
  bool sigma_fixed = false;
  double eta = 1.0;
  bool mad_rescale = false;
  std::optional<Eigen::VectorXd> weights;

  static LikelihoodSpec welsch(double c = 1.34) {
    LikelihoodSpec lik;
    lik.family = LikelihoodFamily::Welsch;
    lik.c = c;
    return lik;
  }
  static LikelihoodSpec gaussian(double sigma = 1.0, bool fixed = false) {
    LikelihoodSpec lik;
    lik.family = LikelihoodFamily::Gaussian;
    lik.sigma = sigma;
    lik.sigma_fixed = fixed;
    return lik;
  }
  static LikelihoodSpec student_t(double nu = 4.0, double sigma = 1.0,
                                  bool fixed = false) {
    LikelihoodSpec lik;
    lik.family = LikelihoodFamily::StudentT;
    lik.nu = nu;
    lik.sigma = sigma;
    lik.sigma_fixed = fixed;
    return lik;
  }
  static LikelihoodSpec tukey(double c = 4.685) {
    LikelihoodSpec lik;
    lik.family = LikelihoodFamily::Tukey;
    lik.c = c;
    return lik;
  }

  bool has_scale_parameter() const {
    return (family == LikelihoodFamily::Gaussian ||
            family == LikelihoodFamily::StudentT) &&
           !sigma_fixed;
  }

  void validate() const {
    if (!(eta > 0.0)) throw std::invalid_argument("likelihood: eta must be > 0");
    if ((family == LikelihoodFamily::Welsch ||
         family == LikelihoodFamily::Tukey) &&
        !(c > 0.0)) {
      throw std::invalid_argument("likelihood: c must be > 0");
    }
    if (family == LikelihoodFamily::StudentT && !(nu > 0.0)) {
      throw std::invalid_argument("likelihood: nu must be > 0");
    }
    if ((family == LikelihoodFamily::Gaussian ||
         family == LikelihoodFamily::StudentT) &&
        !(sigma > 0.0)) {
      throw std::invalid_argument("likelihood: sigma must be > 0");
    }
  }
};

enum class PriorFamily { StudentT, Gaussian };

/// Coefficient prior; Student-t(nu=3) by default, scale sigma_beta.
struct PriorSpec {
  PriorFamily family = PriorFamily::StudentT;
  double scale = 10.0;
  double nu = 3.0;

  void validate() const {
    if (!(scale > 0.0)) throw std::invalid_argument("prior: scale must be > 0");
    if (family == PriorFamily::StudentT && !(nu > 0.0)) {
      throw std::invalid_argument("prior: nu must be > 0");
    }
  }
};

/// Applies the one-time MAD rescale of the tuning constant; returns a spec
/// with mad_rescale cleared so the adjustment cannot compound.
inline LikelihoodSpec resolve_likelihood(const LikelihoodSpec& lik,
                                         const Eigen::VectorXd& d) {
  LikelihoodSpec resolved = lik;
  if (lik.mad_rescale && (lik.family == LikelihoodFamily::Welsch ||
                          lik.family == LikelihoodFamily::Tukey)) {
    const std::vector<double> dv(d.data(), d.data() + d.size());
    resolved.c = lik.c * mad(dv, /*consistency_scaled=*/true);
  }
  resolved.mad_rescale = false;
  return resolved;
}

namespace posterior_detail {

struct RhoEval {
  double rho;        // per-unit negative log-likelihood (up to constants)
  double psi;        // d rho / d r
  double drho_dlogs; // d rho / d log(sigma); 0 for Welsch/Tukey
};

inline RhoEval eval_rho(const LikelihoodSpec& lik, double r, double sigma) {
  switch (lik.family) {
    case LikelihoodFamily::Welsch: {
      const auto e = evaluate_loss(LossKind::welsch(lik.c), r);
      return {e.rho, e.psi, 0.0};
    }
    case LikelihoodFamily::Tukey: {
      const auto e = evaluate_loss(LossKind::tukey(lik.c), r);
      return {e.rho, e.psi, 0.0};
    }
    case LikelihoodFamily::Gaussian: {
      const double inv_s2 = 1.0 / (sigma * sigma);
      return {0.5 * r * r * inv_s2 + std::log(sigma), r * inv_s2,
              1.0 - r * r * inv_s2};
    }
    case LikelihoodFamily::StudentT: {
      const double denom = lik.nu * sigma * sigma + r * r;
      const double rho = 0.5 * (lik.nu + 1.0) *
                             std::log1p(r * r / (lik.nu * sigma * sigma)) +
                         std::log(sigma);
      return {rho, (lik.nu + 1.0) * r / denom,
              1.0 - (lik.nu + 1.0) * r * r / denom};
    }
  }
  return {0.0, 0.0, 0.0};
}

inline double prior_log_density(const PriorSpec& prior, double b) {
  if (prior.family == PriorFamily::Gaussian) {
    return -0.5 * b * b / (prior.scale * prior.scale);
  }
  return -0.5 * (prior.nu + 1.0) *
         std::log1p(b * b / (prior.nu * prior.scale * prior.scale));
}

inline double prior_grad(const PriorSpec& prior, double b) {
  if (prior.family == PriorFamily::Gaussian) {
    return -b / (prior.scale * prior.scale);
  }
  return -(prior.nu + 1.0) * b / (prior.nu * prior.scale * prior.scale + b * b);
}

}  // namespace posterior_detail

/// Generalised-posterior log density and exact gradient in beta, with the
/// likelihood scale held at lik.sigma. Returns log p up to an additive
/// constant.
inline std::pair<double, Eigen::VectorXd> log_density_and_grad(
    const Eigen::VectorXd& beta, const Eigen::MatrixXd& phi,
    const PseudoOutcomes& d, const LikelihoodSpec& lik_in,
    const PriorSpec& prior) {
  lik_in.validate();
  prior.validate();
  if (phi.cols() != beta.size() || phi.rows() != d.d.size()) {
    throw std::invalid_argument("log_density_and_grad: dimension mismatch");
  }
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    if (!std::isfinite(beta[j])) {
      throw std::invalid_argument("log_density_and_grad: non-finite beta");
    }
  }
  const LikelihoodSpec lik = resolve_likelihood(lik_in, d.d);
  const Eigen::VectorXd& weights =
      lik.weights ? *lik.weights : d.weights;
  if (weights.size() != d.d.size()) {
    throw std::invalid_argument("log_density_and_grad: weights size mismatch");
  }

  double logp = 0.0;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(beta.size());
  const Eigen::VectorXd fitted = phi * beta;
  for (Eigen::Index i = 0; i < d.d.size(); ++i) {
    const double r = d.d[i] - fitted[i];
    const auto e = posterior_detail::eval_rho(lik, r, lik.sigma);
    logp -= lik.eta * weights[i] * e.rho;
    grad += (lik.eta * weights[i] * e.psi) * phi.row(i).transpose();
  }
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    logp += posterior_detail::prior_log_density(prior, beta[j]);
    grad[j] += posterior_detail::prior_grad(prior, beta[j]);
  }
  return {logp, std::move(grad)};
}

/// Callable target for the sampler. When the likelihood scale is inferred,
/// the parameter vector is (beta, log sigma) and the half-Cauchy(1) prior
/// on sigma enters with its log-transform Jacobian.
class PosteriorTarget {
 public:
  PosteriorTarget(Eigen::MatrixXd phi, Eigen::VectorXd d,
                  Eigen::VectorXd weights, LikelihoodSpec lik, PriorSpec prior)
      : phi_(std::move(phi)),
        d_(std::move(d)),
        weights_(std::move(weights)),
        lik_(std::move(lik)),
        prior_(prior) {
    lik_.validate();
    prior_.validate();
    if (phi_.rows() != d_.size() || weights_.size() != d_.size()) {
      throw std::invalid_argument("PosteriorTarget: dimension mismatch");
    }
  }

  int beta_dim() const { return static_cast<int>(phi_.cols()); }
  int dim() const { return beta_dim() + (lik_.has_scale_parameter() ? 1 : 0); }
  const LikelihoodSpec& likelihood() const { return lik_; }

  double operator()(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const {
    const int p = beta_dim();
    const bool infer_scale = lik_.has_scale_parameter();
    const double log_s = infer_scale ? q[p] : 0.0;
    const double sigma = infer_scale ? std::exp(log_s) : lik_.sigma;

    double logp = 0.0;
    grad.setZero(dim());
    const Eigen::VectorXd fitted = phi_ * q.head(p);
    for (Eigen::Index i = 0; i < d_.size(); ++i) {
      const double r = d_[i] - fitted[i];
      const auto e = posterior_detail::eval_rho(lik_, r, sigma);
      const double scale_w = lik_.eta * weights_[i];
      logp -= scale_w * e.rho;
      grad.head(p) += (scale_w * e.psi) * phi_.row(i).transpose();
      if (infer_scale) grad[p] -= scale_w * e.drho_dlogs;
    }
    for (int j = 0; j < p; ++j) {
      logp += posterior_detail::prior_log_density(prior_, q[j]);
      grad[j] += posterior_detail::prior_grad(prior_, q[j]);
    }
    if (infer_scale) {
      // half-Cauchy(1) on sigma, log-transformed: log p(s) = s - log(1+e^{2s})
      const double e2s = std::exp(2.0 * log_s);
      logp += log_s - std::log1p(e2s);
      grad[p] += 1.0 - 2.0 * e2s / (1.0 + e2s);
    }
    return logp;
  }

 private:
  Eigen::MatrixXd phi_;
  Eigen::VectorXd d_;
  Eigen::VectorXd weights_;
  LikelihoodSpec lik_;
  PriorSpec prior_;
};

inline PosteriorTarget build_posterior_target(const Eigen::MatrixXd& phi,
                                              const PseudoOutcomes& d,
                                              const LikelihoodSpec& lik,
                                              const PriorSpec& prior) {
  const LikelihoodSpec resolved = resolve_likelihood(lik, d.d);
  const Eigen::VectorXd weights = resolved.weights ? *resolved.weights : d.weights;
  return PosteriorTarget(phi, d.d, weights, resolved, prior);
}

}  // namespace robust_cate
