#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "robust_cate/losses.hpp"
#include "robust_cate/metrics.hpp"
#include "robust_cate/nuts.hpp"
#include "robust_cate/posterior.hpp"
#include "robust_cate/rng.hpp"
#include "robust_cate/summary.hpp"

namespace robust_cate {

/// Plug-in curvature and score-covariance estimates
///   I-hat = n^-1 sum w_i psi'(r_i) phi phi',
///   J-hat = n^-1 sum w_i^2 psi(r_i)^2 phi phi',
/// with ridge stabilisation and an eigenvalue floor on I-hat.
struct SandwichMatrices {
  Eigen::MatrixXd i_hat;  // stabilised
  Eigen::MatrixXd j_hat;
  double ridge_lambda = 0.0;
  double min_eig_raw = 0.0;
  double eig_floor = 0.0;  // 1e-3 x trace of the post-ridge matrix
};

namespace calib_detail {

struct PsiPair {
  double psi;
  double psi_prime;
};

inline PsiPair likelihood_psi(const LikelihoodSpec& lik, double r,
                              double sigma) {
  switch (lik.family) {
    case LikelihoodFamily::Welsch: {
      const auto e = evaluate_loss(LossKind::welsch(lik.c), r);
      return {e.psi, e.psi_prime};
    }
    case LikelihoodFamily::Tukey: {
      const auto e = evaluate_loss(LossKind::tukey(lik.c), r);
      return {e.psi, e.psi_prime};
    }
    case LikelihoodFamily::Gaussian: {
      const double inv_s2 = 1.0 / (sigma * sigma);
      return {r * inv_s2, inv_s2};
    }
    case LikelihoodFamily::StudentT: {
      const double denom = lik.nu * sigma * sigma + r * r;
      return {(lik.nu + 1.0) * r / denom,
              (lik.nu + 1.0) * (lik.nu * sigma * sigma - r * r) /
                  (denom * denom)};
    }
  }
  return {0.0, 0.0};
}

inline SandwichMatrices sandwich_impl(
    const Eigen::VectorXd& residuals, const Eigen::MatrixXd& phi,
    const LikelihoodSpec& lik, double sigma,
    const std::optional<Eigen::VectorXd>& weights, double ridge_lambda) {
  const Eigen::Index n = residuals.size();
  const Eigen::Index p = phi.cols();
  if (phi.rows() != n || n == 0) {
    throw std::invalid_argument("estimate_sandwich: shape mismatch");
  }
  if (weights && weights->size() != n) {
    throw std::invalid_argument("estimate_sandwich: weights size mismatch");
  }
  Eigen::MatrixXd i_raw = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd j_hat = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = weights ? (*weights)[i] : 1.0;
    const auto [psi, psi_prime] = likelihood_psi(lik, residuals[i], sigma);
    const Eigen::VectorXd row = phi.row(i).transpose();
    i_raw.noalias() += (w * psi_prime) * (row * row.transpose());
    j_hat.noalias() += (w * w * psi * psi) * (row * row.transpose());
  }
  i_raw /= static_cast<double>(n);
  j_hat /= static_cast<double>(n);
  // exact symmetry in the face of accumulation order
  i_raw = 0.5 * (i_raw + i_raw.transpose()).eval();
  j_hat = 0.5 * (j_hat + j_hat.transpose()).eval();

  SandwichMatrices out;
  out.j_hat = j_hat;
  out.ridge_lambda = ridge_lambda;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> raw_eig(i_raw);
  out.min_eig_raw = raw_eig.eigenvalues().minCoeff();

  Eigen::MatrixXd ridged =
      i_raw + (ridge_lambda * i_raw.trace() / p) *
                  Eigen::MatrixXd::Identity(p, p);
  if (ridged.trace() <= 0.0) {
    throw std::runtime_error(
        "estimate_sandwich: trace of I-hat non-positive after ridge; "
        "identifiability lost under severe contamination");
  }
  out.eig_floor = 1e-3 * ridged.trace();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ridged);
  Eigen::VectorXd values = eig.eigenvalues();
  for (Eigen::Index k = 0; k < p; ++k) {
    values[k] = std::max(values[k], out.eig_floor);
  }
  out.i_hat = eig.eigenvectors() * values.asDiagonal() *
              eig.eigenvectors().transpose();
  out.i_hat = 0.5 * (out.i_hat + out.i_hat.transpose()).eval();
  return out;
}

}  // namespace calib_detail

/// Welsch-tuned plug-in (the calibration theory's default).
inline SandwichMatrices estimate_sandwich(
    const Eigen::VectorXd& residuals, const Eigen::MatrixXd& phi, double c,
    const std::optional<Eigen::VectorXd>& weights = std::nullopt,
    double ridge_lambda = 1e-2) {
  return calib_detail::sandwich_impl(residuals, phi,
                                     LikelihoodSpec::welsch(c), 1.0, weights,
                                     ridge_lambda);
}

/// Same plug-in with psi taken from an arbitrary Phase-3 likelihood.
inline SandwichMatrices estimate_sandwich_for(
    const Eigen::VectorXd& residuals, const Eigen::MatrixXd& phi,
    const LikelihoodSpec& lik, double sigma,
    const std::optional<Eigen::VectorXd>& weights = std::nullopt,
    double ridge_lambda = 1e-2) {
  return calib_detail::sandwich_impl(residuals, phi, lik, sigma, weights,
                                     ridge_lambda);
}

/// Trace-matching learning rate: tr(I^-1) / tr(I^-1 J I^-1).
inline double eta_trace(const SandwichMatrices& m) {
  const Eigen::MatrixXd i_inv = m.i_hat.ldlt().solve(
      Eigen::MatrixXd::Identity(m.i_hat.rows(), m.i_hat.cols()));
  const double numer = i_inv.trace();
  const double denom = (i_inv * m.j_hat * i_inv).trace();
  if (!(denom > 0.0)) {
    throw std::runtime_error("eta_trace: degenerate sandwich denominator");
  }
  return numer / denom;
}

/// Functional-specific learning rate for the contrast a' beta.
inline double eta_functional(const SandwichMatrices& m,
                             const Eigen::VectorXd& a) {
  if (a.size() != m.i_hat.rows() || a.isZero(0.0)) {
    throw std::invalid_argument("eta_functional: contrast must be nonzero");
  }
  const Eigen::VectorXd i_inv_a = m.i_hat.ldlt().solve(a);
  const double numer = a.dot(i_inv_a);
  const double denom = i_inv_a.dot(m.j_hat * i_inv_a);
  if (!(denom > 0.0)) {
    throw std::runtime_error("eta_functional: degenerate denominator");
  }
  return numer / denom;
}

enum class EtaMode { Off, Trace, Functional, Llb, Rbci };

struct EtaCalibration {
  double eta = 1.0;
  PosteriorDraws pilot;
  PosteriorDraws refit;
  SandwichMatrices sandwich;
  double eta_trace_value = 0.0;
  std::optional<double> eta_functional_value;
};

namespace calib_detail {

inline Eigen::VectorXd posterior_mean_beta(const PosteriorDraws& draws,
                                           int beta_dim) {
  const Eigen::MatrixXd stacked = draws.stacked();
  return stacked.leftCols(beta_dim).colwise().mean();
}

inline double posterior_sigma(const PosteriorDraws& draws,
                              const LikelihoodSpec& lik, int beta_dim) {
  if (!lik.has_scale_parameter()) return lik.sigma;
  const Eigen::MatrixXd stacked = draws.stacked();
  return std::exp(stacked.col(beta_dim).mean());
}

}  // namespace calib_detail

/// The pilot-refit learning-rate procedure:
/// (i) fit at eta = 1, (ii) residuals at the pilot posterior mean,
/// (iii) plug-in sandwich and the trace or functional formula,
/// (iv) refit at the calibrated eta.
inline EtaCalibration calibrate_eta(
    const Eigen::MatrixXd& phi, const PseudoOutcomes& d,
    const LikelihoodSpec& lik, const PriorSpec& prior,
    const SamplerConfig& sampler, std::uint64_t seed,
    EtaMode mode = EtaMode::Trace,
    const std::optional<Eigen::VectorXd>& contrast = std::nullopt,
    double ridge_lambda = 1e-2) {
  if (mode != EtaMode::Trace && mode != EtaMode::Functional) {
    throw std::invalid_argument("calibrate_eta: mode must be Trace or Functional");
  }
  EtaCalibration out;
  LikelihoodSpec pilot_lik = resolve_likelihood(lik, d.d);
  pilot_lik.eta = 1.0;
  const auto pilot_target = build_posterior_target(phi, d, pilot_lik, prior);
  out.pilot = nuts_sample(pilot_target, pilot_target.dim(), sampler,
                          derive_seed(seed, 0x5049'4c4fULL));

  const int p = static_cast<int>(phi.cols());
  const Eigen::VectorXd beta_bar =
      calib_detail::posterior_mean_beta(out.pilot, p);
  const Eigen::VectorXd residuals = d.d - phi * beta_bar;
  const double sigma =
      calib_detail::posterior_sigma(out.pilot, pilot_lik, p);
  const std::optional<Eigen::VectorXd> weights =
      pilot_lik.weights ? pilot_lik.weights
                        : std::optional<Eigen::VectorXd>(d.weights);
  out.sandwich = estimate_sandwich_for(residuals, phi, pilot_lik, sigma,
                                       weights, ridge_lambda);
  out.eta_trace_value = eta_trace(out.sandwich);
  if (mode == EtaMode::Functional) {
    if (!contrast) {
      throw std::invalid_argument("calibrate_eta: functional mode needs a contrast");
    }
    out.eta_functional_value = eta_functional(out.sandwich, *contrast);
    out.eta = *out.eta_functional_value;
  } else {
    out.eta = out.eta_trace_value;
  }
  if (!(out.eta > 0.0) || !std::isfinite(out.eta)) {
    throw std::runtime_error("calibrate_eta: calibrated eta not positive");
  }

  LikelihoodSpec refit_lik = pilot_lik;
  refit_lik.eta = out.eta;
  const auto refit_target = build_posterior_target(phi, d, refit_lik, prior);
  out.refit = nuts_sample(refit_target, refit_target.dim(), sampler,
                          derive_seed(seed, 0x5245'4649ULL));
  return out;
}

/// Weighted Huber IRLS point fit with MAD residual scale, used as the
/// bootstrap point pipeline by the LLB and RBCI selectors.
inline Eigen::VectorXd huber_irls(
    const Eigen::MatrixXd& phi, const Eigen::VectorXd& d, double delta,
    const std::optional<Eigen::VectorXd>& weights = std::nullopt,
    int max_iter = 50) {
  const Eigen::Index n = phi.rows(), p = phi.cols();
  if (d.size() != n || n < p) throw std::invalid_argument("huber_irls: bad shapes");
  Eigen::VectorXd base_w = weights ? *weights : Eigen::VectorXd::Ones(n);

  auto solve_wls = [&](const Eigen::VectorXd& w) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd row = phi.row(i).transpose();
      a.noalias() += w[i] * (row * row.transpose());
      b.noalias() += w[i] * d[i] * row;
    }
    a += 1e-10 * a.trace() * Eigen::MatrixXd::Identity(p, p);
    return Eigen::VectorXd(a.ldlt().solve(b));
  };

  Eigen::VectorXd beta = solve_wls(base_w);
  for (int iter = 0; iter < max_iter; ++iter) {
    const Eigen::VectorXd r = d - phi * beta;
    double scale;
    try {
      const std::vector<double> rv(r.data(), r.data() + n);
      scale = mad(rv, true);
    } catch (const std::invalid_argument&) {
      break;  // residuals collapsed; current beta is the fit
    }
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double z = r[i] / scale;
      w[i] = base_w[i] * (std::abs(z) <= delta ? 1.0 : delta / std::abs(z));
    }
    const Eigen::VectorXd next = solve_wls(w);
    const double step = (next - beta).norm();
    beta = next;
    if (step < 1e-9 * (1.0 + beta.norm())) break;
  }
  return beta;
}

/// Dirichlet(1,...,1) weights scaled to sum n (Bayesian bootstrap).
inline Eigen::VectorXd bayesian_bootstrap_weights(int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("bayesian_bootstrap_weights: n >= 1");
  Eigen::VectorXd w(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    w[i] = rng.exponential();
    total += w[i];
  }
  w *= static_cast<double>(n) / total;
  return w;
}

namespace calib_detail {

/// Bootstrap point fits of the robust pipeline on the fixed cross-fitted
/// pseudo-outcomes: Bayesian-bootstrap weights into a Huber IRLS fit.
inline std::vector<Eigen::VectorXd> bootstrap_point_fits(
    const Eigen::MatrixXd& phi, const PseudoOutcomes& d, double huber_delta,
    int replicates, std::uint64_t seed) {
  std::vector<Eigen::VectorXd> fits;
  fits.reserve(replicates);
  for (int b = 0; b < replicates; ++b) {
    Rng rng(derive_seed(seed, 0x4c4c'4242ULL, b));
    Eigen::VectorXd w =
        bayesian_bootstrap_weights(static_cast<int>(d.d.size()), rng);
    w = w.cwiseProduct(d.weights);
    fits.push_back(huber_irls(phi, d.d, huber_delta, w));
  }
  return fits;
}

inline double mean_posterior_variance(const PosteriorDraws& draws, int p) {
  const Eigen::MatrixXd stacked = draws.stacked();
  double acc = 0.0;
  for (int j = 0; j < p; ++j) {
    const Eigen::VectorXd col = stacked.col(j);
    const double m = col.mean();
    acc += (col.array() - m).square().sum() / (col.size() - 1.0);
  }
  return acc / p;
}

}  // namespace calib_detail

/// Loss-likelihood-bootstrap selector: pick the grid eta whose posterior
/// variance matches the variance of Huber point fits across Bayesian
/// bootstrap replicates.
inline double calibrate_eta_llb(const Eigen::MatrixXd& phi,
                                const PseudoOutcomes& d,
                                const LikelihoodSpec& lik,
                                const PriorSpec& prior,
                                const SamplerConfig& sampler,
                                std::uint64_t seed,
                                const std::vector<double>& eta_grid,
                                int b_replicates = 50,
                                double huber_delta = 1.345) {
  if (eta_grid.empty()) throw std::invalid_argument("llb: empty grid");
  const int p = static_cast<int>(phi.cols());
  const auto fits = calib_detail::bootstrap_point_fits(phi, d, huber_delta,
                                                       b_replicates, seed);
  double target_var = 0.0;
  for (int j = 0; j < p; ++j) {
    std::vector<double> coord;
    coord.reserve(fits.size());
    for (const auto& beta : fits) coord.push_back(beta[j]);
    target_var += variance(coord);
  }
  target_var /= p;
  if (!(target_var > 0.0)) {
    throw std::runtime_error("llb: bootstrap variance degenerate");
  }

  const LikelihoodSpec resolved = resolve_likelihood(lik, d.d);
  double best_eta = eta_grid.front();
  double best_gap = std::numeric_limits<double>::infinity();
  for (double eta : eta_grid) {
    LikelihoodSpec trial = resolved;
    trial.eta = eta;
    const auto target = build_posterior_target(phi, d, trial, prior);
    const auto draws = nuts_sample(target, target.dim(), sampler,
                                   derive_seed(seed, 0x4c4c'4245ULL));
    const double gap =
        std::abs(calib_detail::mean_posterior_variance(draws, p) - target_var);
    if (gap < best_gap) {
      best_gap = gap;
      best_eta = eta;
    }
  }
  return best_eta;
}

struct RbciResult {
  double omega = 1.0;
  double interval_lo = 0.0;
  double interval_hi = 0.0;
  double score = 0.0;
};

/// RBCI-style omega selector: minimise the mean Winkler score of the ATE
/// interval against a bootstrap pseudo-truth distribution.
inline RbciResult rbci_omega(const Eigen::MatrixXd& phi,
                             const PseudoOutcomes& d,
                             const LikelihoodSpec& lik, const PriorSpec& prior,
                             const SamplerConfig& sampler, std::uint64_t seed,
                             const std::vector<double>& omega_grid = {0.5, 1.0,
                                                                      2.0},
                             int b_replicates = 50,
                             double huber_delta = 1.345) {
  if (omega_grid.empty()) throw std::invalid_argument("rbci: empty grid");
  const int p = static_cast<int>(phi.cols());
  const Eigen::VectorXd phi_bar = phi.colwise().mean();
  const auto fits = calib_detail::bootstrap_point_fits(phi, d, huber_delta,
                                                       b_replicates, seed);
  std::vector<double> pseudo_truths;
  pseudo_truths.reserve(fits.size());
  for (const auto& beta : fits) pseudo_truths.push_back(phi_bar.dot(beta));

  const LikelihoodSpec resolved = resolve_likelihood(lik, d.d);
  RbciResult best;
  best.score = std::numeric_limits<double>::infinity();
  for (double omega : omega_grid) {
    LikelihoodSpec trial = resolved;
    trial.eta = omega;
    const auto target = build_posterior_target(phi, d, trial, prior);
    const auto draws = nuts_sample(target, target.dim(), sampler,
                                   derive_seed(seed, 0x5242'4349ULL));
    const auto ate = linear_functional_summary(draws, phi_bar);
    double score = 0.0;
    for (double truth : pseudo_truths) {
      score += winkler_score(ate.lo, ate.hi, truth);
    }
    score /= pseudo_truths.size();
    if (score < best.score) {
      best.score = score;
      best.omega = omega;
      best.interval_lo = ate.lo;
      best.interval_hi = ate.hi;
    }
  }
  return best;
}

}  // namespace robust_cate
