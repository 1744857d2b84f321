#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "robust_cate/basis.hpp"
#include "robust_cate/calibration.hpp"
#include "robust_cate/data.hpp"
#include "robust_cate/diagnostics.hpp"
#include "robust_cate/modular_bayes.hpp"
#include "robust_cate/nuisance.hpp"
#include "robust_cate/pseudo_outcomes.hpp"
#include "robust_cate/summary.hpp"
#include "robust_cate/tail_diagnostics.hpp"

namespace robust_cate {

struct ModularConfig {
  int m = 8;
  Pooling pooling = Pooling::Concatenate;
};

/// Full estimator configuration, defaults per the method's defaults table:
/// Welsch c = 1.34, Student-t(3) prior with scale 10 (2 when p >= 10),
/// K = 2 folds, NUTS 2 chains x 400 warmup x 800 samples.
struct FitConfig {
  SeverityPreset severity = SeverityPreset::None;
  std::optional<GbtParams> nuisance_override;
  std::optional<GbtParams> propensity_override;
  double clip_lo = 0.01;
  double clip_hi = 0.99;

  BasisSpec basis = BasisSpec::intercept_only();

  LikelihoodSpec likelihood = LikelihoodSpec::welsch();
  bool couple_c_to_severity = false;  // c in {1.34, 1.0, 0.5} by severity

  PriorFamily prior_family = PriorFamily::StudentT;
  std::optional<double> prior_scale;  // default 10, or 2 when p >= 10
  double prior_nu = 3.0;

  int k_folds = 2;
  std::optional<bool> use_overlap;  // unset = automatic fallback
  bool normalize_y_for_nuisance = false;

  EtaMode calibrate_eta = EtaMode::Off;
  std::optional<Eigen::VectorXd> eta_contrast;  // for Functional
  double ridge_lambda = 1e-2;
  std::vector<double> eta_grid = {0.25, 0.5, 1.0, 2.0, 4.0};
  std::vector<double> omega_grid = {0.5, 1.0, 2.0};
  int llb_replicates = 50;

  std::optional<ModularConfig> modular;

  // gated-off legacy path; both must be set explicitly to activate
  std::optional<double> tail_threshold;
  std::optional<double> tail_alpha;

  SamplerConfig sampler;
  std::uint64_t master_seed = 0;

  GbtParams nuisance_params() const {
    GbtParams params = severity_to_config(severity);
    if (nuisance_override) params = *nuisance_override;
    return params;
  }

  double llb_huber_delta() const {
    const GbtParams params = severity_to_config(severity);
    return params.loss.family == LossFamily::Huber ? params.loss.tuning : 1.345;
  }
};

struct CalibrationReport {
  EtaMode mode = EtaMode::Off;
  double eta = 1.0;
  std::optional<double> eta_trace_value;
  std::optional<double> eta_functional_value;
  std::optional<double> omega;
  std::optional<double> min_eig_raw;
  double ridge_lambda = 1e-2;
};

struct FitResult {
  NuisanceFits nuisance;
  PseudoOutcomes pseudo;
  DesignMatrix design;
  PosteriorDraws draws;  // concatenated per-m chains when modular is on
  std::optional<PooledPosterior> pooled;
  ChainDiagnostics diagnostics;
  CateSummary summary;       // at the training covariates
  FunctionalSummary ate;     // posterior of mean_i phi(x_i)' beta
  CalibrationReport calibration;
  std::vector<std::string> warnings;
  GbtParams nuisance_params;
  SeverityPreset severity = SeverityPreset::None;
  bool overlap_used = false;
  std::uint64_t master_seed = 0;
};

namespace pipeline_detail {

struct StagePrep {
  NuisanceFits nuisance;
  PseudoOutcomes pseudo;
  DesignMatrix design;
  LikelihoodSpec likelihood;  // resolved (c coupling, MAD rescale)
  PriorSpec prior;
  GbtParams nuisance_params;
  std::vector<std::string> warnings;
  bool overlap_used = false;
};

inline LikelihoodSpec resolve_config_likelihood(const FitConfig& config) {
  LikelihoodSpec lik = config.likelihood;
  if (config.couple_c_to_severity &&
      (lik.family == LikelihoodFamily::Welsch ||
       lik.family == LikelihoodFamily::Tukey)) {
    switch (config.severity) {
      case SeverityPreset::None:
      case SeverityPreset::Mild:
        lik.c = 1.34;
        break;
      case SeverityPreset::Moderate:
        lik.c = 1.0;
        break;
      case SeverityPreset::Severe:
        lik.c = 0.5;
        break;
    }
  }
  return lik;
}

inline PriorSpec resolve_prior(const FitConfig& config, int p) {
  PriorSpec prior;
  prior.family = config.prior_family;
  prior.nu = config.prior_nu;
  prior.scale = config.prior_scale.value_or(p >= 10 ? 2.0 : 10.0);
  return prior;
}

/// Weighted least-squares initialisation for the sampler; falls back to
/// zero when the normal equations are singular or produce non-finite
/// values. For inferred-scale likelihoods log sigma starts at the MAD of
/// the WLS residuals.
inline Eigen::VectorXd sampler_init(const Eigen::MatrixXd& phi,
                                    const PseudoOutcomes& d,
                                    const LikelihoodSpec& lik, int target_dim) {
  const Eigen::Index p = phi.cols();
  Eigen::VectorXd init = Eigen::VectorXd::Zero(target_dim);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    const Eigen::VectorXd row = phi.row(i).transpose();
    a.noalias() += d.weights[i] * (row * row.transpose());
    b.noalias() += d.weights[i] * d.d[i] * row;
  }
  const Eigen::LDLT<Eigen::MatrixXd> solver(a);
  if (solver.info() == Eigen::Success) {
    const Eigen::VectorXd beta = solver.solve(b);
    if (beta.allFinite()) init.head(p) = beta;
  }
  if (lik.has_scale_parameter()) {
    const Eigen::VectorXd resid = d.d - phi * init.head(p);
    double scale = 1.0;
    try {
      const std::vector<double> rv(resid.data(), resid.data() + resid.size());
      scale = mad(rv, true);
    } catch (const std::invalid_argument&) {
    }
    init[target_dim - 1] = std::log(std::max(scale, 1e-6));
  }
  return init;
}

inline StagePrep prepare(const CausalDataset& dataset, const FitConfig& config,
                         const std::optional<Eigen::VectorXd>& sample_weights) {
  StagePrep prep;
  try {
    dataset.validate();
    prep.design = evaluate_basis(config.basis, dataset.x);
  } catch (const std::exception& err) {
    throw std::invalid_argument(std::string("input: ") + err.what());
  }

  prep.nuisance_params = config.nuisance_params();
  try {
    prep.nuisance = cross_fit(dataset, prep.nuisance_params, config.k_folds,
                              config.normalize_y_for_nuisance,
                              derive_seed(config.master_seed, 0x4e55'4953ULL),
                              config.clip_lo, config.clip_hi, sample_weights,
                              config.propensity_override);
  } catch (const std::exception& err) {
    throw std::runtime_error(std::string("cross_fit: ") + err.what());
  }

  const OverlapCheck overlap = propensity_warnings(prep.nuisance.pi_hat);
  for (const auto& warning : overlap.warnings) prep.warnings.push_back(warning);
  prep.overlap_used = config.use_overlap.value_or(overlap.auto_overlap);

  try {
    prep.pseudo = dr_pseudo_outcomes(dataset, prep.nuisance);
  } catch (const std::exception& err) {
    throw std::runtime_error(std::string("pseudo_outcomes: ") + err.what());
  }

  if (config.tail_threshold.has_value() != config.tail_alpha.has_value()) {
    throw std::invalid_argument(
        "normalize_extremes: tail_threshold and tail_alpha must be set together");
  }
  if (config.tail_threshold && config.tail_alpha) {
    prep.pseudo = normalize_extremes(prep.pseudo, *config.tail_threshold,
                                     *config.tail_alpha);
    prep.warnings.push_back(
        "WARN.EXTREMES normalize_extremes is active; this path treats tail "
        "mass as contamination and destroys tail signal. Prefer a tail-aware "
        "basis.");
  }

  if (prep.overlap_used) {
    prep.pseudo.weights = overlap_weights(prep.nuisance.pi_hat);
  }

  prep.likelihood =
      resolve_likelihood(resolve_config_likelihood(config), prep.pseudo.d);
  prep.prior = resolve_prior(config, prep.design.spec.p());
  return prep;
}

inline PosteriorDraws run_nuts(const StagePrep& prep, const FitConfig& config,
                               double eta, std::uint64_t seed) {
  LikelihoodSpec lik = prep.likelihood;
  lik.eta = eta;
  const auto target =
      build_posterior_target(prep.design.phi, prep.pseudo, lik, prep.prior);
  SamplerConfig sampler = config.sampler;
  if (!sampler.init) {
    sampler.init = sampler_init(prep.design.phi, prep.pseudo, lik, target.dim());
  }
  return nuts_sample(target, target.dim(), sampler, seed);
}

inline PosteriorDraws concatenate_chains(const PooledPosterior& pooled) {
  PosteriorDraws out;
  if (pooled.per_m_draws.empty()) return out;
  out.warmup = pooled.per_m_draws[0].warmup;
  out.step_size = pooled.per_m_draws[0].step_size;
  out.mass_diag = pooled.per_m_draws[0].mass_diag;
  const int samples = pooled.per_m_draws[0].n_samples();
  int total_chains = 0;
  for (const auto& draws : pooled.per_m_draws) total_chains += draws.n_chains();
  out.energy.resize(total_chains, samples);
  int row = 0;
  for (const auto& draws : pooled.per_m_draws) {
    for (int c = 0; c < draws.n_chains(); ++c) {
      out.chains.push_back(draws.chains[c]);
      out.energy.row(row++) = draws.energy.row(c);
      out.divergent.push_back(draws.divergent.empty()
                                  ? std::vector<std::uint8_t>(samples, 0)
                                  : draws.divergent[c]);
    }
    out.divergence_count += draws.divergence_count;
  }
  return out;
}

}  // namespace pipeline_detail

/// End-to-end fit: cross-fitted nuisances, DR pseudo-outcomes, optional
/// eta calibration, Phase-3 NUTS (or modular-Bayes pooling), summaries.
inline FitResult fit(const CausalDataset& dataset, const FitConfig& config) {
  FitResult result;
  result.master_seed = config.master_seed;
  result.severity = config.severity;

  const auto prep = pipeline_detail::prepare(dataset, config, std::nullopt);
  result.nuisance = prep.nuisance;
  result.pseudo = prep.pseudo;
  result.design = prep.design;
  result.warnings = prep.warnings;
  result.nuisance_params = prep.nuisance_params;
  result.overlap_used = prep.overlap_used;

  result.calibration.mode = config.calibrate_eta;
  result.calibration.ridge_lambda = config.ridge_lambda;
  double eta = prep.likelihood.eta;

  switch (config.calibrate_eta) {
    case EtaMode::Off:
      break;
    case EtaMode::Trace:
    case EtaMode::Functional: {
      const auto calib = calibrate_eta(
          prep.design.phi, prep.pseudo, prep.likelihood, prep.prior,
          config.sampler, config.master_seed, config.calibrate_eta,
          config.eta_contrast, config.ridge_lambda);
      eta = calib.eta;
      result.calibration.eta_trace_value = calib.eta_trace_value;
      result.calibration.eta_functional_value = calib.eta_functional_value;
      result.calibration.min_eig_raw = calib.sandwich.min_eig_raw;
      if (calib.sandwich.min_eig_raw <= 0.0) {
        result.warnings.push_back(
            "WARN.CALIBRATION raw I-hat was indefinite (min eigenvalue " +
            std::to_string(calib.sandwich.min_eig_raw) +
            "); ridge/eigenvalue stabilisation applied");
      }
      break;
    }
    case EtaMode::Llb:
      eta = calibrate_eta_llb(prep.design.phi, prep.pseudo, prep.likelihood,
                              prep.prior, config.sampler, config.master_seed,
                              config.eta_grid, config.llb_replicates,
                              config.llb_huber_delta());
      break;
    case EtaMode::Rbci: {
      const auto rbci = rbci_omega(prep.design.phi, prep.pseudo,
                                   prep.likelihood, prep.prior, config.sampler,
                                   config.master_seed, config.omega_grid,
                                   config.llb_replicates,
                                   config.llb_huber_delta());
      eta = rbci.omega;
      result.calibration.omega = rbci.omega;
      break;
    }
  }
  result.calibration.eta = eta;

  if (config.modular) {
    if (config.modular->m < 2) {
      throw std::invalid_argument("modular: m must be >= 2");
    }
    PooledPosterior pooled;
    pooled.pooling = config.modular->pooling;
    for (int m_idx = 0; m_idx < config.modular->m; ++m_idx) {
      try {
        Rng rng(derive_seed(config.master_seed, 0x424f'4f54ULL, m_idx));
        const Eigen::VectorXd bb =
            bayesian_bootstrap_weights(static_cast<int>(dataset.n()), rng);
        auto prep_m = pipeline_detail::prepare(dataset, config, bb);
        pooled.per_m_draws.push_back(pipeline_detail::run_nuts(
            prep_m, config, eta,
            derive_seed(config.master_seed, 0x4d4f'4421ULL, m_idx)));
      } catch (const std::exception& err) {
        throw std::runtime_error("modular draw " + std::to_string(m_idx) +
                                 ": " + err.what());
      }
    }
    pool_posterior(pooled);
    result.draws = pipeline_detail::concatenate_chains(pooled);
    result.pooled = std::move(pooled);
  } else {
    result.draws = pipeline_detail::run_nuts(
        prep, config, eta, derive_seed(config.master_seed, 0x4e55'5453ULL));
  }

  try {
    result.diagnostics = diagnose(result.draws);
  } catch (const std::exception&) {
    // single-chain configs skip multi-chain diagnostics
    result.diagnostics = ChainDiagnostics{};
  }
  if (result.diagnostics.r_hat.size() > 0 &&
      result.diagnostics.max_r_hat() >= 1.05) {
    result.warnings.push_back(
        "WARN.CONVERGENCE split R-hat >= 1.05; treat summaries with care");
  }

  result.summary = summarize_cate(result.draws, result.design.phi);
  const Eigen::VectorXd phi_bar = result.design.phi.colwise().mean();
  result.ate = linear_functional_summary(result.draws, phi_bar);
  if (result.pooled && result.pooled->pooling == Pooling::Rubin) {
    // Rubin's rules give a normal-approximation interval
    const double mean = phi_bar.dot(result.pooled->pooled_mean.head(phi_bar.size()));
    double var = 0.0;
    for (Eigen::Index j = 0; j < phi_bar.size(); ++j) {
      var += phi_bar[j] * phi_bar[j] * result.pooled->pooled_var[j];
    }
    // covariance terms between coefficients are not stored; for the
    // orthogonal bases used here the diagonal dominates, and the concat
    // interval remains available through result.draws
    result.ate.mean = mean;
    result.ate.sd = std::sqrt(var);
    result.ate.lo = mean - 1.959963984540054 * result.ate.sd;
    result.ate.hi = mean + 1.959963984540054 * result.ate.sd;
  }
  return result;
}

/// CATE prediction at new covariates from a fitted result.
inline CateSummary predict_cate(const FitResult& result,
                                const Eigen::MatrixXd& x_new) {
  return summarize_cate(result.draws, result.design.spec, x_new);
}

/// Modular-Bayes fit (cut posterior over M Bayesian-bootstrap nuisance
/// draws) as a standalone entry point.
inline PooledPosterior modular_fit(const CausalDataset& dataset,
                                   FitConfig config, int m = 8,
                                   Pooling pooling = Pooling::Concatenate) {
  config.modular = ModularConfig{m, pooling};
  const FitResult result = fit(dataset, config);
  return *result.pooled;
}

inline double dispersion_from_summaries(const std::vector<double>& ate_means,
                                        const std::vector<double>& ci_widths) {
  if (ate_means.size() < 2 || ate_means.size() != ci_widths.size()) {
    throw std::invalid_argument("dispersion: need >= 2 repeats");
  }
  const double width_mean = mean(ci_widths);
  if (!(width_mean > 0.0)) throw std::invalid_argument("dispersion: zero mean width");
  return stddev(ate_means) / width_mean;
}

constexpr double kDispersionPoolingThreshold = 0.15;

struct DispersionResult {
  double rho = 0.0;
  bool recommend_modular = false;
  std::vector<double> ate_means;
  std::vector<double> ci_widths;
};

/// Cross-fit dispersion diagnostic: std of posterior-mean ATEs over fresh
/// cross-fit seeds divided by the mean CI width. rho > 0.15 recommends
/// modular pooling.
inline DispersionResult dispersion_ratio(const CausalDataset& dataset,
                                         const FitConfig& config,
                                         int k_repeats = 5) {
  if (k_repeats < 2) throw std::invalid_argument("dispersion: k_repeats >= 2");
  DispersionResult out;
  for (int r = 0; r < k_repeats; ++r) {
    FitConfig repeat = config;
    repeat.modular.reset();
    repeat.master_seed = derive_seed(config.master_seed, 0x4449'5350ULL, r);
    const FitResult result = fit(dataset, repeat);
    out.ate_means.push_back(result.ate.mean);
    out.ci_widths.push_back(result.ate.hi - result.ate.lo);
  }
  out.rho = dispersion_from_summaries(out.ate_means, out.ci_widths);
  out.recommend_modular = out.rho > kDispersionPoolingThreshold;
  return out;
}

}  // namespace robust_cate
