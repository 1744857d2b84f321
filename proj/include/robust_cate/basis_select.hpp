#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "robust_cate/basis.hpp"
#include "robust_cate/numeric.hpp"
#include "robust_cate/nuts.hpp"
#include "robust_cate/posterior.hpp"
#include "robust_cate/pseudo_outcomes.hpp"
#include "robust_cate/rng.hpp"
#include "robust_cate/summary.hpp"

namespace robust_cate {

namespace basis_detail {

/// Two-group fit implied by the indicator basis [1, 1{|x_f| > c}]:
/// weighted group means of D inside and outside the indicator.
struct TwoGroupFit {
  double mean_out = 0.0;
  double mean_in = 0.0;
  int n_in = 0;
  int n_out = 0;
};

inline TwoGroupFit two_group_fit(const PseudoOutcomes& d,
                                 const Eigen::MatrixXd& x, int feature,
                                 double threshold) {
  TwoGroupFit fit;
  double sw_in = 0.0, swd_in = 0.0, sw_out = 0.0, swd_out = 0.0;
  for (Eigen::Index i = 0; i < d.d.size(); ++i) {
    const bool in_tail = std::abs(x(i, feature)) > threshold;
    const double w = d.weights[i];
    if (in_tail) {
      ++fit.n_in;
      sw_in += w;
      swd_in += w * d.d[i];
    } else {
      ++fit.n_out;
      sw_out += w;
      swd_out += w * d.d[i];
    }
  }
  if (sw_in > 0.0) fit.mean_in = swd_in / sw_in;
  if (sw_out > 0.0) fit.mean_out = swd_out / sw_out;
  return fit;
}

}  // namespace basis_detail

/// Change-point grid search: the candidate minimising the median absolute
/// residual of the two-group fit implied by the indicator basis. Candidates
/// leaving fewer than 10 units on either side are skipped.
inline double grid_search_threshold(const PseudoOutcomes& d,
                                    const Eigen::MatrixXd& x, int feature,
                                    const std::vector<double>& candidates) {
  if (candidates.empty()) {
    throw std::invalid_argument("grid_search_threshold: no candidates");
  }
  if (feature < 0 || feature >= x.cols()) {
    throw std::invalid_argument("grid_search_threshold: feature out of range");
  }
  double best_candidate = 0.0;
  double best_score = std::numeric_limits<double>::infinity();
  bool any_valid = false;
  for (const double candidate : candidates) {
    const auto fit = basis_detail::two_group_fit(d, x, feature, candidate);
    if (fit.n_in < 10 || fit.n_out < 10) continue;
    std::vector<double> abs_resid;
    abs_resid.reserve(d.d.size());
    for (Eigen::Index i = 0; i < d.d.size(); ++i) {
      const bool in_tail = std::abs(x(i, feature)) > candidate;
      abs_resid.push_back(
          std::abs(d.d[i] - (in_tail ? fit.mean_in : fit.mean_out)));
    }
    const double score = median(std::move(abs_resid));
    if (score < best_score) {
      best_score = score;
      best_candidate = candidate;
      any_valid = true;
    }
  }
  if (!any_valid) {
    throw std::invalid_argument(
        "grid_search_threshold: every candidate splits the data degenerately");
  }
  return best_candidate;
}

struct BmaResult {
  std::vector<double> candidates;
  std::vector<double> weights;       // softmax over mean in-sample Welsch loss
  std::vector<PosteriorDraws> fits;  // per-candidate Phase-3 draws
  PosteriorDraws pooled_draws;       // weighted resampling across candidates
};

/// Bayesian model averaging over candidate tail thresholds: per-candidate
/// Welsch Phase-3 fit on [1, 1{|x_f| > c_k}], softmax weights on the
/// negative mean in-sample Welsch loss at the posterior mean, and pooled
/// draws by weighted resampling. Per-candidate seeds depend on the
/// candidate value, so duplicate candidates share draws exactly.
inline BmaResult bma_over_thresholds(const PseudoOutcomes& d,
                                     const Eigen::MatrixXd& x, int feature,
                                     const std::vector<double>& candidates,
                                     double welsch_c = 1.34,
                                     const PriorSpec& prior = PriorSpec{},
                                     const SamplerConfig& sampler =
                                         SamplerConfig{},
                                     std::uint64_t seed = 0) {
  if (candidates.empty()) {
    throw std::invalid_argument("bma_over_thresholds: no candidates");
  }
  BmaResult out;
  out.candidates = candidates;
  const Eigen::Index n = d.d.size();

  std::vector<double> neg_mean_loss;
  for (const double candidate : candidates) {
    const BasisSpec spec = BasisSpec::tail(feature, candidate);
    const DesignMatrix design = evaluate_basis(spec, x);
    const auto lik = LikelihoodSpec::welsch(welsch_c);
    const auto target = build_posterior_target(design.phi, d, lik, prior);
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(candidate));
    std::memcpy(&bits, &candidate, sizeof(bits));
    const auto draws = nuts_sample(target, target.dim(), sampler,
                                   derive_seed(seed, 0x424d'4121ULL, bits));
    const Eigen::VectorXd beta_bar =
        draws.stacked().leftCols(design.spec.p()).colwise().mean();
    double total_loss = 0.0;
    const Eigen::VectorXd fitted = design.phi * beta_bar;
    for (Eigen::Index i = 0; i < n; ++i) {
      total_loss += d.weights[i] *
                    evaluate_loss(LossKind::welsch(welsch_c), d.d[i] - fitted[i]).rho;
    }
    neg_mean_loss.push_back(-total_loss / static_cast<double>(n));
    out.fits.push_back(std::move(draws));
  }

  const double lse = logsumexp(neg_mean_loss);
  out.weights.resize(candidates.size());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    out.weights[k] = std::exp(neg_mean_loss[k] - lse);
  }

  // pooled draws: resample whole draws with candidate probability = weight
  const int total_draws = out.fits[0].total_draws();
  const int dim = out.fits[0].dim();
  Eigen::MatrixXd pooled(total_draws, dim);
  Rng rng(derive_seed(seed, 0x424d'4152ULL));
  std::vector<Eigen::MatrixXd> stacked;
  stacked.reserve(out.fits.size());
  for (const auto& fit : out.fits) stacked.push_back(fit.stacked());
  for (int s = 0; s < total_draws; ++s) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = out.weights.size() - 1;
    for (std::size_t k = 0; k < out.weights.size(); ++k) {
      acc += out.weights[k];
      if (u < acc) {
        pick = k;
        break;
      }
    }
    const auto row = rng.uniform_index(stacked[pick].rows());
    pooled.row(s) = stacked[pick].row(row);
  }
  out.pooled_draws.chains = {pooled};
  out.pooled_draws.energy = Eigen::MatrixXd::Zero(1, total_draws);
  return out;
}

}  // namespace robust_cate
