#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "robust_cate/data.hpp"
#include "robust_cate/gbt.hpp"
#include "robust_cate/losses.hpp"
#include "robust_cate/rng.hpp"

namespace robust_cate {

enum class SeverityPreset { None, Mild, Moderate, Severe };

inline const char* severity_name(SeverityPreset preset) {
  switch (preset) {
    case SeverityPreset::None: return "none";
    case SeverityPreset::Mild: return "mild";
    case SeverityPreset::Moderate: return "moderate";
    case SeverityPreset::Severe: return "severe";
  }
  return "unknown";
}

inline SeverityPreset severity_from_name(const std::string& name) {
  for (SeverityPreset preset :
       {SeverityPreset::None, SeverityPreset::Mild, SeverityPreset::Moderate,
        SeverityPreset::Severe}) {
    if (name == severity_name(preset)) return preset;
  }
  throw std::invalid_argument("unknown severity preset: " + name);
}

/// Pinned severity -> nuisance-loss map:
///   none -> squared error, mild -> Huber(1.345),
///   moderate -> Huber(1.0), severe -> Huber(0.5).
inline GbtParams severity_to_config(SeverityPreset preset) {
  GbtParams params;
  switch (preset) {
    case SeverityPreset::None:
      params.loss = LossKind::squared_error();
      break;
    case SeverityPreset::Mild:
      params.loss = LossKind::huber(1.345);
      break;
    case SeverityPreset::Moderate:
      params.loss = LossKind::huber(1.0);
      break;
    case SeverityPreset::Severe:
      params.loss = LossKind::huber(0.5);
      break;
  }
  return params;
}

/// Out-of-fold nuisance predictions plus the per-fold models and training
/// bookkeeping needed to audit the cross-fitting exclusion.
struct NuisanceFits {
  Eigen::VectorXd mu0_hat;  // standardised scale when y_scale != 1
  Eigen::VectorXd mu1_hat;
  Eigen::VectorXd pi_hat;
  Eigen::VectorXi fold_assignment;
  double y_scale = 1.0;
  std::vector<GbtModel> mu0_models;
  std::vector<GbtModel> mu1_models;
  std::vector<PropensityModel> pi_models;
  std::vector<std::vector<int>> fold_train_rows;
};

namespace nuisance_detail {

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x,
                                 const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(r) = x.row(rows[r]);
  return out;
}

inline Eigen::VectorXd take(const Eigen::VectorXd& v,
                            const std::vector<int>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = v[rows[r]];
  return out;
}

inline Eigen::VectorXi take(const Eigen::VectorXi& v,
                            const std::vector<int>& rows) {
  Eigen::VectorXi out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = v[rows[r]];
  return out;
}

}  // namespace nuisance_detail

/// Default booster settings for the propensity: shallower and shorter than
/// the outcome models. Boosted logistic fits overfit weak treatment signal
/// quickly, and overfit propensities blow up the 1/pi pseudo-outcome terms.
inline GbtParams default_propensity_params() {
  GbtParams params;
  params.n_trees = 50;
  params.max_depth = 2;
  params.learning_rate = 0.1;
  params.min_samples_leaf = 40;
  return params;
}

/// K-fold cross-fitted nuisance estimation. Folds are stratified on the
/// treatment so each holds both arms; every unit's predictions come from
/// models trained on the other folds. With standardize_y the targets are
/// divided by mad(Y, scaled) before fitting and the scale recorded.
inline NuisanceFits cross_fit(
    const CausalDataset& dataset, const GbtParams& params, int k_folds = 2,
    bool standardize_y = false, std::uint64_t rng_seed = 0,
    double clip_lo = 0.01, double clip_hi = 0.99,
    const std::optional<Eigen::VectorXd>& sample_weights = std::nullopt,
    const std::optional<GbtParams>& propensity_params = std::nullopt) {
  dataset.validate();
  if (k_folds < 2) throw std::invalid_argument("cross_fit: k_folds must be >= 2");
  const int n = static_cast<int>(dataset.n());

  NuisanceFits fits;
  fits.y_scale = 1.0;
  Eigen::VectorXd y = dataset.y;
  if (standardize_y) {
    const std::vector<double> yv(y.data(), y.data() + n);
    fits.y_scale = mad(yv, /*consistency_scaled=*/true);
    y /= fits.y_scale;
  }

  // Stratified fold deal: shuffle each arm, assign round-robin.
  std::vector<int> treated, control;
  for (int i = 0; i < n; ++i) {
    (dataset.w[i] == 1 ? treated : control).push_back(i);
  }
  Rng fold_rng(derive_seed(rng_seed, 0x464f'4c44ULL));
  fold_rng.shuffle(treated);
  fold_rng.shuffle(control);
  fits.fold_assignment.resize(n);
  for (std::size_t r = 0; r < treated.size(); ++r) {
    fits.fold_assignment[treated[r]] = static_cast<int>(r % k_folds);
  }
  for (std::size_t r = 0; r < control.size(); ++r) {
    fits.fold_assignment[control[r]] = static_cast<int>(r % k_folds);
  }

  fits.mu0_hat.resize(n);
  fits.mu1_hat.resize(n);
  fits.pi_hat.resize(n);
  fits.fold_train_rows.resize(k_folds);

  for (int k = 0; k < k_folds; ++k) {
    std::vector<int> train, train_treated, train_control, held;
    for (int i = 0; i < n; ++i) {
      if (fits.fold_assignment[i] == k) {
        held.push_back(i);
      } else {
        train.push_back(i);
        (dataset.w[i] == 1 ? train_treated : train_control).push_back(i);
      }
    }
    if (held.empty()) {
      throw std::invalid_argument("cross_fit: fold " + std::to_string(k) +
                                  " is empty");
    }
    bool held_treated = false, held_control = false;
    for (int i : held) (dataset.w[i] == 1 ? held_treated : held_control) = true;
    if (!held_treated || !held_control || train_treated.empty() ||
        train_control.empty()) {
      throw std::invalid_argument("cross_fit: fold " + std::to_string(k) +
                                  " lacks treated or control units");
    }
    fits.fold_train_rows[k] = train;

    using nuisance_detail::take;
    using nuisance_detail::take_rows;
    std::optional<Eigen::VectorXd> w_treated, w_control, w_all;
    if (sample_weights) {
      w_treated = take(*sample_weights, train_treated);
      w_control = take(*sample_weights, train_control);
      w_all = take(*sample_weights, train);
    }
    const GbtModel mu1 = fit_gbt(take_rows(dataset.x, train_treated),
                                 take(y, train_treated), params, w_treated);
    const GbtModel mu0 = fit_gbt(take_rows(dataset.x, train_control),
                                 take(y, train_control), params, w_control);
    const PropensityModel pi = fit_propensity(
        take_rows(dataset.x, train), take(dataset.w, train),
        propensity_params.value_or(default_propensity_params()), clip_lo,
        clip_hi, w_all);

    for (int i : held) {
      fits.mu0_hat[i] = mu0.predict_one(dataset.x.row(i));
      fits.mu1_hat[i] = mu1.predict_one(dataset.x.row(i));
      fits.pi_hat[i] = pi.predict_one(dataset.x.row(i));
    }
    fits.mu1_models.push_back(mu1);
    fits.mu0_models.push_back(mu0);
    fits.pi_models.push_back(pi);
  }
  return fits;
}

}  // namespace robust_cate
