#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "robust_cate/basis_select.hpp"
#include "robust_cate/dgp.hpp"
#include "robust_cate/metrics.hpp"
#include "robust_cate/pipeline.hpp"

using namespace robust_cate;

namespace {

GeneratedData whale(int n, double density, std::uint64_t seed) {
  DgpSpec spec;
  spec.kind = DgpKind::Whale;
  spec.n = n;
  spec.density = density;
  spec.seed = seed;
  return generate(spec);
}

double fit_pehe(const FitResult& result, const GeneratedData& data) {
  std::vector<double> tau_hat(result.summary.tau_mean.data(),
                              result.summary.tau_mean.data() +
                                  result.summary.tau_mean.size());
  std::vector<double> tau_true(data.tau_true.data(),
                               data.tau_true.data() + data.tau_true.size());
  return pehe(tau_hat, tau_true);
}

}  // namespace

TEST_CASE("clean intercept fit recovers the ATE with healthy chains",
          "[pipeline][slow]") {
  // repeated-seed check: the mean ATE over seeds sits near the truth
  double ate_sum = 0.0;
  const int n_seeds = 5;
  for (std::uint64_t s = 0; s < n_seeds; ++s) {
    const auto seed_data = whale(1000, 0.0, 100 + s);
    FitConfig seed_config;
    seed_config.master_seed = s;
    const auto seed_result = fit(seed_data.dataset, seed_config);
    CHECK_THAT(seed_result.ate.mean, Catch::Matchers::WithinAbs(2.0, 0.4));
    ate_sum += seed_result.ate.mean;
  }
  CHECK_THAT(ate_sum / n_seeds, Catch::Matchers::WithinAbs(2.0, 0.15));

  const auto data = whale(1000, 0.0, 101);
  FitConfig config;
  config.master_seed = 7;
  const auto result = fit(data.dataset, config);

  CHECK(result.diagnostics.max_r_hat() < 1.05);
  CHECK(result.diagnostics.min_ess() > 200.0);
  CHECK(result.diagnostics.divergences == 0);
  CHECK(result.ate.lo < result.ate.hi);
  CHECK_FALSE(result.overlap_used);
  CHECK(result.calibration.eta == 1.0);

  SECTION("bit-reproducible summaries") {
    const auto again = fit(data.dataset, config);
    CHECK(again.ate.mean == result.ate.mean);
    CHECK(again.ate.lo == result.ate.lo);
    CHECK(again.summary.tau_mean == result.summary.tau_mean);
  }

  SECTION("stage quarantine holds end to end") {
    for (int k = 0; k < 2; ++k) {
      for (int i = 0; i < 1000; ++i) {
        if (result.nuisance.fold_assignment[i] == k) {
          for (int row : result.nuisance.fold_train_rows[k]) {
            REQUIRE(row != i);
          }
        }
      }
    }
  }
}

TEST_CASE("severity monotonicity on contaminated vs clean data",
          "[pipeline][slow]") {
  FitConfig none_config;
  none_config.severity = SeverityPreset::None;
  none_config.master_seed = 3;
  FitConfig severe_config = none_config;
  severe_config.severity = SeverityPreset::Severe;

  SECTION("5 percent whales: severe beats none") {
    const auto data = whale(1000, 0.05, 11);
    const double pehe_none = fit_pehe(fit(data.dataset, none_config), data);
    const double pehe_severe = fit_pehe(fit(data.dataset, severe_config), data);
    CHECK(pehe_severe < pehe_none);
  }

  SECTION("clean data: the efficiency cost reverses the order on average") {
    double sum_none = 0.0, sum_severe = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto data = whale(1000, 0.0, 200 + s);
      FitConfig cn = none_config, cs = severe_config;
      cn.master_seed = s;
      cs.master_seed = s;
      sum_none += fit_pehe(fit(data.dataset, cn), data);
      sum_severe += fit_pehe(fit(data.dataset, cs), data);
    }
    CHECK(sum_none < sum_severe);
  }
}

TEST_CASE("predict_cate", "[pipeline][slow]") {
  DgpSpec spec;
  spec.kind = DgpKind::TailHetero;
  spec.n = 1000;
  spec.seed = 4;
  const auto data = generate(spec);

  FitConfig config;
  config.basis = BasisSpec::tail(0, 1.96);
  config.master_seed = 5;
  const auto result = fit(data.dataset, config);

  Eigen::MatrixXd x_new = Eigen::MatrixXd::Zero(2, 5);
  x_new(1, 0) = 3.0;  // tail point
  const auto pred = predict_cate(result, x_new);
  const double indicator_coef = result.summary.beta.mean[1];
  CHECK_THAT(pred.tau_mean[1] - pred.tau_mean[0],
             Catch::Matchers::WithinAbs(indicator_coef, 1e-9));

  // contrast summary equals the tail-point prediction
  Eigen::VectorXd contrast(2);
  contrast << 1.0, 1.0;
  const auto fs = linear_functional_summary(result.draws, contrast);
  CHECK_THAT(fs.mean, Catch::Matchers::WithinAbs(pred.tau_mean[1], 1e-9));
}

TEST_CASE("auto-overlap fallback", "[pipeline][slow]") {
  DgpSpec spec;
  spec.kind = DgpKind::LowOverlap;
  spec.n = 800;
  spec.seed = 6;
  const auto data = generate(spec);

  FitConfig config;
  config.master_seed = 8;
  const auto result = fit(data.dataset, config);
  CHECK(result.overlap_used);  // propensities hit the clip bounds
  REQUIRE_FALSE(result.warnings.empty());
  CHECK(result.warnings[0].find("WARN.OVERLAP") == 0);

  FitConfig forced_off = config;
  forced_off.use_overlap = false;
  const auto result_off = fit(data.dataset, forced_off);
  CHECK_FALSE(result_off.overlap_used);
  // warnings still surface even when the user overrides
  CHECK_FALSE(result_off.warnings.empty());
}

TEST_CASE("modular pooling machinery", "[pipeline][slow]") {
  const auto data = whale(600, 0.05, 21);
  FitConfig config;
  config.severity = SeverityPreset::Severe;
  config.master_seed = 13;
  config.modular = ModularConfig{3, Pooling::Concatenate};
  const auto result = fit(data.dataset, config);
  REQUIRE(result.pooled.has_value());
  CHECK(result.pooled->m() == 3);
  CHECK(result.draws.n_chains() == 3 * config.sampler.chains);
  CHECK(result.pooled->concatenated().rows() ==
        3 * config.sampler.chains * config.sampler.samples);

  SECTION("rubin pooling fills pooled moments") {
    FitConfig rubin_config = config;
    rubin_config.modular = ModularConfig{3, Pooling::Rubin};
    const auto rubin_result = fit(data.dataset, rubin_config);
    REQUIRE(rubin_result.pooled.has_value());
    CHECK(rubin_result.pooled->pooled_var[0] > 0.0);
    CHECK(rubin_result.ate.lo < rubin_result.ate.hi);
  }
}

TEST_CASE("dispersion helpers", "[pipeline]") {
  SECTION("identical repeats give zero dispersion") {
    CHECK(dispersion_from_summaries({2.0, 2.0, 2.0}, {0.5, 0.5, 0.5}) == 0.0);
  }
  SECTION("threshold flag") {
    CHECK(dispersion_from_summaries({2.0, 2.2}, {1.0, 1.0}) >
          kDispersionPoolingThreshold - 0.02);
  }
  CHECK_THROWS_AS(dispersion_from_summaries({2.0}, {0.5}), std::invalid_argument);
}

TEST_CASE("normalize_extremes gating through the pipeline", "[pipeline][slow]") {
  const auto data = whale(600, 0.0, 31);
  FitConfig config;
  config.master_seed = 9;
  config.tail_threshold = 5.0;  // alpha missing: must fail loudly

  CHECK_THROWS_AS(fit(data.dataset, config), std::invalid_argument);

  config.tail_alpha = 1.5;
  const auto result = fit(data.dataset, config);
  bool warned = false;
  for (const auto& w : result.warnings) {
    if (w.find("WARN.EXTREMES") == 0) warned = true;
  }
  CHECK(warned);
}

TEST_CASE("grid search threshold", "[pipeline][basis]") {
  DgpSpec spec;
  spec.kind = DgpKind::TailHetero;
  spec.n = 2000;
  spec.seed = 14;
  const auto data = generate(spec);

  // step pseudo-outcomes: ground truth plus DR-scale noise
  PseudoOutcomes d;
  d.d = data.tau_true;
  Rng noise_rng(140);
  for (int i = 0; i < spec.n; ++i) d.d[i] += 1.5 * noise_rng.normal();
  d.weights = Eigen::VectorXd::Ones(spec.n);
  d.source_arm = data.dataset.w;

  SECTION("single candidate returns it") {
    CHECK(grid_search_threshold(d, data.dataset.x, 0, {1.5}) == 1.5);
  }

  SECTION("step DGP recovers the threshold within 0.5") {
    std::vector<double> candidates;
    for (double c = 1.0; c <= 3.0 + 1e-9; c += 0.25) candidates.push_back(c);
    const double chosen = grid_search_threshold(d, data.dataset.x, 0, candidates);
    CHECK(std::abs(chosen - 1.96) <= 0.5);
  }

  SECTION("invariant to positive rescaling of D") {
    std::vector<double> candidates{1.0, 1.5, 1.75, 2.0, 2.5};
    const double base = grid_search_threshold(d, data.dataset.x, 0, candidates);
    PseudoOutcomes scaled = d;
    scaled.d *= 37.0;
    CHECK(grid_search_threshold(scaled, data.dataset.x, 0, candidates) == base);
  }

  SECTION("degenerate candidates rejected") {
    CHECK_THROWS_AS(grid_search_threshold(d, data.dataset.x, 0, {100.0}),
                    std::invalid_argument);
  }
}

TEST_CASE("bma over thresholds", "[pipeline][basis][slow]") {
  DgpSpec spec;
  spec.kind = DgpKind::TailHetero;
  spec.n = 800;
  spec.seed = 15;
  const auto data = generate(spec);
  PseudoOutcomes d;
  d.d = data.tau_true;
  for (int i = 0; i < spec.n; ++i) d.d[i] += 0.3 * ((i % 7) - 3.0) / 3.0;
  d.weights = Eigen::VectorXd::Ones(spec.n);
  d.source_arm = data.dataset.w;

  SECTION("identical candidates share the weight equally") {
    const auto res = bma_over_thresholds(d, data.dataset.x, 0, {1.96, 1.96});
    CHECK_THAT(res.weights[0], Catch::Matchers::WithinAbs(0.5, 1e-9));
    CHECK_THAT(res.weights[1], Catch::Matchers::WithinAbs(0.5, 1e-9));
  }

  SECTION("weights form a simplex and favour the true threshold") {
    const auto res =
        bma_over_thresholds(d, data.dataset.x, 0, {1.0, 1.5, 1.96, 2.5});
    double total = 0.0;
    for (double w : res.weights) total += w;
    CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-12));
    const auto best =
        std::max_element(res.weights.begin(), res.weights.end()) -
        res.weights.begin();
    CHECK(res.candidates[best] == 1.96);
    CHECK(res.pooled_draws.total_draws() == res.fits[0].total_draws());
  }
}
