#include <catch2/catch_amalgamated.hpp>
#include <Eigen/Dense>
#include <cmath>

#include "robust_cate/diagnostics.hpp"
#include "robust_cate/posterior.hpp"
#include "robust_cate/rng.hpp"
#include "robust_cate/summary.hpp"

using namespace robust_cate;

namespace {

PseudoOutcomes synthetic_pseudo(Rng& rng, int n, double tau, double sd) {
  PseudoOutcomes d;
  d.d.resize(n);
  d.weights = Eigen::VectorXd::Ones(n);
  d.source_arm = Eigen::VectorXi::Zero(n);
  for (int i = 0; i < n; ++i) d.d[i] = tau + sd * rng.normal();
  return d;
}

}  // namespace

TEST_CASE("log density gradient basics", "[posterior]") {
  Rng rng(41);
  const int n = 50, p = 3;
  Eigen::MatrixXd phi(n, p);
  for (int i = 0; i < n * p; ++i) phi.data()[i] = rng.normal();
  auto d = synthetic_pseudo(rng, n, 0.0, 1.0);
  PriorSpec prior;

  SECTION("zero residuals leave only the prior gradient") {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    beta << 0.3, -0.2, 0.7;
    d.d = phi * beta;  // exact fit
    const auto [logp, grad] =
        log_density_and_grad(beta, phi, d, LikelihoodSpec::welsch(), prior);
    for (int j = 0; j < p; ++j) {
      const double prior_grad =
          -(prior.nu + 1.0) * beta[j] /
          (prior.nu * prior.scale * prior.scale + beta[j] * beta[j]);
      CHECK_THAT(grad[j], Catch::Matchers::WithinAbs(prior_grad, 1e-12));
    }
  }

  SECTION("doubling eta doubles the likelihood gradient exactly") {
    Eigen::VectorXd beta(p);
    beta << 0.5, 1.0, -0.3;
    PriorSpec flat_prior;
    flat_prior.family = PriorFamily::Gaussian;
    flat_prior.scale = 1e9;  // negligible prior gradient
    auto lik1 = LikelihoodSpec::welsch();
    auto lik2 = lik1;
    lik2.eta = 2.0;
    const auto [lp1, g1] = log_density_and_grad(beta, phi, d, lik1, flat_prior);
    const auto [lp2, g2] = log_density_and_grad(beta, phi, d, lik2, flat_prior);
    for (int j = 0; j < p; ++j) {
      CHECK_THAT(g2[j], Catch::Matchers::WithinRel(2.0 * g1[j], 1e-9));
    }
  }

  SECTION("non-finite beta is rejected") {
    Eigen::VectorXd beta = Eigen::VectorXd::Constant(p, std::nan(""));
    CHECK_THROWS_AS(
        log_density_and_grad(beta, phi, d, LikelihoodSpec::welsch(), prior),
        std::invalid_argument);
  }
}

TEST_CASE("gradient matches central finite differences", "[posterior]") {
  Rng rng(42);
  const int n = 40;
  const double h = 1e-6;

  const std::vector<LikelihoodSpec> liks = {
      LikelihoodSpec::welsch(1.34), LikelihoodSpec::gaussian(0.8, true),
      LikelihoodSpec::student_t(4.0, 1.2, true), LikelihoodSpec::tukey(4.685)};
  const std::vector<PriorSpec> priors = {
      PriorSpec{PriorFamily::StudentT, 10.0, 3.0},
      PriorSpec{PriorFamily::Gaussian, 2.0, 0.0}};

  for (const auto& lik : liks) {
    for (const auto& prior : priors) {
      for (int rep = 0; rep < 7; ++rep) {
        const int p = 1 + static_cast<int>(rng.uniform_index(3));
        Eigen::MatrixXd phi(n, p);
        for (int i = 0; i < n * p; ++i) phi.data()[i] = rng.normal();
        auto d = synthetic_pseudo(rng, n, 1.0, 2.0);
        Eigen::VectorXd beta(p);
        for (int j = 0; j < p; ++j) beta[j] = rng.uniform(-2.0, 2.0);

        const auto [logp, grad] = log_density_and_grad(beta, phi, d, lik, prior);
        for (int j = 0; j < p; ++j) {
          Eigen::VectorXd up = beta, dn = beta;
          up[j] += h;
          dn[j] -= h;
          const double fd =
              (log_density_and_grad(up, phi, d, lik, prior).first -
               log_density_and_grad(dn, phi, d, lik, prior).first) /
              (2.0 * h);
          const double scale = std::max(1.0, std::abs(grad[j]));
          REQUIRE(std::abs(grad[j] - fd) / scale < 1e-6);
        }
      }
    }
  }
}

TEST_CASE("extended target with inferred scale matches finite differences",
          "[posterior]") {
  Rng rng(43);
  const int n = 30, p = 2;
  Eigen::MatrixXd phi(n, p);
  for (int i = 0; i < n * p; ++i) phi.data()[i] = rng.normal();
  const auto d = synthetic_pseudo(rng, n, 0.5, 1.5);

  for (const auto& lik :
       {LikelihoodSpec::gaussian(1.0, false), LikelihoodSpec::student_t(4.0, 1.0, false)}) {
    const auto target = build_posterior_target(phi, d, lik, PriorSpec{});
    REQUIRE(target.dim() == p + 1);
    Eigen::VectorXd q(p + 1);
    q << 0.4, -0.2, 0.3;  // last coordinate is log sigma
    Eigen::VectorXd grad(p + 1);
    const double logp = target(q, grad);
    CHECK(std::isfinite(logp));
    const double h = 1e-6;
    for (int j = 0; j < p + 1; ++j) {
      Eigen::VectorXd up = q, dn = q;
      up[j] += h;
      dn[j] -= h;
      Eigen::VectorXd tmp(p + 1);
      const double fd = (target(up, tmp) - target(dn, tmp)) / (2.0 * h);
      REQUIRE(std::abs(grad[j] - fd) / std::max(1.0, std::abs(grad[j])) < 1e-5);
    }
  }
}

namespace {

struct StdNormalTarget {
  double operator()(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const {
    grad = -q;
    return -0.5 * q.squaredNorm();
  }
};

}  // namespace

TEST_CASE("nuts on a standard normal", "[posterior][nuts]") {
  StdNormalTarget target;
  SamplerConfig config;
  const auto draws = nuts_sample(target, 1, config, 7);
  REQUIRE(draws.n_chains() == 2);
  REQUIRE(draws.n_samples() == 800);

  const auto diag = diagnose(draws);
  const Eigen::MatrixXd stacked = draws.stacked();
  const double mean = stacked.col(0).mean();
  const double sd = std::sqrt((stacked.col(0).array() - mean).square().sum() /
                              (stacked.rows() - 1.0));
  CHECK(std::abs(mean) < 3.0 / std::sqrt(diag.ess[0]));
  CHECK_THAT(sd, Catch::Matchers::WithinAbs(1.0, 0.1));
  CHECK(diag.max_r_hat() < 1.05);
  CHECK(diag.min_ess() > 200.0);
  CHECK(draws.divergence_count == 0);
}

TEST_CASE("nuts conjugate oracle", "[posterior][nuts]") {
  // Gaussian likelihood (fixed sigma) + Gaussian prior has a closed-form
  // posterior; NUTS must match it within Monte Carlo error.
  Rng rng(44);
  const int n = 200, p = 2;
  Eigen::MatrixXd phi(n, p);
  phi.col(0).setOnes();
  for (int i = 0; i < n; ++i) phi(i, 1) = rng.normal();
  Eigen::VectorXd beta_true(p);
  beta_true << 1.5, -0.7;
  const double sigma = 1.0, prior_scale = 5.0;
  PseudoOutcomes d;
  d.d = phi * beta_true;
  for (int i = 0; i < n; ++i) d.d[i] += sigma * rng.normal();
  d.weights = Eigen::VectorXd::Ones(n);
  d.source_arm = Eigen::VectorXi::Zero(n);

  const Eigen::MatrixXd precision =
      phi.transpose() * phi / (sigma * sigma) +
      Eigen::MatrixXd::Identity(p, p) / (prior_scale * prior_scale);
  const Eigen::MatrixXd cov = precision.inverse();
  const Eigen::VectorXd mean = cov * (phi.transpose() * d.d) / (sigma * sigma);

  auto lik = LikelihoodSpec::gaussian(sigma, /*fixed=*/true);
  PriorSpec prior{PriorFamily::Gaussian, prior_scale, 0.0};
  const auto target = build_posterior_target(phi, d, lik, prior);

  for (std::uint64_t seed : {2ULL, 3ULL, 4ULL}) {
    const auto draws = nuts_sample(target, target.dim(), SamplerConfig{}, seed);
    const auto diag = diagnose(draws);
    const Eigen::MatrixXd stacked = draws.stacked();
    // ESS of the squared-centred draws drives the variance MCSE
    PosteriorDraws squared = draws;
    for (auto& chain : squared.chains) {
      for (int j = 0; j < p; ++j) {
        const double m = stacked.col(j).mean();
        chain.col(j) = (chain.col(j).array() - m).square();
      }
    }
    const auto diag_sq = diagnose(squared);
    for (int j = 0; j < p; ++j) {
      const double m = stacked.col(j).mean();
      const double v = (stacked.col(j).array() - m).square().sum() /
                       (stacked.rows() - 1.0);
      const double mcse_mean = std::sqrt(v / diag.ess[j]);
      CHECK(std::abs(m - mean[j]) < 2.0 * mcse_mean);
      const double mcse_var = v * std::sqrt(2.0 / diag_sq.ess[j]);
      CHECK(std::abs(v - cov(j, j)) < 2.0 * mcse_var);
    }
  }
}

TEST_CASE("posterior invariance to additive constants and determinism",
          "[posterior][nuts]") {
  Rng rng(45);
  const int n = 60;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Ones(n, 1);
  const auto d = synthetic_pseudo(rng, n, 2.0, 1.0);
  const auto base = build_posterior_target(phi, d, LikelihoodSpec::welsch(),
                                           PriorSpec{});
  struct Shifted {
    const PosteriorTarget& inner;
    double shift;
    double operator()(const Eigen::VectorXd& q, Eigen::VectorXd& g) const {
      return inner(q, g) + shift;
    }
  };
  SamplerConfig config;
  config.chains = 2;
  const auto a = nuts_sample(Shifted{base, 0.0}, 1, config, 11);

  SECTION("same seed and target reproduce bit-identically") {
    const auto again = nuts_sample(Shifted{base, 0.0}, 1, config, 11);
    for (int c = 0; c < 2; ++c) REQUIRE(a.chains[c] == again.chains[c]);
  }

  SECTION("an additive constant leaves the draws distributionally identical") {
    // The constant perturbs Hamiltonians in the last floating-point bits, so
    // bit-identity is not attainable; the posterior itself is unchanged.
    const auto b = nuts_sample(Shifted{base, 12345.0}, 1, config, 11);
    const Eigen::VectorXd va = a.stacked().col(0);
    const Eigen::VectorXd vb = b.stacked().col(0);
    const double sd_a =
        std::sqrt((va.array() - va.mean()).square().sum() / (va.size() - 1.0));
    CHECK(std::abs(va.mean() - vb.mean()) < 0.05 * sd_a + 5e-3);
    const double sd_b =
        std::sqrt((vb.array() - vb.mean()).square().sum() / (vb.size() - 1.0));
    CHECK_THAT(sd_b / sd_a, Catch::Matchers::WithinAbs(1.0, 0.15));
  }

  SECTION("chain draws do not depend on the total chain count") {
    SamplerConfig four = config;
    four.chains = 4;
    const auto c4 = nuts_sample(Shifted{base, 0.0}, 1, four, 11);
    CHECK(c4.chains[0] == a.chains[0]);
    CHECK(c4.chains[1] == a.chains[1]);
  }
}

TEST_CASE("increasing eta tightens the posterior", "[posterior][nuts]") {
  Rng rng(46);
  const int n = 300;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Ones(n, 1);
  const auto d = synthetic_pseudo(rng, n, 2.0, 1.0);
  double prev_var = std::numeric_limits<double>::infinity();
  for (double eta : {0.5, 1.0, 2.0}) {
    auto lik = LikelihoodSpec::welsch();
    lik.eta = eta;
    const auto target = build_posterior_target(phi, d, lik, PriorSpec{});
    const auto draws = nuts_sample(target, 1, SamplerConfig{}, 5);
    const Eigen::VectorXd col = draws.stacked().col(0);
    const double var =
        (col.array() - col.mean()).square().sum() / (col.size() - 1.0);
    CHECK(var < prev_var);
    prev_var = var;
  }
}

TEST_CASE("posterior mass sits in the locally convex region on clean data",
          "[posterior][nuts]") {
  Rng rng(47);
  const int n = 500;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Ones(n, 1);
  const auto d = synthetic_pseudo(rng, n, 2.0, 0.5);
  const double c = 1.34;
  const auto target =
      build_posterior_target(phi, d, LikelihoodSpec::welsch(c), PriorSpec{});
  const auto draws = nuts_sample(target, 1, SamplerConfig{}, 3);
  const double post_mean = draws.stacked().col(0).mean();
  int inside = 0;
  for (int i = 0; i < n; ++i) {
    if (std::abs(d.d[i] - post_mean) < c / std::numbers::sqrt2) ++inside;
  }
  CHECK(inside >= n / 2);
}

TEST_CASE("summaries", "[posterior]") {
  SECTION("degenerate draws give zero-width intervals") {
    PosteriorDraws draws;
    Eigen::MatrixXd chain = Eigen::MatrixXd::Zero(20, 2);
    chain.col(0).setConstant(1.5);
    chain.col(1).setConstant(-0.5);
    draws.chains = {chain, chain};
    const Eigen::MatrixXd phi_eval = Eigen::MatrixXd::Ones(3, 2);
    const auto summary = summarize_cate(draws, phi_eval);
    for (int i = 0; i < 3; ++i) {
      CHECK_THAT(summary.tau_mean[i], Catch::Matchers::WithinAbs(1.0, 1e-12));
      CHECK(summary.tau_hi[i] - summary.tau_lo[i] == 0.0);
    }
  }

  SECTION("intercept basis gives identical predictions everywhere") {
    Rng rng(48);
    PosteriorDraws draws;
    Eigen::MatrixXd chain(100, 1);
    for (int i = 0; i < 100; ++i) chain(i, 0) = 2.0 + 0.1 * rng.normal();
    draws.chains = {chain};
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 3);
    const auto summary = summarize_cate(draws, BasisSpec::intercept_only(), x);
    for (int i = 1; i < 5; ++i) {
      CHECK(summary.tau_mean[i] == summary.tau_mean[0]);
    }
  }

  SECTION("contrast summary equals the implied subgroup prediction") {
    PosteriorDraws draws;
    Eigen::MatrixXd chain(50, 2);
    for (int i = 0; i < 50; ++i) {
      chain(i, 0) = 2.0 + 0.01 * i;
      chain(i, 1) = 8.0 - 0.01 * i;
    }
    draws.chains = {chain};
    Eigen::VectorXd contrast(2);
    contrast << 1.0, 1.0;
    const auto fs = linear_functional_summary(draws, contrast);
    Eigen::MatrixXd tail_point(1, 2);
    tail_point << 1.0, 1.0;
    const auto cs = summarize_cate(draws, tail_point);
    CHECK_THAT(fs.mean, Catch::Matchers::WithinAbs(cs.tau_mean[0], 1e-12));
    CHECK_THAT(fs.lo, Catch::Matchers::WithinAbs(cs.tau_lo[0], 1e-12));
  }
}

TEST_CASE("diagnostics", "[posterior][diagnostics]") {
  SECTION("byte-identical chains give r_hat exactly 1") {
    Rng rng(49);
    Eigen::MatrixXd chain(100, 2);
    for (int i = 0; i < 200; ++i) chain.data()[i] = rng.normal();
    PosteriorDraws draws;
    draws.chains = {chain, chain};
    draws.energy = Eigen::MatrixXd::Random(2, 100);
    const auto diag = diagnose(draws);
    CHECK_THAT(diag.r_hat[0], Catch::Matchers::WithinAbs(1.0, 1e-6));
    CHECK_THAT(diag.r_hat[1], Catch::Matchers::WithinAbs(1.0, 1e-6));
  }

  SECTION("iid draws have IAC near 1 and ESS near the total") {
    Rng rng(50);
    PosteriorDraws draws;
    for (int c = 0; c < 2; ++c) {
      Eigen::MatrixXd chain(1000, 1);
      for (int i = 0; i < 1000; ++i) chain(i, 0) = rng.normal();
      draws.chains.push_back(chain);
    }
    draws.energy = Eigen::MatrixXd::Zero(2, 1000);
    draws.energy.setRandom();
    const auto diag = diagnose(draws);
    CHECK_THAT(diag.iac[0], Catch::Matchers::WithinAbs(1.0, 0.2));
    CHECK(diag.ess[0] > 0.8 * 2000);
    CHECK(diag.ess[0] <= 2000.0);
  }

  SECTION("bfmi matches the stored-energy definition exactly") {
    PosteriorDraws draws;
    draws.chains = {Eigen::MatrixXd::Zero(50, 1), Eigen::MatrixXd::Zero(50, 1)};
    Rng rng(51);
    draws.energy.resize(2, 50);
    for (int i = 0; i < 100; ++i) draws.energy.data()[i] = rng.normal();
    const auto diag = diagnose(draws);
    for (int c = 0; c < 2; ++c) {
      const Eigen::VectorXd e = draws.energy.row(c);
      Eigen::VectorXd de(e.size() - 1);
      for (int t = 0; t + 1 < e.size(); ++t) de[t] = e[t + 1] - e[t];
      const double var_e =
          (e.array() - e.mean()).square().sum() / (e.size() - 1.0);
      const double var_de =
          (de.array() - de.mean()).square().sum() / (de.size() - 1.0);
      CHECK_THAT(diag.bfmi[c],
                 Catch::Matchers::WithinAbs(var_de / var_e, 1e-12));
    }
  }

  SECTION("input validation") {
    PosteriorDraws draws;
    draws.chains = {Eigen::MatrixXd::Zero(50, 1)};
    draws.energy = Eigen::MatrixXd::Zero(1, 50);
    CHECK_THROWS_AS(diagnose(draws), std::invalid_argument);  // one chain
    draws.chains = {Eigen::MatrixXd::Zero(5, 1), Eigen::MatrixXd::Zero(5, 1)};
    draws.energy = Eigen::MatrixXd::Zero(2, 5);
    CHECK_THROWS_AS(diagnose(draws), std::invalid_argument);  // too short
  }
}
