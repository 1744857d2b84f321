#include <catch2/catch_amalgamated.hpp>
#include <Eigen/Dense>
#include <cmath>

#include "robust_cate/calibration.hpp"
#include "robust_cate/rng.hpp"

using namespace robust_cate;

namespace {

PseudoOutcomes make_pseudo(const Eigen::VectorXd& d) {
  PseudoOutcomes out;
  out.d = d;
  out.weights = Eigen::VectorXd::Ones(d.size());
  out.source_arm = Eigen::VectorXi::Zero(d.size());
  return out;
}

}  // namespace

TEST_CASE("sandwich plug-in basics", "[calibration]") {
  SECTION("single zero residual on the intercept basis") {
    Eigen::VectorXd r(1);
    r << 0.0;
    const Eigen::MatrixXd phi = Eigen::MatrixXd::Ones(1, 1);
    const auto m = estimate_sandwich(r, phi, 1.34, std::nullopt, 0.0);
    CHECK_THAT(m.min_eig_raw, Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(m.i_hat(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(m.j_hat(0, 0), Catch::Matchers::WithinAbs(0.0, 1e-12));
  }

  SECTION("residuals beyond c/sqrt(2) contribute negatively") {
    const double c = 1.34;
    Eigen::VectorXd r(2);
    r << 2.0 * c, 0.1;
    const Eigen::MatrixXd phi = Eigen::MatrixXd::Ones(2, 1);
    const double psi_prime_far = evaluate_loss(LossKind::welsch(c), r[0]).psi_prime;
    CHECK(psi_prime_far < 0.0);
    const auto m = estimate_sandwich(r, phi, c, std::nullopt, 1e-2);
    const double psi_prime_near = evaluate_loss(LossKind::welsch(c), r[1]).psi_prime;
    CHECK_THAT(m.min_eig_raw, Catch::Matchers::WithinAbs(
                                  0.5 * (psi_prime_far + psi_prime_near), 1e-12));
  }

  SECTION("all mass redescended: trace error fires") {
    const double c = 1.34;
    Eigen::VectorXd r(2);
    r << 2.0 * c, -2.0 * c;
    const Eigen::MatrixXd phi = Eigen::MatrixXd::Ones(2, 1);
    CHECK_THROWS_AS(estimate_sandwich(r, phi, c, std::nullopt, 1e-2),
                    std::runtime_error);
  }

  SECTION("symmetry, PSD J, and the eigenvalue floor") {
    Rng rng(61);
    const int n = 400, p = 4;
    Eigen::MatrixXd phi(n, p);
    for (int i = 0; i < n * p; ++i) phi.data()[i] = rng.normal();
    Eigen::VectorXd r(n);
    for (int i = 0; i < n; ++i) {
      r[i] = rng.normal() * (rng.bernoulli(0.2) ? 8.0 : 0.7);
    }
    const auto m = estimate_sandwich(r, phi, 1.34, std::nullopt, 1e-2);
    CHECK((m.i_hat - m.i_hat.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((m.j_hat - m.j_hat.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> j_eig(m.j_hat);
    CHECK(j_eig.eigenvalues().minCoeff() >= -1e-10);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> i_eig(m.i_hat);
    CHECK(i_eig.eigenvalues().minCoeff() >= m.eig_floor - 1e-12);
  }

  SECTION("indefinite raw matrix is stabilised to PD and flagged") {
    const double c = 1.34;
    Eigen::MatrixXd phi(4, 2);
    phi << 1, 0, 1, 0, 0, 1, 0, 1;
    Eigen::VectorXd r(4);
    r << 5.0, 5.0, 0.1, 0.1;  // first coordinate sees only redescended mass
    const auto m = estimate_sandwich(r, phi, c, std::nullopt, 1e-2);
    CHECK(m.min_eig_raw < 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m.i_hat);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("eta formulas", "[calibration]") {
  SandwichMatrices m;
  m.i_hat = Eigen::MatrixXd::Identity(3, 3) * 2.0;
  m.i_hat(0, 1) = m.i_hat(1, 0) = 0.3;

  SECTION("Bartlett identity gives eta 1") {
    m.j_hat = m.i_hat;
    CHECK_THAT(eta_trace(m), Catch::Matchers::WithinAbs(1.0, 1e-12));
  }

  SECTION("J = 2I gives eta one half, for trace and any functional") {
    m.j_hat = 2.0 * m.i_hat;
    CHECK_THAT(eta_trace(m), Catch::Matchers::WithinAbs(0.5, 1e-12));
    Eigen::VectorXd a(3);
    a << 1.0, -0.4, 2.2;
    CHECK_THAT(eta_functional(m, a), Catch::Matchers::WithinAbs(0.5, 1e-12));
  }

  SECTION("scalar case reduces to i/j and matches the trace formula") {
    SandwichMatrices s;
    s.i_hat = Eigen::MatrixXd::Constant(1, 1, 3.0);
    s.j_hat = Eigen::MatrixXd::Constant(1, 1, 4.0);
    Eigen::VectorXd a(1);
    a << -2.0;
    CHECK_THAT(eta_functional(s, a), Catch::Matchers::WithinAbs(0.75, 1e-12));
    CHECK_THAT(eta_trace(s), Catch::Matchers::WithinAbs(0.75, 1e-12));
  }

  SECTION("functional eta is scale-free in the contrast") {
    m.j_hat = m.i_hat;
    m.j_hat(2, 2) = 5.0;
    Eigen::VectorXd a(3);
    a << 0.5, 1.0, -1.0;
    const double base = eta_functional(m, a);
    CHECK_THAT(eta_functional(m, 17.0 * a),
               Catch::Matchers::WithinRel(base, 1e-12));
    CHECK_THROWS_AS(eta_functional(m, Eigen::VectorXd::Zero(3)),
                    std::invalid_argument);
  }
}

TEST_CASE("ridge bias is small at p <= 6 on clean data", "[calibration]") {
  Rng rng(62);
  const int n = 2000, p = 6;
  Eigen::MatrixXd phi(n, p);
  phi.col(0).setOnes();
  for (int i = 0; i < n; ++i) {
    for (int j = 1; j < p; ++j) phi(i, j) = rng.normal();
  }
  Eigen::VectorXd r(n);
  for (int i = 0; i < n; ++i) r[i] = 0.8 * rng.normal();
  const auto m0 = estimate_sandwich(r, phi, 1.34, std::nullopt, 0.0);
  REQUIRE(m0.min_eig_raw > 0.0);
  const auto m2 = estimate_sandwich(r, phi, 1.34, std::nullopt, 1e-2);
  const double eta0 = eta_trace(m0);
  const double eta2 = eta_trace(m2);
  CHECK(std::abs(eta2 - eta0) / std::abs(eta0) < 0.02);
}

TEST_CASE("calibrate_eta on a conjugate clean DGP lands near 1",
          "[calibration][slow]") {
  Rng rng(63);
  const int n = 500;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Ones(n, 1);
  Eigen::VectorXd d(n);
  for (int i = 0; i < n; ++i) d[i] = 2.0 + rng.normal();
  const auto pseudo = make_pseudo(d);
  const auto lik = LikelihoodSpec::gaussian(1.0, /*fixed=*/true);
  PriorSpec prior{PriorFamily::Gaussian, 10.0, 0.0};
  const auto calib = calibrate_eta(phi, pseudo, lik, prior, SamplerConfig{}, 9,
                                   EtaMode::Trace);
  CHECK_THAT(calib.eta, Catch::Matchers::WithinAbs(1.0, 0.3));
  CHECK(calib.refit.n_chains() == 2);
}

TEST_CASE("huber irls point fit", "[calibration]") {
  Rng rng(64);
  const int n = 500;
  Eigen::MatrixXd phi(n, 2);
  phi.col(0).setOnes();
  for (int i = 0; i < n; ++i) phi(i, 1) = rng.normal();
  Eigen::VectorXd beta_true(2);
  beta_true << 2.0, -1.0;
  Eigen::VectorXd d = phi * beta_true;
  for (int i = 0; i < n; ++i) d[i] += rng.normal();
  Eigen::VectorXd d_dirty = d;
  for (int i = 0; i < n; i += 10) d_dirty[i] += 5000.0;

  const Eigen::VectorXd clean_fit = huber_irls(phi, d, 1.345);
  CHECK_THAT(clean_fit[0], Catch::Matchers::WithinAbs(2.0, 0.15));
  CHECK_THAT(clean_fit[1], Catch::Matchers::WithinAbs(-1.0, 0.15));

  const Eigen::VectorXd robust_fit = huber_irls(phi, d_dirty, 1.345);
  CHECK_THAT(robust_fit[0], Catch::Matchers::WithinAbs(2.0, 0.3));
  // OLS on the same contaminated data is dragged by hundreds
  const Eigen::VectorXd ols =
      (phi.transpose() * phi).ldlt().solve(phi.transpose() * d_dirty);
  CHECK(std::abs(ols[0] - 2.0) > 100.0);
}

TEST_CASE("llb selector", "[calibration][slow]") {
  Rng rng(65);
  const int n = 400;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Ones(n, 1);
  Eigen::VectorXd d(n);
  for (int i = 0; i < n; ++i) d[i] = 2.0 + rng.normal();
  const auto pseudo = make_pseudo(d);

  SECTION("single-element grid returns that element") {
    const double eta = calibrate_eta_llb(phi, pseudo, LikelihoodSpec::welsch(),
                                         PriorSpec{}, SamplerConfig{}, 3,
                                         {1.7}, 10);
    CHECK(eta == 1.7);
  }

  SECTION("deterministic under a fixed seed") {
    const std::vector<double> grid{0.5, 1.0, 2.0};
    const double a = calibrate_eta_llb(phi, pseudo, LikelihoodSpec::welsch(),
                                       PriorSpec{}, SamplerConfig{}, 4, grid, 20);
    const double b = calibrate_eta_llb(phi, pseudo, LikelihoodSpec::welsch(),
                                       PriorSpec{}, SamplerConfig{}, 4, grid, 20);
    CHECK(a == b);
  }

  SECTION("empty grid rejected") {
    CHECK_THROWS_AS(calibrate_eta_llb(phi, pseudo, LikelihoodSpec::welsch(),
                                      PriorSpec{}, SamplerConfig{}, 3, {}, 10),
                    std::invalid_argument);
  }
}

TEST_CASE("rbci selector", "[calibration][slow]") {
  Rng rng(66);
  const int n = 300;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Ones(n, 1);
  Eigen::VectorXd d(n);
  for (int i = 0; i < n; ++i) d[i] = 2.0 + rng.normal();
  const auto pseudo = make_pseudo(d);

  SECTION("degenerate grid returns its element") {
    const auto res = rbci_omega(phi, pseudo, LikelihoodSpec::welsch(),
                                PriorSpec{}, SamplerConfig{}, 5, {2.0}, 15);
    CHECK(res.omega == 2.0);
    CHECK(res.interval_lo < res.interval_hi);
  }

  SECTION("score ordering deterministic under a fixed seed") {
    const auto a = rbci_omega(phi, pseudo, LikelihoodSpec::welsch(),
                              PriorSpec{}, SamplerConfig{}, 6, {0.5, 1.0, 2.0}, 15);
    const auto b = rbci_omega(phi, pseudo, LikelihoodSpec::welsch(),
                              PriorSpec{}, SamplerConfig{}, 6, {0.5, 1.0, 2.0}, 15);
    CHECK(a.omega == b.omega);
    CHECK(a.score == b.score);
  }
}

TEST_CASE("bayesian bootstrap weights", "[calibration][modular]") {
  SECTION("n = 1 gives exactly weight 1") {
    Rng rng(67);
    const auto w = bayesian_bootstrap_weights(1, rng);
    CHECK(w[0] == 1.0);
  }

  SECTION("weights sum to n") {
    Rng rng(68);
    for (int n : {3, 17, 400}) {
      const auto w = bayesian_bootstrap_weights(n, rng);
      CHECK_THAT(w.sum(), Catch::Matchers::WithinAbs(n, 1e-9));
      CHECK(w.minCoeff() > 0.0);
    }
  }

  SECTION("each weight has mean 1 across replicates") {
    Rng rng(69);
    const int n = 5, reps = 10000;
    Eigen::VectorXd mean_w = Eigen::VectorXd::Zero(n);
    for (int r = 0; r < reps; ++r) {
      mean_w += bayesian_bootstrap_weights(n, rng);
    }
    mean_w /= reps;
    for (int i = 0; i < n; ++i) {
      CHECK_THAT(mean_w[i], Catch::Matchers::WithinAbs(1.0, 0.05));
    }
  }
}
