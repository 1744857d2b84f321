#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "robust_cate/gbt.hpp"
#include "robust_cate/numeric.hpp"
#include "robust_cate/rng.hpp"

using namespace robust_cate;

namespace {

Eigen::MatrixXd random_design(Rng& rng, int n, int d) {
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
  }
  return x;
}

}  // namespace

TEST_CASE("constant target reproduced exactly", "[gbt]") {
  Rng rng(1);
  const auto x = random_design(rng, 100, 3);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(100, 3.25);
  for (const LossKind loss : {LossKind::squared_error(), LossKind::huber(0.5),
                              LossKind::welsch(1.34)}) {
    GbtParams params;
    params.loss = loss;
    params.n_trees = 20;
    const auto model = fit_gbt(x, y, params);
    const auto pred = model.predict(x);
    for (int i = 0; i < 100; ++i) {
      REQUIRE_THAT(pred[i], Catch::Matchers::WithinAbs(3.25, 1e-9));
    }
  }
}

TEST_CASE("noiseless linear signal is fit tightly", "[gbt]") {
  Rng rng(2);
  const auto x = random_design(rng, 1000, 1);
  const Eigen::VectorXd y = x.col(0);
  GbtParams params;  // 200 trees, depth 4, lr 0.1
  params.min_samples_leaf = 10;
  const auto model = fit_gbt(x, y, params);
  const Eigen::VectorXd pred = model.predict(x);
  const double rmse = std::sqrt((pred - y).squaredNorm() / 1000.0);
  CHECK(rmse < 0.05);
}

TEST_CASE("huber loss shrugs off shifted targets", "[gbt]") {
  Rng rng(3);
  const int n = 1000;
  const auto x = random_design(rng, n, 3);
  Eigen::VectorXd mu(n), y_clean(n);
  for (int i = 0; i < n; ++i) {
    mu[i] = 1.0 + x(i, 0) + 0.5 * x(i, 1);
    y_clean[i] = mu[i] + rng.normal();
  }
  Eigen::VectorXd y_dirty = y_clean;
  std::vector<int> clean_rows;
  for (int i = 0; i < n; ++i) {
    if (i % 10 == 0) {
      y_dirty[i] += 5000.0;
    } else {
      clean_rows.push_back(i);
    }
  }

  const auto median_error = [&](const GbtModel& model) {
    std::vector<double> errs;
    for (int i : clean_rows) {
      errs.push_back(std::abs(model.predict_one(x.row(i)) - mu[i]));
    }
    return median(errs);
  };

  GbtParams squared;
  const double clean_fit_error = median_error(fit_gbt(x, y_clean, squared));

  GbtParams huber;
  huber.loss = LossKind::huber(0.5);
  const double robust_error = median_error(fit_gbt(x, y_dirty, huber));
  const double naive_error = median_error(fit_gbt(x, y_dirty, squared));

  CHECK(robust_error < 3.0 * clean_fit_error);
  CHECK(naive_error >= 3.0 * clean_fit_error);
}

TEST_CASE("gbt input validation", "[gbt]") {
  Rng rng(4);
  const auto x = random_design(rng, 30, 2);
  Eigen::VectorXd y = x.col(0);
  GbtParams params;
  params.min_samples_leaf = 20;
  CHECK_THROWS_AS(fit_gbt(x, y, params), std::invalid_argument);  // 30 < 40
  params.min_samples_leaf = 5;
  y[3] = std::nan("");
  CHECK_THROWS_AS(fit_gbt(x, y, params), std::invalid_argument);
  CHECK_THROWS_AS(fit_gbt(Eigen::MatrixXd(0, 2), Eigen::VectorXd(0), params),
                  std::invalid_argument);
}

TEST_CASE("propensity model", "[gbt]") {
  Rng rng(5);

  SECTION("randomised assignment centres at one half") {
    const int n = 2000;
    const auto x = random_design(rng, n, 3);
    Eigen::VectorXi w(n);
    for (int i = 0; i < n; ++i) w[i] = rng.bernoulli(0.5) ? 1 : 0;
    GbtParams params;
    const auto model = fit_propensity(x, w, params);
    const Eigen::VectorXd pi = model.predict(x);
    CHECK_THAT(pi.mean(), Catch::Matchers::WithinAbs(0.5, 0.03));
  }

  SECTION("separable classes hit the clip bounds") {
    const int n = 500;
    const auto x = random_design(rng, n, 2);
    Eigen::VectorXi w(n);
    for (int i = 0; i < n; ++i) w[i] = x(i, 0) > 0.0 ? 1 : 0;
    GbtParams params;
    const auto model = fit_propensity(x, w, params);
    const Eigen::VectorXd pi = model.predict(x);
    int at_bounds = 0;
    for (int i = 0; i < n; ++i) {
      REQUIRE(pi[i] >= 0.01);
      REQUIRE(pi[i] <= 0.99);
      if (pi[i] == 0.01 || pi[i] == 0.99) ++at_bounds;
    }
    CHECK(at_bounds > n * 0.9);
  }

  SECTION("single-class input rejected") {
    const auto x = random_design(rng, 100, 2);
    const Eigen::VectorXi w = Eigen::VectorXi::Ones(100);
    CHECK_THROWS_AS(fit_propensity(x, w, GbtParams{}), std::invalid_argument);
  }
}

TEST_CASE("weighted fits respond to weights", "[gbt]") {
  Rng rng(6);
  const int n = 400;
  const auto x = random_design(rng, n, 1);
  Eigen::VectorXd y(n);
  Eigen::VectorXd weights(n);
  // two flat populations; weights select which one dominates
  for (int i = 0; i < n; ++i) {
    y[i] = i % 2 == 0 ? 0.0 : 10.0;
    weights[i] = i % 2 == 0 ? 1.0 : 1e-6;
  }
  GbtParams params;
  params.n_trees = 50;
  const auto model = fit_gbt(x, y, params, weights);
  CHECK_THAT(model.predict_one(x.row(0)), Catch::Matchers::WithinAbs(0.0, 0.05));
}
