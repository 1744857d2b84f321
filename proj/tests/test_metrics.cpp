#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "robust_cate/metrics.hpp"
#include "robust_cate/rng.hpp"

using namespace robust_cate;

TEST_CASE("pehe and ate_error", "[metrics]") {
  const std::vector<double> truth{2, 2};
  CHECK(pehe(std::vector<double>{2, 2}, truth) == 0.0);
  CHECK_THAT(pehe(std::vector<double>{3, 3}, truth),
             Catch::Matchers::WithinAbs(1.0, 1e-12));
  CHECK_THAT(pehe(std::vector<double>{0, 4}, truth),
             Catch::Matchers::WithinAbs(2.0, 1e-12));

  CHECK(ate_error(std::vector<double>{2, 2}, truth) == 0.0);
  CHECK(ate_error(std::vector<double>{0, 4}, truth) == 0.0);
  CHECK_THAT(ate_error(std::vector<double>{2.5, 2.5}, truth),
             Catch::Matchers::WithinAbs(0.5, 1e-12));

  CHECK_THROWS_AS(pehe(std::vector<double>{1}, truth), std::invalid_argument);

  SECTION("pehe dominates ate_error on random inputs") {
    Rng rng(99);
    for (int rep = 0; rep < 200; ++rep) {
      std::vector<double> a(20), b(20);
      for (int i = 0; i < 20; ++i) {
        a[i] = rng.uniform(-5, 5);
        b[i] = rng.uniform(-5, 5);
      }
      CHECK(pehe(a, b) >= ate_error(a, b) - 1e-12);
    }
  }
}

TEST_CASE("coverage with Wilson intervals", "[metrics]") {
  SECTION("25 of 30") {
    std::vector<std::pair<double, double>> intervals;
    std::vector<double> truths;
    for (int i = 0; i < 30; ++i) {
      intervals.emplace_back(0.0, 1.0);
      truths.push_back(i < 25 ? 0.5 : 2.0);
    }
    const auto report = coverage(intervals, truths);
    CHECK(report.covered == 25);
    CHECK_THAT(report.rate, Catch::Matchers::WithinAbs(25.0 / 30.0, 1e-12));
    CHECK_THAT(report.wilson_lo, Catch::Matchers::WithinAbs(0.66, 0.005));
    CHECK_THAT(report.wilson_hi, Catch::Matchers::WithinAbs(0.93, 0.005));
    CHECK_THAT(report.mean_width, Catch::Matchers::WithinAbs(1.0, 1e-12));
  }

  SECTION("3 of 3 and 0 of 3") {
    const auto full = wilson_interval(3, 3);
    CHECK_THAT(full.first, Catch::Matchers::WithinAbs(0.44, 0.005));
    CHECK_THAT(full.second, Catch::Matchers::WithinAbs(1.00, 1e-9));
    const auto none = wilson_interval(0, 3);
    CHECK_THAT(none.first, Catch::Matchers::WithinAbs(0.00, 1e-9));
    CHECK_THAT(none.second, Catch::Matchers::WithinAbs(0.56, 0.005));
  }

  SECTION("Wilson interval contains the point estimate, exhaustively") {
    for (int n = 1; n <= 1000; n += (n < 50 ? 1 : 37)) {
      for (int k = 0; k <= n; k += std::max(1, n / 13)) {
        const auto [lo, hi] = wilson_interval(k, n);
        const double p = static_cast<double>(k) / n;
        CHECK(lo <= p + 1e-12);
        CHECK(hi >= p - 1e-12);
      }
    }
    // full exhaustive sweep, cheap enough to keep
    for (int n = 1; n <= 1000; ++n) {
      const auto lo_edge = wilson_interval(0, n);
      const auto hi_edge = wilson_interval(n, n);
      REQUIRE(lo_edge.first <= 0.0 + 1e-12);
      REQUIRE(hi_edge.second >= 1.0 - 1e-12);
    }
  }

  CHECK_THROWS_AS(
      coverage(std::vector<std::pair<double, double>>{{1.0, 0.0}},
               std::vector<double>{0.5}),
      std::invalid_argument);
}

TEST_CASE("winkler score", "[metrics]") {
  CHECK_THAT(winkler_score(1.0, 3.0, 2.0), Catch::Matchers::WithinAbs(2.0, 1e-12));
  CHECK_THAT(winkler_score(1.0, 3.0, 0.5),
             Catch::Matchers::WithinAbs(2.0 + 40.0 * 0.5, 1e-12));
  CHECK_THAT(winkler_score(1.0, 3.0, 3.25),
             Catch::Matchers::WithinAbs(2.0 + 40.0 * 0.25, 1e-12));
  CHECK(winkler_score(2.0, 2.0, 2.0) == 0.0);
  CHECK_THROWS_AS(winkler_score(3.0, 1.0, 2.0), std::invalid_argument);

  SECTION("degenerate interval at the truth minimises the score") {
    const double truth = 1.7;
    const double best = winkler_score(truth, truth, truth);
    Rng rng(5);
    for (int i = 0; i < 500; ++i) {
      const double a = rng.uniform(-3, 3);
      const double b = a + rng.uniform(0, 4);
      CHECK(winkler_score(a, b, truth) >= best);
    }
  }
}

TEST_CASE("policy regret", "[metrics]") {
  const std::vector<double> truth(100, 2.0);
  SECTION("all treated, no regret") {
    CHECK(policy_regret(std::vector<double>(100, 0.5), truth) == 0.0);
  }
  SECTION("87 percent treated pays 2 x 0.13") {
    std::vector<double> tau_hat(100, 1.0);
    for (int i = 0; i < 13; ++i) tau_hat[i] = -1.0;
    CHECK_THAT(policy_regret(tau_hat, truth),
               Catch::Matchers::WithinAbs(0.26, 1e-12));
  }
  SECTION("exact recovery has zero regret regardless of signs") {
    std::vector<double> mixed{2.0, -1.0, 0.5, -3.0};
    CHECK(policy_regret(mixed, mixed) == 0.0);
  }
}

TEST_CASE("stratified coverage", "[metrics]") {
  Rng rng(11);
  const int n = 1000;
  std::vector<std::pair<double, double>> intervals(n, {0.0, 1.0});
  std::vector<double> truths(n, 0.5);
  std::vector<double> strata(n);
  for (int i = 0; i < n; ++i) strata[i] = rng.normal();

  const auto reports = stratified_coverage(intervals, truths, strata, 5);
  REQUIRE(reports.size() == 5);
  int total = 0;
  for (const auto& r : reports) {
    CHECK(r.rate == 1.0);
    CHECK(std::abs(r.total - 200) <= 1);
    total += r.total;
  }
  CHECK(total == n);

  CHECK_THROWS_AS(
      stratified_coverage(intervals, truths, std::vector<double>(n, 1.0), 5),
      std::invalid_argument);
}
