#include <cmath>

#include "catch_amalgamated.hpp"
#include "histmix/risklab.hpp"

using namespace histmix;

TEST_CASE("summary statistics against direct formulas") {
  const std::vector<std::vector<double>> est{{0.2, 0.8}, {0.75, 0.25}, {0.3, 0.7}, {0.4, 0.6}};
  const std::vector<double> truth{0.3, 0.7};
  const auto free = summarize_estimates(est, truth, RiskMetric::free);
  // Free coordinates (smallest weight): 0.2, 0.25, 0.3, 0.4.
  const double mean = (0.2 + 0.25 + 0.3 + 0.4) / 4;
  CHECK(free.risk == Catch::Approx((0.01 + 0.0025 + 0.0 + 0.01) / 4));
  CHECK(free.bias2 == Catch::Approx((mean - 0.3) * (mean - 0.3)));
  CHECK(free.risk == Catch::Approx(free.bias2 + free.variance));
  const auto full = summarize_estimates(est, truth, RiskMetric::full);
  CHECK(full.risk == Catch::Approx(2 * free.risk));
  CHECK(full.risk == Catch::Approx(full.bias2 + full.variance));
  CHECK(full.se > 0.0);
}

TEST_CASE("risk curves are reproducible for any worker count") {
  const auto model = preset("sim1");
  EmConfig cfg;
  cfg.restarts = 4;
  const auto serial = risk_curve(model, 60, 2, 1, 4, cfg, 30, 8, {RiskMetric::free, 1, true, 0.05});
  const auto parallel = risk_curve(model, 60, 2, 1, 4, cfg, 30, 8, {RiskMetric::free, 3, true, 0.05});
  REQUIRE(serial.size() == 4);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].p == static_cast<int>(i) + 1);
    CHECK(serial[i].estimate.risk == parallel[i].estimate.risk);
    CHECK(serial[i].estimate.estimates == parallel[i].estimate.estimates);
    CHECK(serial[i].estimate.risk == Catch::Approx(serial[i].estimate.bias2 + serial[i].estimate.variance).margin(1e-15));
    CHECK(serial[i].estimate.reps + serial[i].estimate.failures == 30);
  }
  // The same datasets are reused across partitions: the same seed gives the same p=2 point alone.
  const auto single = risk_curve(model, 60, 2, 2, 2, cfg, 30, 8);
  CHECK(single.front().estimate.risk == serial[1].estimate.risk);
}

TEST_CASE("fine partitions push the estimate toward the limiting weights") {
  const auto model = preset("sim1");
  EmConfig cfg;
  cfg.restarts = 10;
  const auto curve = risk_curve(model, 8, 2, 16, 16, cfg, 20, 4, {RiskMetric::free, 1, true, 0.05});
  for (const auto& e : curve.front().estimate.estimates) CHECK(e[0] == Catch::Approx(0.5).margin(1e-3));
  CHECK(curve.front().estimate.bias2 == Catch::Approx(0.04).margin(1e-3));
}

TEST_CASE("criterion comparison table layout") {
  EmConfig cfg;
  cfg.restarts = 3;
  const auto table = criterion_comparison(preset("sim1"), 60, 2, {SchemeKind::D1, SchemeKind::V2}, cfg, 6, 2);
  REQUIRE(table.rows.size() == 4);
  CHECK(table.rows[0].label == "min_risk");
  CHECK(table.rows[1].label == "risk_p0");
  CHECK(table.rows[1].p == 2);
  CHECK(table.rows[2].label == "D1");
  CHECK(table.rows[3].chosen_p.size() == 6);
  CHECK(table.per_p.size() == static_cast<std::size_t>(max_p_for_n(60)));
  for (const auto& row : table.rows) CHECK(row.sqrt_risk >= table.rows[0].sqrt_risk - 1e-15);
  const auto again = criterion_comparison(preset("sim1"), 60, 2, {SchemeKind::D1, SchemeKind::V2}, cfg, 6, 2,
                                          {RiskMetric::free, 2, false, 0.05});
  for (std::size_t i = 0; i < 4; ++i) CHECK(again.rows[i].sqrt_risk == table.rows[i].sqrt_risk);
}

TEST_CASE("naive criterion collapses on fine partitions") {
  const auto obs = sample(preset("sim1"), 30, 6);
  EmConfig cfg;
  cfg.restarts = 10;
  const auto scheme = make_blocks(30, SchemeKind::D3, 2);
  const double coarse = naive_criterion(obs.points, dyadic_partition(1), scheme, em_estimator(cfg), 2, 1);
  const double fine = naive_criterion(obs.points, dyadic_partition(16), scheme, em_estimator(cfg), 2, 1);
  CHECK(fine < 1e-6);
  CHECK(coarse > fine);
}

TEST_CASE("efficiency experiment on a small run") {
  EmConfig cfg;
  cfg.restarts = 3;
  const auto report = efficiency_experiment(preset("sim1"), 2, {400}, 2, cfg, 40, 3);
  REQUIRE(report.rows.size() == 1);
  CHECK(report.predicted.rows() == 1);
  CHECK(report.predicted(0, 0) > 0.21);  // binned model loses information
  CHECK(report.rows[0].covariance(0, 0) > 0.0);
  CHECK(std::isfinite(report.rows[0].discrepancy));
  const auto flat = repeated_model("flat", {0.4, 0.6}, {Emission::uniform(), Emission::uniform()});
  CHECK_THROWS_AS(efficiency_experiment(flat, 2, {100}, 2, cfg, 5, 1), Error);
}

TEST_CASE("argument checks") {
  EmConfig cfg;
  CHECK_THROWS_AS(risk_curve(preset("sim1"), 50, 3, 1, 2, cfg, 10, 1), Error);
  CHECK_THROWS_AS(risk_curve(preset("sim1"), 50, 2, 3, 2, cfg, 10, 1), Error);
  CHECK_THROWS_AS(risk_curve(preset("sim1"), 50, 2, 1, 2, cfg, 1, 1), Error);
}
