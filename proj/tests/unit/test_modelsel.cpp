#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "catch_amalgamated.hpp"
#include "histmix/modelsel.hpp"
#include "histmix/scenarios.hpp"

using namespace histmix;

namespace {

// Independent integer evaluation of the scheme formulas.
SchemeSizes expected_sizes(std::size_t n, SchemeKind kind) {
  auto icbrt_floor = [](std::size_t v) {
    std::size_t r = 0;
    while ((r + 1) * (r + 1) * (r + 1) <= v) ++r;
    return r;
  };
  switch (kind) {
    case SchemeKind::D1: {
      const long double x = std::pow((long double)n, 2.0L / 3.0L) * std::log((long double)n) / 20.0L;
      const auto b = static_cast<std::size_t>(std::ceil(x));
      return {n / (2 * b), b};
    }
    case SchemeKind::D2: {
      std::size_t b = icbrt_floor(n);
      if (b * b * b < n) ++b;
      return {n / (2 * b), b};
    }
    case SchemeKind::D3: return {n / 10, n / (2 * (n / 10))};
    case SchemeKind::V1: {
      const auto a = icbrt_floor(n);
      return {a, n / a};
    }
    case SchemeKind::V2: {
      std::size_t a = 0;  // largest a with (2a)^3 <= n^2
      while (8 * (a + 1) * (a + 1) * (a + 1) <= n * n) ++a;
      return {a, n / a};
    }
    case SchemeKind::V3: return {n / 10, n / (n / 10)};
    default: return {};
  }
}

Estimator first_point_estimator() {
  return [](std::span<const Point> s, const Partition&, std::size_t, std::uint64_t) {
    return std::vector<double>{s[0][0], 1.0 - s[0][0]};
  };
}

BlockScheme manual_scheme(std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> pairs) {
  BlockScheme s;
  s.n = 0;
  for (auto& [train, test] : pairs) s.blocks.push_back({train, test});
  s.b_n = s.blocks.size();
  s.a_n = s.blocks.front().train.size();
  return s;
}

}  // namespace

TEST_CASE("scheme sizes follow the block formulas") {
  CHECK(scheme_sizes(100, SchemeKind::D1).b_n == 5);
  CHECK(scheme_sizes(100, SchemeKind::D1).a_n == 10);
  CHECK(scheme_sizes(100, SchemeKind::V3).b_n == 10);
  CHECK(scheme_sizes(20, SchemeKind::D3).a_n == 2);
  CHECK(scheme_sizes(20, SchemeKind::D3).b_n == 5);
  for (std::size_t n : {27u, 50u, 64u, 100u, 125u, 343u, 500u, 1000u, 4096u})
    for (auto kind : all_schemes()) {
      const auto got = scheme_sizes(n, kind), want = expected_sizes(n, kind);
      INFO("n=" << n << " scheme " << to_string(kind));
      REQUIRE(got.a_n == want.a_n);
      REQUIRE(got.b_n == want.b_n);
    }
  CHECK_THROWS_AS(scheme_sizes(5, SchemeKind::D3), Error);
}

TEST_CASE("disjoint schemes use 2 a_n b_n distinct indices") {
  for (auto kind : {SchemeKind::D1, SchemeKind::D2, SchemeKind::D3}) {
    const auto s = make_blocks(137, kind, 5);
    std::set<std::size_t> seen;
    for (const auto& b : s.blocks) {
      REQUIRE(b.train.size() == s.a_n);
      REQUIRE(b.test.size() == s.a_n);
      seen.insert(b.train.begin(), b.train.end());
      seen.insert(b.test.begin(), b.test.end());
    }
    CHECK(seen.size() == 2 * s.a_n * s.b_n);
    CHECK(s.unused.size() == 137 - seen.size());
    for (auto i : s.unused) CHECK_FALSE(seen.count(i));
  }
  const auto d3 = make_blocks(20, SchemeKind::D3, 1);
  CHECK(d3.unused.empty());
}

TEST_CASE("V-fold schemes test on the full complement") {
  const auto s = make_blocks(100, SchemeKind::V3, 9);
  std::set<std::size_t> trained;
  for (const auto& b : s.blocks) {
    REQUIRE(b.train.size() == 10);
    REQUIRE(b.test.size() == 90);
    std::vector<std::size_t> all;
    std::ranges::merge(b.train, b.test, std::back_inserter(all));
    std::vector<std::size_t> expect(100);
    std::iota(expect.begin(), expect.end(), 0);
    REQUIRE(all == expect);
    for (auto i : b.train) REQUIRE(trained.insert(i).second);
  }
  const auto v2 = make_blocks(50, SchemeKind::V2, 3);
  CHECK(v2.blocks.front().test.size() == 50 - v2.a_n);
}

TEST_CASE("block layout depends only on the seed") {
  const auto a = make_blocks(90, SchemeKind::D2, 4), b = make_blocks(90, SchemeKind::D2, 4),
             c = make_blocks(90, SchemeKind::D2, 5);
  CHECK(a.blocks.front().train == b.blocks.front().train);
  CHECK(a.blocks.front().train != c.blocks.front().train);
}

TEST_CASE("criteria on hand-set estimates") {
  // Points carry the estimate in their first coordinate.
  const std::vector<Point> data{{0.3, 0, 0}, {0.35, 0, 0}, {0.4, 0, 0}, {0.35, 0, 0}};
  const auto scheme = manual_scheme({{{0}, {1}}, {{2}, {3}}});
  const auto part = Partition::regular(1);
  CHECK(cv_criterion(data, part, part, scheme, first_point_estimator(), 2, 0) == Catch::Approx(0.005));
  // First pair disagrees by (0.2, 0.2), second pair agrees.
  const std::vector<Point> naive{{0.3, 0, 0}, {0.5, 0, 0}, {0.5, 0, 0}, {0.5, 0, 0}};
  CHECK(naive_criterion(naive, part, scheme, first_point_estimator(), 2, 0) == Catch::Approx(0.02));
  // Same arms on both sides: the two criteria differ by the normalization only.
  CHECK(cv_criterion(naive, part, part, scheme, first_point_estimator(), 2, 0) ==
        Catch::Approx(2 * naive_criterion(naive, part, scheme, first_point_estimator(), 2, 0)));
  const Estimator constant = [](std::span<const Point>, const Partition&, std::size_t, std::uint64_t) {
    return std::vector<double>{0.25, 0.75};
  };
  CHECK(cv_criterion(data, part, part, scheme, constant, 2, 0) == 0.0);
  const Estimator swapped = [](std::span<const Point> s, const Partition&, std::size_t, std::uint64_t) {
    return std::vector<double>{1.0 - s[0][0], s[0][0]};
  };
  CHECK(cv_criterion(data, part, part, scheme, swapped, 2, 0) ==
        Catch::Approx(cv_criterion(data, part, part, scheme, first_point_estimator(), 2, 0)));
}

TEST_CASE("estimator failures carry the block index") {
  const std::vector<Point> data(8, Point{0.5, 0.5, 0.5});
  const auto scheme = make_custom_blocks(8, 2, 2, true, 1);
  int calls = 0;
  const Estimator flaky = [&](std::span<const Point>, const Partition&, std::size_t, std::uint64_t) -> std::vector<double> {
    if (++calls == 3) fail(ErrorKind::estimation, "no luck");
    return {0.5, 0.5};
  };
  try {
    cv_criterion(data, Partition::regular(1), Partition::regular(1), scheme, flaky, 2, 0);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::estimation);
    CHECK(std::string(e.what()).find("block 1") != std::string::npos);
  }
}

TEST_CASE("selection picks the minimizer and breaks ties toward fewer bins") {
  const std::vector<Point> data(20, Point{0.5, 0.5, 0.5});
  const auto scheme = make_custom_blocks(20, 4, 2, true, 3);
  const auto ref = Partition::regular(4);
  // Candidate with 4 bins reproduces the reference exactly; others are off by bins/100.
  const Estimator by_bins = [](std::span<const Point>, const Partition& p, std::size_t, std::uint64_t) {
    const double off = p.size() == 4 ? 0.0 : static_cast<double>(p.size()) / 100.0;
    return std::vector<double>{0.3 + off, 0.7 - off};
  };
  const std::vector<Partition> cands{Partition::regular(2), Partition::regular(4), Partition::regular(8)};
  auto report = select_partition(data, cands, ref, scheme, by_bins, 2, 1);
  CHECK(report.chosen == 1);
  CHECK(report.candidates[1].criterion == 0.0);
  CHECK(report.blocks.size() == 2);
  CHECK(report.blocks[0].candidates.size() == 3);

  const Estimator flat = [](std::span<const Point>, const Partition&, std::size_t, std::uint64_t) {
    return std::vector<double>{0.5, 0.5};
  };
  const std::vector<Partition> tied{Partition::regular(8), Partition::regular(2), Partition::regular(4)};
  CHECK(select_partition(data, tied, ref, scheme, flat, 2, 1).chosen == 1);

  const std::vector<Partition> single{Partition::regular(16)};
  CHECK(select_partition(data, single, ref, scheme, by_bins, 2, 1).chosen == 0);

  const Estimator fails_on_fine = [](std::span<const Point>, const Partition& p, std::size_t, std::uint64_t) -> std::vector<double> {
    if (p.size() == 2) fail(ErrorKind::estimation, "too coarse");
    return {0.5, 0.5};
  };
  report = select_partition(data, cands, ref, scheme, fails_on_fine, 2, 1);
  CHECK(report.candidates[0].failed);
  CHECK(report.chosen == 1);
  const std::vector<Partition> doomed{Partition::regular(2)};
  try {
    select_partition(data, doomed, ref, scheme, fails_on_fine, 2, 1);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::selection);
  }
}

TEST_CASE("selection report JSON round-trips its key fields") {
  const auto obs = sample(preset("sim1"), 100, 2);
  EmConfig cfg;
  cfg.repeated = true;
  cfg.restarts = 3;
  const auto scheme = make_blocks(100, SchemeKind::D1, 4);
  const std::vector<Partition> cands{dyadic_partition(1), dyadic_partition(2), dyadic_partition(3)};
  const auto report = select_partition(obs.points, cands, dyadic_partition(2), scheme, em_estimator(cfg), 2, 5, {true});
  const auto j = nlohmann::json::parse(to_json(report).dump());
  CHECK(j["scheme"]["b_n"] == 5);
  CHECK(j["scheme"]["a_n"] == 10);
  CHECK(j["chosen_index"].get<std::size_t>() == report.chosen);
  CHECK(j["candidates"].size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(j["candidates"][i]["criterion"].get<double>() == report.candidates[i].criterion);
    CHECK(j["candidates"][i]["naive_criterion"].get<double>() == report.candidates[i].naive);
  }
  const auto again = select_partition(obs.points, cands, dyadic_partition(2), scheme, em_estimator(cfg), 2, 5, {true});
  CHECK(to_json(again).dump() == to_json(report).dump());
}

TEST_CASE("criterion spread shrinks like one over root b_n") {
  // Stub estimator: i.i.d. bounded noise driven by the per-block seed.
  const Estimator noise = [](std::span<const Point>, const Partition&, std::size_t, std::uint64_t seed) {
    Rng rng(seed);
    const double u = rng.uniform();
    return std::vector<double>{u, 1.0 - u};
  };
  std::vector<double> xs, ys;
  for (std::size_t b : {4u, 8u, 16u, 32u, 64u, 128u}) {
    const std::size_t n = 2 * b;
    const std::vector<Point> data(n, Point{0.5, 0.5, 0.5});
    const auto scheme = make_custom_blocks(n, 1, b, true, 1);
    std::vector<double> vals;
    for (std::uint64_t s = 0; s < 400; ++s)
      vals.push_back(cv_criterion(data, Partition::regular(1), Partition::regular(2), scheme, noise, 2, derive_seed(77, {b, s})));
    const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
    double var = 0;
    for (double v : vals) var += (v - mean) * (v - mean);
    xs.push_back(std::log(double(b)));
    ys.push_back(0.5 * std::log(var / (vals.size() - 1)));
  }
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  CHECK(std::abs(sxy / sxx + 0.5) <= 0.15);
}

TEST_CASE("oracle diagnostics") {
  CHECK(oracle_bound(0.01, 0.0, 0.0) == Catch::Approx(0.01));
  CHECK(oracle_bound(0.01, 0.5, 0.001) == Catch::Approx(3 * 0.01 + 0.004));
  const std::size_t a = 10, n = 100;
  const double eps = 1.0 / (a * std::log(double(n)));
  CHECK(oracle_probability(6, 5, 0.002, eps, eps) ==
        Catch::Approx(1 - 12 * std::exp(-10 * std::pow(eps * 0.002 + eps, 2))));
  const std::vector<double> risks{0.004, 0.002, 0.003};
  const std::vector<std::size_t> always_best{1, 1, 1};
  auto st = oracle_gap(always_best, risks, 0.1, 0.0);
  CHECK(st.mean_gap == 0.0);
  CHECK(st.violation_fraction == 0.0);
  const std::vector<std::size_t> mixed{0, 1, 2, 0};
  st = oracle_gap(mixed, risks, 0.1, 0.0);
  CHECK(st.mean_selected_risk == Catch::Approx(0.00325));
  CHECK(st.violation_fraction == Catch::Approx(0.75));
  const std::vector<std::size_t> outside{5};
  CHECK_THROWS_AS(oracle_gap(outside, risks, 0.1, 0.0), Error);
}
