#include <cmath>

#include "catch_amalgamated.hpp"
#include "histmix/fisher.hpp"
#include "histmix/scenarios.hpp"

using namespace histmix;

namespace {

MixtureParams random_params(std::size_t k, std::size_t bins, bool repeated, Rng& rng) {
  MixtureParams p;
  p.theta = rng.dirichlet_flat(k);
  p.omega = BinMasses(k, bins);
  p.partition = Partition::regular(bins);
  p.repeated = repeated;
  for (std::size_t j = 0; j < k; ++j) {
    const auto shared = rng.dirichlet_flat(bins);
    for (std::size_t c = 0; c < 3; ++c) {
      const auto row = repeated ? shared : rng.dirichlet_flat(bins);
      for (std::size_t m = 0; m < bins; ++m) p.omega(j, c, m) = 0.05 / bins + 0.95 * row[m];
    }
  }
  return p;
}

// Moves free coordinate `idx` by h; the dependent last weight / last bin mass
// absorbs the change.
MixtureParams shifted(MixtureParams p, std::size_t idx, double h, bool repeated) {
  const std::size_t k = p.components(), last = p.bins() - 1;
  if (idx < k - 1) {
    p.theta[idx] += h;
    p.theta[k - 1] -= h;
    return p;
  }
  idx -= k - 1;
  const std::size_t m = idx % last, row = idx / last;
  const std::size_t j = repeated ? row : row / 3;
  for (std::size_t c = 0; c < 3; ++c) {
    if (!repeated && c != row % 3) continue;
    p.omega(j, c, m) += h;
    p.omega(j, c, last) -= h;
  }
  return p;
}

double logp(const MixtureParams& p, const Cell& cell) { return std::log(cell_probability(p, cell)); }

}  // namespace

TEST_CASE("scores have mean zero") {
  Rng rng(1);
  for (bool repeated : {false, true}) {
    const auto p = random_params(3, 4, repeated, rng);
    Eigen::VectorXd total = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(score_dimension(3, 4, repeated)));
    detail::for_each_cell(4, [&](const Cell& cell) { total += cell_probability(p, cell) * score_at_cell(p, cell, repeated); });
    CHECK(total.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("scores match central differences of the log cell probability") {
  Rng rng(2);
  for (bool repeated : {false, true}) {
    const auto p = random_params(2, 3, repeated, rng);
    const auto d = score_dimension(2, 3, repeated);
    for (const Cell& cell : {Cell{0, 1, 2}, Cell{2, 2, 0}, Cell{1, 0, 1}}) {
      const auto s = score_at_cell(p, cell, repeated);
      for (std::size_t i = 0; i < d; ++i) {
        const double h = 1e-6;
        const double fd = (logp(shifted(p, i, h, repeated), cell) - logp(shifted(p, i, -h, repeated), cell)) / (2 * h);
        REQUIRE(s[static_cast<Eigen::Index>(i)] == Catch::Approx(fd).epsilon(1e-6).margin(1e-8));
      }
    }
  }
}

TEST_CASE("information equals minus the expected Hessian") {
  Rng rng(3);
  const auto p = random_params(2, 2, false, rng);
  const auto info = fisher_information(p, false);
  const std::size_t d = score_dimension(2, 2, false);
  const double h = 1e-4;
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  detail::for_each_cell(2, [&](const Cell& cell) {
    const double pc = cell_probability(p, cell);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) {
        const auto pp = shifted(shifted(p, a, h, false), b, h, false), pm = shifted(shifted(p, a, h, false), b, -h, false);
        const auto mp = shifted(shifted(p, a, -h, false), b, h, false), mm = shifted(shifted(p, a, -h, false), b, -h, false);
        hess(a, b) += pc * (logp(pp, cell) - logp(pm, cell) - logp(mp, cell) + logp(mm, cell)) / (4 * h * h);
      }
  });
  CHECK((info.full + hess).norm() / info.full.norm() < 1e-5);
}

TEST_CASE("exact information agrees with a Monte Carlo average of S S^T") {
  Rng rng(4);
  const auto p = random_params(2, 3, true, rng);
  const auto info = fisher_information(p, true);
  std::vector<Cell> cells;
  std::vector<double> probs;
  detail::for_each_cell(3, [&](const Cell& c) {
    cells.push_back(c);
    probs.push_back(cell_probability(p, c));
  });
  Eigen::MatrixXd mc = Eigen::MatrixXd::Zero(info.full.rows(), info.full.cols());
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto s = score_at_cell(p, cells[rng.categorical(probs)], true);
    mc += s * s.transpose() / draws;
  }
  CHECK((mc - info.full).norm() / info.full.norm() < 0.02);
}

TEST_CASE("Schur complement and efficient scores") {
  Rng rng(5);
  const auto p = random_params(3, 3, false, rng);
  FisherOptions opts;
  opts.with_efficient_scores = true;
  const auto info = fisher_information(p, false, opts);
  const Eigen::MatrixXd direct =
      info.theta_theta - info.theta_omega * info.omega_omega.inverse() * info.theta_omega.transpose();
  CHECK((info.efficient - direct).norm() < 1e-8 * direct.norm());
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(2, 2);
  Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(2, info.omega_omega.cols());
  for (const auto& es : info.efficient_scores) {
    second += es.probability * es.value * es.value.transpose();
    const auto s = score_at_cell(p, es.cell, false);
    cross += es.probability * es.value * s.tail(info.omega_omega.cols()).transpose();
  }
  CHECK((second - info.efficient).norm() < 1e-9 * info.efficient.norm());
  CHECK(cross.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("refining a dyadic partition never loses efficient information") {
  for (const auto& name : preset_names()) {
    const auto model = preset(name);
    for (int p = 1; p <= 4; ++p) {
      const auto report = refinement_monotonicity_check(model, p, p + 1);
      INFO(name << " p=" << p << " min eigenvalue " << report.min_eigenvalue);
      CHECK(report.passed);
    }
  }
}

TEST_CASE("identical components have singular efficient information") {
  const auto model = repeated_model("flat", {0.4, 0.6}, {Emission::beta(2, 2), Emission::beta(2, 2)});
  try {
    efficient_variance_prediction(model, 2);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::singular);
  }
}

TEST_CASE("enumeration guard") {
  const auto p = uniform_params(2, dyadic_partition(8));
  try {
    fisher_information(p, false);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::size);
  }
}

TEST_CASE("efficient information settles along the dyadic chain") {
  const auto model = preset("sim3");
  std::vector<Eigen::MatrixXd> chain;
  for (int p = 1; p <= 6; ++p) chain.push_back(efficient_information(model, p, true));
  for (std::size_t i = 1; i + 1 < chain.size(); ++i) {
    CHECK(min_eigenvalue(chain[i + 1] - chain[i]) >= -1e-8);
    if (i >= 1) {
      INFO("p=" << i + 1);
      CHECK((chain[i + 1] - chain[i]).norm() <= (chain[i] - chain[i - 1]).norm() + 1e-12);
    }
  }
}
