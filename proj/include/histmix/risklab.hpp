#pragma once

// Monte Carlo experiments: quadratic risk of the EM estimator per partition,
// its bias/variance split, cross-validated partition choice against the
// oracle, and the efficiency check against the exact efficient information.
//
// Replication r always draws its data from derive_seed(seed, {r, 0}) and fits
// on M bins with EM seed derive_seed(seed, {r, 1, M}), so every experiment
// sharing a seed sees the same datasets and the same fits. Replications run
// on a worker pool and are aggregated in index order. EM always runs in the
// model's own (repeated or not) parametrization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "histmix/em.hpp"
#include "histmix/error.hpp"
#include "histmix/fisher.hpp"
#include "histmix/model.hpp"
#include "histmix/modelsel.hpp"
#include "histmix/parallel.hpp"
#include "histmix/partition.hpp"
#include "histmix/scenarios.hpp"

namespace histmix {

struct LabOptions {
  RiskMetric metric = RiskMetric::free;
  unsigned workers = 1;
  bool keep_estimates = false;
  double max_failure_rate = 0.05;
};

struct RiskEstimate {
  std::size_t bins = 0;
  double risk = 0.0;
  double bias2 = 0.0;
  double variance = 0.0;
  double se = 0.0;  // standard error of `risk`
  std::size_t reps = 0;
  std::size_t failures = 0;
  std::vector<std::vector<double>> estimates;  // ordered estimates, when kept

  double sqrt_risk() const { return std::sqrt(risk); }
  /// Delta-method standard error of sqrt(risk).
  double sqrt_se() const { return risk > 0.0 ? se / (2.0 * std::sqrt(risk)) : 0.0; }
};

inline std::uint64_t data_seed(std::uint64_t seed, std::size_t rep) { return derive_seed(seed, {rep, 0}); }
inline std::uint64_t fit_seed(std::uint64_t seed, std::size_t rep, std::size_t bins) {
  return derive_seed(seed, {rep, 1, bins});
}

/// Risk, squared bias and variance of a set of estimates around theta*,
/// computed on ordered weights restricted by `metric`. Risk equals bias2 plus
/// variance up to round-off.
inline RiskEstimate summarize_estimates(const std::vector<std::vector<double>>& estimates,
                                        std::span<const double> theta_star, RiskMetric metric) {
  RiskEstimate est;
  est.reps = estimates.size();
  if (estimates.empty()) return est;
  const auto target = risk_coordinates(theta_star, metric);
  const std::size_t dim = target.size();
  const double reps = static_cast<double>(estimates.size());
  std::vector<std::vector<double>> coords;
  coords.reserve(estimates.size());
  std::vector<double> mean(dim, 0.0);
  for (const auto& e : estimates) {
    coords.push_back(risk_coordinates(e, metric));
    for (std::size_t i = 0; i < dim; ++i) mean[i] += coords.back()[i];
  }
  for (double& m : mean) m /= reps;
  std::vector<double> sq(estimates.size(), 0.0);
  for (std::size_t r = 0; r < coords.size(); ++r) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double diff = coords[r][i] - target[i];
      sq[r] += diff * diff;
      const double dev = coords[r][i] - mean[i];
      est.variance += dev * dev;
    }
  }
  est.variance /= reps;
  for (std::size_t i = 0; i < dim; ++i) est.bias2 += (mean[i] - target[i]) * (mean[i] - target[i]);
  est.risk = std::accumulate(sq.begin(), sq.end(), 0.0) / reps;
  if (estimates.size() > 1) {
    double ss = 0.0;
    for (double s : sq) ss += (s - est.risk) * (s - est.risk);
    est.se = std::sqrt(ss / (reps - 1.0) / reps);
  }
  return est;
}

/// Risk estimates for several partitions. Every replication fits all
/// partitions on the same dataset.
inline std::vector<RiskEstimate> estimate_risks(const TrueModel& model, const std::vector<Partition>& parts,
                                                std::size_t n, std::size_t k, const EmConfig& cfg,
                                                std::size_t reps, std::uint64_t seed, const LabOptions& opts = {}) {
  if (reps < 2) fail(ErrorKind::usage, "risk estimation needs at least two replications");
  if (parts.empty()) fail(ErrorKind::usage, "no partitions to evaluate");
  if (k != model.components()) fail(ErrorKind::usage, "k differs from the number of true components");
  // estimates[r][i]: ordered weights of replication r on partition i; empty on failure.
  std::vector<std::vector<std::vector<double>>> estimates(reps, std::vector<std::vector<double>>(parts.size()));
  parallel_for(reps, opts.workers, [&](std::size_t r) {
    const auto obs = sample(model, n, data_seed(seed, r));
    for (std::size_t i = 0; i < parts.size(); ++i) {
      EmConfig local = cfg;
      local.repeated = model.repeated;
      local.seed = fit_seed(seed, r, parts[i].size());
      try {
        estimates[r][i] = ordered(em_fit(bin_sample(obs.points, parts[i]), k, local).params.theta);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::estimation) throw;
      }
    }
  });
  std::vector<RiskEstimate> out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::vector<std::vector<double>> ok;
    for (std::size_t r = 0; r < reps; ++r)
      if (!estimates[r][i].empty()) ok.push_back(estimates[r][i]);
    const std::size_t failures = reps - ok.size();
    if (static_cast<double>(failures) > opts.max_failure_rate * static_cast<double>(reps))
      fail(ErrorKind::estimation, std::to_string(failures) + " of " + std::to_string(reps) +
                                      " replications failed on " + std::to_string(parts[i].size()) + " bins");
    auto est = summarize_estimates(ok, model.theta, opts.metric);
    est.bins = parts[i].size();
    est.failures = failures;
    if (opts.keep_estimates) est.estimates = std::move(ok);
    out.push_back(std::move(est));
  }
  return out;
}

inline RiskEstimate estimate_risk(const TrueModel& model, const Partition& part, std::size_t n, std::size_t k,
                                  const EmConfig& cfg, std::size_t reps, std::uint64_t seed,
                                  const LabOptions& opts = {}) {
  return estimate_risks(model, {part}, n, k, cfg, reps, seed, opts).front();
}

struct RiskCurvePoint {
  int p = 0;
  RiskEstimate estimate;
};

/// One risk estimate per dyadic exponent in [p_min, p_max].
inline std::vector<RiskCurvePoint> risk_curve(const TrueModel& model, std::size_t n, std::size_t k, int p_min,
                                              int p_max, const EmConfig& cfg, std::size_t reps,
                                              std::uint64_t seed, const LabOptions& opts = {}) {
  if (p_min < 0 || p_max < p_min) fail(ErrorKind::usage, "invalid exponent range");
  std::vector<Partition> parts;
  for (int p = p_min; p <= p_max; ++p) parts.push_back(dyadic_partition(p));
  auto risks = estimate_risks(model, parts, n, k, cfg, reps, seed, opts);
  std::vector<RiskCurvePoint> curve;
  for (int p = p_min; p <= p_max; ++p) curve.push_back({p, std::move(risks[static_cast<std::size_t>(p - p_min)])});
  return curve;
}

struct ComparisonRow {
  std::string label;       // "min_risk", "risk_p0", or a scheme name
  double sqrt_risk = 0.0;
  double se = 0.0;         // standard error of sqrt_risk
  int p = -1;              // exponent for the oracle rows
  std::vector<int> chosen_p;  // per replication, scheme rows only
};

struct ComparisonTable {
  std::string scenario;
  std::size_t n = 0;
  std::size_t reps = 0;
  std::vector<RiskCurvePoint> per_p;  // risk of the full-sample fit at every candidate
  std::vector<ComparisonRow> rows;
};

struct ComparisonOptions {
  int p_min = 1;
  int p_max = -1;  // defaults to max_p_for_n(n)
  double d1_divisor = 20.0;
};

inline std::uint64_t block_seed(std::uint64_t seed, std::size_t rep, std::size_t scheme) {
  return derive_seed(seed, {rep, 2, scheme});
}
inline std::uint64_t selection_seed(std::uint64_t seed, std::size_t rep, std::size_t scheme) {
  return derive_seed(seed, {rep, 3, scheme});
}

/// For every replication: fit the full sample on each candidate, let each
/// scheme choose a candidate by cv_criterion (reference 2^p0 with
/// 2^p0 >= k+2), and record the squared error of the chosen fit. Rows give
/// sqrt of the mean squared error per scheme, plus the oracle rows
/// sqrt(min_p R_n(2^p)) and sqrt(R_n(2^p0)).
inline ComparisonTable criterion_comparison(const TrueModel& model, std::size_t n, std::size_t k,
                                            const std::vector<SchemeKind>& schemes, const EmConfig& cfg,
                                            std::size_t reps, std::uint64_t seed, const LabOptions& opts = {},
                                            const ComparisonOptions& copts = {}) {
  if (reps < 2) fail(ErrorKind::usage, "criterion comparison needs at least two replications");
  if (k != model.components()) fail(ErrorKind::usage, "k differs from the number of true components");
  const int p_max = copts.p_max >= 0 ? copts.p_max : max_p_for_n(n);
  const int p0 = reference_p(k);
  if (p_max < copts.p_min) fail(ErrorKind::usage, "empty candidate range");
  std::vector<Partition> candidates;
  for (int p = copts.p_min; p <= p_max; ++p) candidates.push_back(dyadic_partition(p));
  const Partition reference = dyadic_partition(p0);
  EmConfig base = cfg;
  base.repeated = model.repeated;
  const auto estimator = em_estimator(base);

  struct RepResult {
    std::vector<std::vector<double>> fits;  // per candidate, ordered
    std::vector<double> ref_fit;
    std::vector<std::size_t> chosen;        // per scheme, index into candidates
  };
  std::vector<RepResult> results(reps);
  parallel_for(reps, opts.workers, [&](std::size_t r) {
    auto& res = results[r];
    const auto obs = sample(model, n, data_seed(seed, r));
    for (const auto& part : candidates) {
      EmConfig local = base;
      local.seed = fit_seed(seed, r, part.size());
      res.fits.push_back(ordered(em_fit(bin_sample(obs.points, part), k, local).params.theta));
    }
    EmConfig local = base;
    local.seed = fit_seed(seed, r, reference.size());
    res.ref_fit = ordered(em_fit(bin_sample(obs.points, reference), k, local).params.theta);
    for (std::size_t s = 0; s < schemes.size(); ++s) {
      const auto blocks = make_blocks(n, schemes[s], block_seed(seed, r, s), copts.d1_divisor);
      const auto report = select_partition(obs.points, candidates, reference, blocks, estimator, k,
                                           selection_seed(seed, r, s));
      res.chosen.push_back(report.chosen);
    }
  });

  ComparisonTable table;
  table.scenario = model.name;
  table.n = n;
  table.reps = reps;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    std::vector<std::vector<double>> fits;
    for (const auto& res : results) fits.push_back(res.fits[i]);
    auto est = summarize_estimates(fits, model.theta, opts.metric);
    est.bins = candidates[i].size();
    table.per_p.push_back({copts.p_min + static_cast<int>(i), std::move(est)});
  }
  const auto best = std::ranges::min_element(table.per_p, {}, [](const auto& pt) { return pt.estimate.risk; });
  table.rows.push_back({"min_risk", best->estimate.sqrt_risk(), best->estimate.sqrt_se(), best->p, {}});
  {
    std::vector<std::vector<double>> fits;
    for (const auto& res : results) fits.push_back(res.ref_fit);
    const auto est = summarize_estimates(fits, model.theta, opts.metric);
    table.rows.push_back({"risk_p0", est.sqrt_risk(), est.sqrt_se(), p0, {}});
  }
  for (std::size_t s = 0; s < schemes.size(); ++s) {
    std::vector<std::vector<double>> fits;
    ComparisonRow row;
    row.label = to_string(schemes[s]);
    for (const auto& res : results) {
      fits.push_back(res.fits[res.chosen[s]]);
      row.chosen_p.push_back(copts.p_min + static_cast<int>(res.chosen[s]));
    }
    const auto est = summarize_estimates(fits, model.theta, opts.metric);
    row.sqrt_risk = est.sqrt_risk();
    row.se = est.sqrt_se();
    table.rows.push_back(std::move(row));
  }
  return table;
}

struct OracleExperiment {
  SchemeSizes sizes;
  std::vector<RiskCurvePoint> training_risks;  // R_{a_n}(2^p) per candidate
  std::vector<std::size_t> chosen;             // selected candidate per replication
  OracleGapStats stats;
};

/// Runs cv selection on `reps` samples of size n and compares the training-
/// size risk R_{a_n} of each selected partition with the best candidate.
/// R_{a_n} is estimated separately from `risk_reps` samples of size a_n.
inline OracleExperiment oracle_experiment(const TrueModel& model, std::size_t n, std::size_t k, SchemeKind scheme,
                                          const EmConfig& cfg, std::size_t reps, std::size_t risk_reps,
                                          std::uint64_t seed, double eps, double delta,
                                          const LabOptions& opts = {}, const ComparisonOptions& copts = {}) {
  OracleExperiment out;
  out.sizes = scheme_sizes(n, scheme, copts.d1_divisor);
  const int p_max = copts.p_max >= 0 ? copts.p_max : max_p_for_n(n);
  out.training_risks = risk_curve(model, out.sizes.a_n, k, copts.p_min, p_max, cfg, risk_reps,
                                  derive_seed(seed, {0xa11}), opts);
  std::vector<Partition> candidates;
  for (int p = copts.p_min; p <= p_max; ++p) candidates.push_back(dyadic_partition(p));
  const Partition reference = dyadic_partition(reference_p(k));
  EmConfig base = cfg;
  base.repeated = model.repeated;
  const auto estimator = em_estimator(base);
  out.chosen.resize(reps);
  parallel_for(reps, opts.workers, [&](std::size_t r) {
    const auto obs = sample(model, n, data_seed(seed, r));
    const auto blocks = make_blocks(n, scheme, block_seed(seed, r, 0), copts.d1_divisor);
    out.chosen[r] =
        select_partition(obs.points, candidates, reference, blocks, estimator, k, selection_seed(seed, r, 0)).chosen;
  });
  std::vector<double> risks;
  for (const auto& pt : out.training_risks) risks.push_back(pt.estimate.risk);
  out.stats = oracle_gap(out.chosen, risks, eps, delta);
  return out;
}

struct EfficiencyRow {
  std::size_t n = 0;
  Eigen::MatrixXd covariance;  // of sqrt(n) (ordered theta_hat - ordered theta*), free coordinates
  Eigen::VectorXd mean_shift;  // mean of sqrt(n) (ordered theta_hat - ordered theta*)
  double discrepancy = 0.0;    // ||covariance - predicted||_F / ||predicted||_F
  std::size_t failures = 0;
};

struct EfficiencyReport {
  int p = 0;
  Eigen::MatrixXd predicted;  // inverse efficient information
  std::vector<EfficiencyRow> rows;
};

/// Compares the Monte Carlo covariance of the EM estimate on 2^p bins with
/// the inverse efficient information of the binned model at the truth.
inline EfficiencyReport efficiency_experiment(const TrueModel& model, int p, const std::vector<std::size_t>& n_list,
                                              std::size_t k, const EmConfig& cfg, std::size_t reps,
                                              std::uint64_t seed, const LabOptions& opts = {}) {
  if (reps < 2) fail(ErrorKind::usage, "efficiency experiment needs at least two replications");
  EfficiencyReport report;
  report.p = p;
  // The estimates are compared on sorted weights, so the prediction is
  // computed with the components relabelled in ascending weight order.
  TrueModel sorted = model;
  std::vector<std::size_t> perm(model.components());
  std::iota(perm.begin(), perm.end(), 0);
  std::ranges::stable_sort(perm, [&](std::size_t a, std::size_t b) { return model.theta[a] < model.theta[b]; });
  for (std::size_t j = 0; j < perm.size(); ++j) {
    sorted.theta[j] = model.theta[perm[j]];
    sorted.emissions[j] = model.emissions[perm[j]];
  }
  report.predicted = efficient_variance_prediction(sorted, p);
  const Partition part = dyadic_partition(p);
  const auto dim = static_cast<Eigen::Index>(k - 1);
  const auto target = risk_coordinates(model.theta, RiskMetric::free);
  for (std::size_t ni = 0; ni < n_list.size(); ++ni) {
    const std::size_t n = n_list[ni];
    const auto sub_seed = derive_seed(seed, {ni, n});
    auto risks = estimate_risks(model, {part}, n, k, cfg, reps, sub_seed,
                                {RiskMetric::free, opts.workers, true, opts.max_failure_rate});
    const auto& ests = risks.front().estimates;
    const double root_n = std::sqrt(static_cast<double>(n));
    Eigen::MatrixXd z(static_cast<Eigen::Index>(ests.size()), dim);
    for (std::size_t r = 0; r < ests.size(); ++r)
      for (Eigen::Index i = 0; i < dim; ++i)
        z(static_cast<Eigen::Index>(r), i) = root_n * (ests[r][static_cast<std::size_t>(i)] - target[static_cast<std::size_t>(i)]);
    EfficiencyRow row;
    row.n = n;
    row.failures = risks.front().failures;
    row.mean_shift = z.colwise().mean().transpose();
    const Eigen::MatrixXd centered = z.rowwise() - row.mean_shift.transpose();
    row.covariance = centered.transpose() * centered / static_cast<double>(z.rows() - 1);
    row.discrepancy = (row.covariance - report.predicted).norm() / report.predicted.norm();
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace histmix
