#pragma once

// Partition selection by block cross-validation.
//
// A block scheme pairs training index sets B_b with test sets B_{-b}. The
// criterion compares the candidate-partition estimate on each B_b with a
// reference-partition estimate on the matching B_{-b}, using the squared
// label-invariant distance, and averages over blocks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "histmix/em.hpp"
#include "histmix/error.hpp"
#include "histmix/model.hpp"
#include "histmix/partition.hpp"
#include "histmix/rng.hpp"

namespace histmix {

enum class SchemeKind { D1, D2, D3, V1, V2, V3, custom };

inline const char* to_string(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::D1: return "D1";
    case SchemeKind::D2: return "D2";
    case SchemeKind::D3: return "D3";
    case SchemeKind::V1: return "V1";
    case SchemeKind::V2: return "V2";
    case SchemeKind::V3: return "V3";
    case SchemeKind::custom: return "custom";
  }
  return "?";
}

inline SchemeKind scheme_from_string(const std::string& name) {
  for (auto kind : {SchemeKind::D1, SchemeKind::D2, SchemeKind::D3, SchemeKind::V1, SchemeKind::V2,
                    SchemeKind::V3})
    if (name == to_string(kind)) return kind;
  fail(ErrorKind::config, "unknown block scheme '" + name + "' (expected D1..D3 or V1..V3)");
}

inline const std::vector<SchemeKind>& all_schemes() {
  static const std::vector<SchemeKind> kinds{SchemeKind::D1, SchemeKind::D2, SchemeKind::D3,
                                             SchemeKind::V1, SchemeKind::V2, SchemeKind::V3};
  return kinds;
}

inline bool is_disjoint_scheme(SchemeKind kind) {
  return kind == SchemeKind::D1 || kind == SchemeKind::D2 || kind == SchemeKind::D3;
}

struct SchemeSizes {
  std::size_t a_n = 0;  // training block size
  std::size_t b_n = 0;  // number of blocks
};

namespace detail {
// Guards floor/ceil against n^(1/3) style values landing a hair off an integer.
inline std::size_t floor_sz(double x) { return static_cast<std::size_t>(std::max(0.0, std::floor(x + 1e-9))); }
inline std::size_t ceil_sz(double x) { return static_cast<std::size_t>(std::max(0.0, std::ceil(x - 1e-9))); }
}  // namespace detail

/// Block sizes of the six fixed schemes. D-schemes use disjoint train and
/// test blocks of equal size; V-schemes use V-fold complements. The D1
/// divisor (20) is configurable; logarithms are natural.
inline SchemeSizes scheme_sizes(std::size_t n, SchemeKind kind, double d1_divisor = 20.0) {
  const double nd = static_cast<double>(n);
  const double cube_root = std::cbrt(nd);
  const double two_thirds = std::cbrt(nd * nd);
  SchemeSizes s;
  auto div = [](std::size_t num, std::size_t den) { return den == 0 ? std::size_t{0} : num / den; };
  switch (kind) {
    case SchemeKind::D1:
      s.b_n = detail::ceil_sz(two_thirds * std::log(nd) / d1_divisor);
      s.a_n = div(n, 2 * s.b_n);
      break;
    case SchemeKind::D2:
      s.b_n = detail::ceil_sz(cube_root);
      s.a_n = div(n, 2 * s.b_n);
      break;
    case SchemeKind::D3:
      s.a_n = n / 10;
      s.b_n = div(n, 2 * s.a_n);
      break;
    case SchemeKind::V1:
      s.a_n = detail::floor_sz(cube_root);
      s.b_n = div(n, s.a_n);
      break;
    case SchemeKind::V2:
      s.a_n = detail::floor_sz(two_thirds / 2.0);
      s.b_n = div(n, s.a_n);
      break;
    case SchemeKind::V3:
      s.a_n = n / 10;
      s.b_n = div(n, s.a_n);
      break;
    case SchemeKind::custom: fail(ErrorKind::usage, "custom schemes carry explicit sizes");
  }
  if (s.a_n == 0 || s.b_n == 0)
    fail(ErrorKind::usage, std::string("sample of size ") + std::to_string(n) + " is too small for scheme " +
                               to_string(kind));
  return s;
}

struct Block {
  std::vector<std::size_t> train;  // B_b
  std::vector<std::size_t> test;   // B_{-b}
};

struct BlockScheme {
  SchemeKind kind = SchemeKind::custom;
  bool disjoint = true;
  std::size_t n = 0;
  std::size_t a_n = 0;
  std::size_t b_n = 0;
  std::uint64_t seed = 0;
  std::vector<Block> blocks;
  std::vector<std::size_t> unused;  // indices never used as a training block
};

/// Shuffles 0..n-1 with the seed, then slices consecutive blocks.
/// Disjoint layout: block b trains on slice 2b and tests on slice 2b+1.
/// V-fold layout: block b trains on slice b and tests on all other indices.
inline BlockScheme make_custom_blocks(std::size_t n, std::size_t a_n, std::size_t b_n, bool disjoint,
                                      std::uint64_t seed) {
  if (a_n == 0 || b_n == 0) fail(ErrorKind::usage, "block sizes must be positive");
  const std::size_t used = (disjoint ? 2 : 1) * a_n * b_n;
  if (used > n) fail(ErrorKind::usage, "block layout needs more indices than the sample has");
  BlockScheme scheme;
  scheme.disjoint = disjoint;
  scheme.n = n;
  scheme.a_n = a_n;
  scheme.b_n = b_n;
  scheme.seed = seed;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);
  auto slice = [&](std::size_t s) {
    std::vector<std::size_t> out(perm.begin() + static_cast<std::ptrdiff_t>(s * a_n),
                                 perm.begin() + static_cast<std::ptrdiff_t>((s + 1) * a_n));
    std::ranges::sort(out);
    return out;
  };
  for (std::size_t b = 0; b < b_n; ++b) {
    Block block;
    if (disjoint) {
      block.train = slice(2 * b);
      block.test = slice(2 * b + 1);
    } else {
      block.train = slice(b);
      block.test.reserve(n - a_n);
      std::size_t t = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (t < block.train.size() && block.train[t] == i) ++t;
        else block.test.push_back(i);
      }
    }
    scheme.blocks.push_back(std::move(block));
  }
  scheme.unused.assign(perm.begin() + static_cast<std::ptrdiff_t>(used), perm.end());
  std::ranges::sort(scheme.unused);
  return scheme;
}

inline BlockScheme make_blocks(std::size_t n, SchemeKind kind, std::uint64_t seed, double d1_divisor = 20.0) {
  const auto sizes = scheme_sizes(n, kind, d1_divisor);
  auto scheme = make_custom_blocks(n, sizes.a_n, sizes.b_n, is_disjoint_scheme(kind), seed);
  scheme.kind = kind;
  return scheme;
}

/// Maps (subsample, partition, k, seed) to a weight vector.
using Estimator =
    std::function<std::vector<double>(std::span<const Point>, const Partition&, std::size_t, std::uint64_t)>;

/// The EM maximum likelihood estimator; cfg.seed is replaced by the seed
/// handed in by the caller.
inline Estimator em_estimator(EmConfig cfg) {
  return [cfg](std::span<const Point> sample, const Partition& part, std::size_t k, std::uint64_t seed) {
    EmConfig local = cfg;
    local.seed = seed;
    return em_fit(bin_sample(sample, part), k, local).params.theta;
  };
}

inline std::vector<Point> subsample(std::span<const Point> data, std::span<const std::size_t> indices) {
  std::vector<Point> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(data[i]);
  return out;
}

namespace detail {

enum class Arm : std::uint64_t { train = 0, reference = 1, test = 2 };

inline std::uint64_t arm_seed(std::uint64_t seed, std::size_t block, Arm arm, std::size_t bins) {
  return derive_seed(seed, {block, static_cast<std::uint64_t>(arm), bins});
}

inline std::vector<double> estimate_on(const Estimator& estimator, std::span<const Point> data,
                                       std::span<const std::size_t> indices, const Partition& part,
                                       std::size_t k, std::uint64_t seed, std::size_t block) {
  const auto sub = subsample(data, indices);
  try {
    auto theta = estimator(sub, part, k, seed);
    if (theta.size() != k) fail(ErrorKind::usage, "estimator returned a vector of the wrong length");
    return theta;
  } catch (const Error& e) {
    throw Error(e.kind(), "block " + std::to_string(block) + ": " + e.what());
  }
}

}  // namespace detail

/// (1/b_n) sum_b || est_candidate(B_b) - est_reference(B_{-b}) ||^2, with the
/// distance taken up to relabelling.
inline double cv_criterion(std::span<const Point> data, const Partition& candidate, const Partition& reference,
                           const BlockScheme& scheme, const Estimator& estimator, std::size_t k,
                           std::uint64_t seed) {
  if (scheme.blocks.empty()) fail(ErrorKind::usage, "block scheme has no blocks");
  double total = 0.0;
  for (std::size_t b = 0; b < scheme.blocks.size(); ++b) {
    const auto& block = scheme.blocks[b];
    const auto train = detail::estimate_on(estimator, data, block.train, candidate, k,
                                           detail::arm_seed(seed, b, detail::Arm::train, candidate.size()), b);
    const auto ref = detail::estimate_on(estimator, data, block.test, reference, k,
                                         detail::arm_seed(seed, b, detail::Arm::reference, reference.size()), b);
    total += tk_squared(train, ref);
  }
  return total / static_cast<double>(scheme.blocks.size());
}

/// (1/(2 b_n)) sum_b || est(B_b) - est(B_{-b}) ||^2 with both arms on the
/// candidate partition.
inline double naive_criterion(std::span<const Point> data, const Partition& candidate, const BlockScheme& scheme,
                              const Estimator& estimator, std::size_t k, std::uint64_t seed) {
  if (scheme.blocks.empty()) fail(ErrorKind::usage, "block scheme has no blocks");
  double total = 0.0;
  for (std::size_t b = 0; b < scheme.blocks.size(); ++b) {
    const auto& block = scheme.blocks[b];
    const auto train = detail::estimate_on(estimator, data, block.train, candidate, k,
                                           detail::arm_seed(seed, b, detail::Arm::train, candidate.size()), b);
    const auto test = detail::estimate_on(estimator, data, block.test, candidate, k,
                                          detail::arm_seed(seed, b, detail::Arm::test, candidate.size()), b);
    total += tk_squared(train, test);
  }
  return total / (2.0 * static_cast<double>(scheme.blocks.size()));
}

struct CandidateScore {
  std::size_t bins = 0;
  double criterion = std::numeric_limits<double>::infinity();
  double naive = std::numeric_limits<double>::quiet_NaN();  // only when requested
  bool failed = false;
  std::string error;
};

struct BlockAudit {
  std::vector<double> reference;                 // reference estimate on B_{-b}
  std::vector<std::vector<double>> candidates;   // candidate estimates on B_b (empty if failed)
};

struct SelectionReport {
  std::vector<Partition> partitions;
  std::vector<CandidateScore> candidates;
  std::size_t chosen = 0;
  Partition reference = Partition::regular(1);
  BlockScheme scheme;
  std::uint64_t seed = 0;  // estimator seed
  std::vector<BlockAudit> blocks;

  const Partition& chosen_partition() const { return partitions[chosen]; }
};

struct SelectionOptions {
  bool with_naive = false;
};

/// Scores every candidate with cv_criterion and returns the minimizer; ties go
/// to the candidate with fewer bins, then to the earlier one. A candidate
/// whose estimator fails on some block is marked failed and skipped.
inline SelectionReport select_partition(std::span<const Point> data, const std::vector<Partition>& candidates,
                                        const Partition& reference, const BlockScheme& scheme,
                                        const Estimator& estimator, std::size_t k, std::uint64_t seed,
                                        const SelectionOptions& opts = {}) {
  if (candidates.empty()) fail(ErrorKind::usage, "no candidate partitions");
  if (scheme.blocks.empty()) fail(ErrorKind::usage, "block scheme has no blocks");
  SelectionReport report;
  report.partitions = candidates;
  report.reference = reference;
  report.scheme = scheme;
  report.seed = seed;
  report.candidates.resize(candidates.size());
  report.blocks.resize(scheme.blocks.size());

  for (std::size_t b = 0; b < scheme.blocks.size(); ++b)
    report.blocks[b].reference =
        detail::estimate_on(estimator, data, scheme.blocks[b].test, reference, k,
                            detail::arm_seed(seed, b, detail::Arm::reference, reference.size()), b);

  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto& score = report.candidates[i];
    score.bins = candidates[i].size();
    try {
      double total = 0.0;
      double naive_total = 0.0;
      std::vector<std::vector<double>> estimates;
      for (std::size_t b = 0; b < scheme.blocks.size(); ++b) {
        const auto& block = scheme.blocks[b];
        auto train = detail::estimate_on(estimator, data, block.train, candidates[i], k,
                                         detail::arm_seed(seed, b, detail::Arm::train, score.bins), b);
        total += tk_squared(train, report.blocks[b].reference);
        if (opts.with_naive) {
          const auto test = detail::estimate_on(estimator, data, block.test, candidates[i], k,
                                                detail::arm_seed(seed, b, detail::Arm::test, score.bins), b);
          naive_total += tk_squared(train, test);
        }
        estimates.push_back(std::move(train));
      }
      const double blocks = static_cast<double>(scheme.blocks.size());
      score.criterion = total / blocks;
      if (opts.with_naive) score.naive = naive_total / (2.0 * blocks);
      for (std::size_t b = 0; b < estimates.size(); ++b)
        report.blocks[b].candidates.push_back(std::move(estimates[b]));
    } catch (const Error& e) {
      score.failed = true;
      score.error = e.what();
      for (auto& audit : report.blocks) audit.candidates.emplace_back();
    }
  }

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& s = report.candidates[i];
    if (s.failed) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& cur = report.candidates[*best];
    if (s.criterion < cur.criterion || (s.criterion == cur.criterion && s.bins < cur.bins)) best = i;
  }
  if (!best) fail(ErrorKind::selection, "every candidate partition failed");
  report.chosen = *best;
  return report;
}

inline nlohmann::json to_json(const BlockScheme& scheme) {
  return {{"kind", to_string(scheme.kind)}, {"disjoint", scheme.disjoint}, {"n", scheme.n},
          {"a_n", scheme.a_n},              {"b_n", scheme.b_n},           {"seed", scheme.seed},
          {"unused", scheme.unused.size()}};
}

inline nlohmann::json to_json(const SelectionReport& report) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : report.candidates) {
    nlohmann::json entry{{"bins", c.bins}, {"failed", c.failed}};
    entry["criterion"] = c.failed ? nlohmann::json(nullptr) : nlohmann::json(c.criterion);
    if (!std::isnan(c.naive)) entry["naive_criterion"] = c.naive;
    if (c.failed) entry["error"] = c.error;
    cands.push_back(entry);
  }
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : report.blocks)
    blocks.push_back({{"reference", b.reference}, {"candidates", b.candidates}});
  const auto chosen_bins = report.candidates[report.chosen].bins;
  int chosen_p = -1;
  for (int p = 0; p < 32; ++p)
    if ((std::size_t{1} << p) == chosen_bins) chosen_p = p;
  return {{"candidates", cands},
          {"chosen_index", report.chosen},
          {"chosen_bins", chosen_bins},
          {"chosen_p", chosen_p},
          {"reference_bins", report.reference.size()},
          {"scheme", to_json(report.scheme)},
          {"seed", report.seed},
          {"blocks", blocks}};
}

/// Right-hand side of the oracle inequality:
/// (1+eps)/(1-eps) * inf_risk + 2 delta / (1-eps).
inline double oracle_bound(double inf_risk, double eps, double delta) {
  return (1.0 + eps) / (1.0 - eps) * inf_risk + 2.0 * delta / (1.0 - eps);
}

/// Probability with which the oracle inequality holds:
/// 1 - 2 m_n exp(-2 b_n (eps * inf_risk + delta)^2).
inline double oracle_probability(std::size_t candidates, std::size_t b_n, double inf_risk, double eps,
                                 double delta) {
  const double t = eps * inf_risk + delta;
  return 1.0 - 2.0 * static_cast<double>(candidates) * std::exp(-2.0 * static_cast<double>(b_n) * t * t);
}

struct OracleGapStats {
  std::vector<double> gaps;  // R(selected) - inf R, one per replication
  double mean_gap = 0.0;
  double mean_selected_risk = 0.0;
  double inf_risk = 0.0;
  std::size_t best_candidate = 0;
  double bound = 0.0;               // oracle_bound at (eps, delta)
  double violation_fraction = 0.0;  // share of replications with R(selected) > bound
};

/// Compares the risk of the selected candidate with the best achievable one,
/// given an independently estimated risk for every candidate.
inline OracleGapStats oracle_gap(std::span<const std::size_t> chosen, std::span<const double> candidate_risks,
                                 double eps, double delta) {
  if (candidate_risks.empty()) fail(ErrorKind::usage, "no candidate risks");
  if (chosen.empty()) fail(ErrorKind::usage, "no replications");
  OracleGapStats stats;
  const auto it = std::ranges::min_element(candidate_risks);
  stats.inf_risk = *it;
  stats.best_candidate = static_cast<std::size_t>(it - candidate_risks.begin());
  stats.bound = oracle_bound(stats.inf_risk, eps, delta);
  std::size_t violations = 0;
  for (auto c : chosen) {
    if (c >= candidate_risks.size()) fail(ErrorKind::usage, "selected candidate outside the risk table");
    const double r = candidate_risks[c];
    stats.gaps.push_back(r - stats.inf_risk);
    stats.mean_selected_risk += r;
    if (r > stats.bound) ++violations;
  }
  const double reps = static_cast<double>(chosen.size());
  stats.mean_selected_risk /= reps;
  stats.mean_gap = stats.mean_selected_risk - stats.inf_risk;
  stats.violation_fraction = static_cast<double>(violations) / reps;
  return stats;
}

}  // namespace histmix
