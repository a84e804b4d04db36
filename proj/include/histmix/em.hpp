#pragma once

// Maximum likelihood for the binned mixture by EM with random restarts, the
// limiting maximizer obtained when every coordinate value sits in its own
// bin, and canonical component ordering.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "histmix/error.hpp"
#include "histmix/model.hpp"
#include "histmix/rng.hpp"

namespace histmix {

struct EmConfig {
  std::size_t restarts = 20;
  std::size_t max_iters = 500;
  double rel_tol = 1e-8;
  std::uint64_t seed = 0;
  bool repeated = false;  // tie the three coordinate emissions of a component
  double floor_eps = 0.0;

  void validate() const {
    if (restarts < 1) fail(ErrorKind::usage, "EM needs at least one restart");
    if (max_iters < 1) fail(ErrorKind::usage, "EM needs at least one iteration");
    if (!(rel_tol > 0.0)) fail(ErrorKind::usage, "EM relative tolerance must be positive");
    if (!(floor_eps >= 0.0)) fail(ErrorKind::usage, "mass floor must be non-negative");
  }
};

/// Outcome of one EM run from a given starting point.
struct EmTrace {
  MixtureParams params;
  double loglik = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> logliks;  // log-likelihood before every M-step, then the final value
};

struct EmResult {
  MixtureParams params;  // canonically ordered
  double loglik = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> restart_logliks;
  std::size_t best_restart = 0;
};

/// Sorts components by ascending weight; ties are broken by the
/// lexicographic order of the bin-mass rows.
inline MixtureParams canonical_order(const MixtureParams& params) {
  const std::size_t k = params.components();
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::ranges::stable_sort(perm, [&](std::size_t a, std::size_t b) {
    if (params.theta[a] != params.theta[b]) return params.theta[a] < params.theta[b];
    for (std::size_t c = 0; c < n_coords; ++c) {
      const auto ra = params.omega.row(a, c);
      const auto rb = params.omega.row(b, c);
      if (!std::ranges::equal(ra, rb)) return std::ranges::lexicographical_compare(ra, rb);
    }
    return false;
  });
  return permute_components(params, perm);
}

namespace detail {

// The likelihood only involves bins that hold at least one coordinate value,
// and every maximizer puts zero mass elsewhere. EM therefore runs on the
// occupied bins of each coordinate group (one pooled group in the repeated
// setting, one group per coordinate otherwise).
class CompactProblem {
 public:
  CompactProblem(const BinnedSample& data, bool repeated)
      : groups_(repeated ? 1 : n_coords), n_(data.size()) {
    std::vector<std::vector<std::uint32_t>> occupied(groups_);
    for (const auto& cc : data.counts)
      for (std::size_t c = 0; c < n_coords; ++c) occupied[group(c)].push_back(cc.cell[c]);
    offsets_.assign(groups_ + 1, 0);
    for (std::size_t g = 0; g < groups_; ++g) {
      auto& bins = occupied[g];
      std::ranges::sort(bins);
      bins.erase(std::unique(bins.begin(), bins.end()), bins.end());
      offsets_[g + 1] = offsets_[g] + bins.size();
    }
    bins_ = std::move(occupied);
    cells_.reserve(data.counts.size());
    for (const auto& cc : data.counts) {
      Local local;
      for (std::size_t c = 0; c < n_coords; ++c) {
        const auto& bins = bins_[group(c)];
        const auto pos = std::ranges::lower_bound(bins, cc.cell[c]) - bins.begin();
        local.slot[c] = static_cast<std::uint32_t>(offsets_[group(c)] + pos);
      }
      local.count = cc.count;
      cells_.push_back(local);
      log_volume_ += cc.count * log_cell_volume(data.partition, cc.cell);
    }
  }

  struct Local {
    std::array<std::uint32_t, n_coords> slot;  // index into the compact mass vector
    double count;
  };

  std::size_t group(std::size_t c) const { return groups_ == 1 ? 0 : c; }
  std::size_t groups() const { return groups_; }
  std::size_t width() const { return offsets_.back(); }
  std::size_t group_begin(std::size_t g) const { return offsets_[g]; }
  std::size_t group_end(std::size_t g) const { return offsets_[g + 1]; }
  const std::vector<std::uint32_t>& bins(std::size_t g) const { return bins_[g]; }
  const std::vector<Local>& cells() const { return cells_; }
  double n() const { return static_cast<double>(n_); }
  double log_volume() const { return log_volume_; }

 private:
  std::size_t groups_;
  std::size_t n_;
  std::vector<std::size_t> offsets_;
  std::vector<std::vector<std::uint32_t>> bins_;
  std::vector<Local> cells_;
  double log_volume_ = 0.0;
};

struct CompactState {
  std::vector<double> theta;  // k
  std::vector<double> mass;   // k x width
};

class EmEngine {
 public:
  EmEngine(const CompactProblem& problem, std::size_t k, double floor_eps)
      : prob_(problem), k_(k), floor_eps_(floor_eps),
        theta_acc_(k), mass_acc_(k * problem.width()), prod_(k), logp_(k) {}

  // Log-likelihood of `state`; when `accumulate` is set, also gathers the
  // expected counts needed by the M-step.
  double e_step(const CompactState& s, bool accumulate) {
    const std::size_t w = prob_.width();
    if (accumulate) {
      std::ranges::fill(theta_acc_, 0.0);
      std::ranges::fill(mass_acc_, 0.0);
    }
    double ll = 0.0;
    for (const auto& cell : prob_.cells()) {
      double p = 0.0;
      for (std::size_t j = 0; j < k_; ++j) {
        const double* row = s.mass.data() + j * w;
        prod_[j] = s.theta[j] * row[cell.slot[0]] * row[cell.slot[1]] * row[cell.slot[2]];
        p += prod_[j];
      }
      if (p > kLinearFloor) {
        ll += cell.count * std::log(p);
        if (accumulate)
          for (std::size_t j = 0; j < k_; ++j) add(j, cell, cell.count * (prod_[j] / p));
        continue;
      }
      // Products may underflow: redo this cell in log space.
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k_; ++j) {
        const double* row = s.mass.data() + j * w;
        logp_[j] = safe_log(s.theta[j]) + safe_log(row[cell.slot[0]]) +
                   safe_log(row[cell.slot[1]]) + safe_log(row[cell.slot[2]]);
        top = std::max(top, logp_[j]);
      }
      if (top == -std::numeric_limits<double>::infinity())
        return -std::numeric_limits<double>::infinity();
      double total = 0.0;
      for (std::size_t j = 0; j < k_; ++j) {
        prod_[j] = std::exp(logp_[j] - top);
        total += prod_[j];
      }
      ll += cell.count * (top + std::log(total));
      if (accumulate)
        for (std::size_t j = 0; j < k_; ++j) add(j, cell, cell.count * (prod_[j] / total));
    }
    return ll - prob_.log_volume();
  }

  // Returns true when some component received no responsibility and was reset.
  bool m_step(CompactState& s) const {
    const std::size_t w = prob_.width();
    bool reset = false;
    for (std::size_t j = 0; j < k_; ++j) {
      s.theta[j] = theta_acc_[j] / prob_.n();
      const bool dead = !(theta_acc_[j] >= std::numeric_limits<double>::min());
      if (dead) {
        reset = true;
        s.theta[j] = 0.0;
      }
      for (std::size_t g = 0; g < prob_.groups(); ++g) {
        const std::size_t b0 = prob_.group_begin(g), b1 = prob_.group_end(g);
        double total = 0.0;
        for (std::size_t b = b0; b < b1; ++b) total += mass_acc_[j * w + b];
        if (dead || !(total > 0.0)) {
          for (std::size_t b = b0; b < b1; ++b) s.mass[j * w + b] = 1.0 / static_cast<double>(b1 - b0);
          continue;
        }
        for (std::size_t b = b0; b < b1; ++b) s.mass[j * w + b] = mass_acc_[j * w + b] / total;
        if (floor_eps_ > 0.0) {
          double floored = 0.0;
          for (std::size_t b = b0; b < b1; ++b) floored += std::max(s.mass[j * w + b], floor_eps_);
          for (std::size_t b = b0; b < b1; ++b)
            s.mass[j * w + b] = std::max(s.mass[j * w + b], floor_eps_) / floored;
        }
      }
    }
    double total = 0.0;
    for (double t : s.theta) total += t;
    for (double& t : s.theta) t /= total;
    return reset;
  }

 private:
  static constexpr double kLinearFloor = 1e-250;

  static double safe_log(double x) {
    return x > 0.0 ? std::log(x) : -std::numeric_limits<double>::infinity();
  }

  void add(std::size_t j, const CompactProblem::Local& cell, double weight) {
    theta_acc_[j] += weight;
    double* row = mass_acc_.data() + j * prob_.width();
    for (std::size_t c = 0; c < n_coords; ++c) row[cell.slot[c]] += weight;
  }

  const CompactProblem& prob_;
  std::size_t k_;
  double floor_eps_;
  std::vector<double> theta_acc_;
  std::vector<double> mass_acc_;
  std::vector<double> prod_;
  std::vector<double> logp_;
};

struct RunOutcome {
  CompactState state;
  double loglik;
  std::size_t iterations;
  bool converged;
  std::vector<double> logliks;
};

inline RunOutcome run_em(const CompactProblem& prob, std::size_t k, CompactState state,
                         const EmConfig& cfg, bool keep_trace) {
  EmEngine engine(prob, k, cfg.floor_eps);
  RunOutcome out{std::move(state), 0.0, 0, false, {}};
  double previous = -std::numeric_limits<double>::infinity();
  bool reset = false;
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    const double ll = engine.e_step(out.state, true);
    if (keep_trace) out.logliks.push_back(ll);
    if (ll == -std::numeric_limits<double>::infinity()) {
      out.loglik = ll;
      return out;
    }
    if (it > 0 && ll - previous <= cfg.rel_tol * std::abs(previous)) {
      out.loglik = ll;
      out.converged = !reset;
      return out;
    }
    reset = engine.m_step(out.state);
    ++out.iterations;
    previous = ll;
  }
  out.loglik = engine.e_step(out.state, false);
  if (keep_trace) out.logliks.push_back(out.loglik);
  return out;
}

inline CompactState random_start(const CompactProblem& prob, std::size_t k, Rng& rng) {
  CompactState s;
  s.theta = rng.dirichlet_flat(k);
  s.mass.assign(k * prob.width(), 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t g = 0; g < prob.groups(); ++g) {
      const std::size_t b0 = prob.group_begin(g);
      const auto draw = rng.dirichlet_flat(prob.group_end(g) - b0);
      std::ranges::copy(draw, s.mass.begin() + static_cast<std::ptrdiff_t>(j * prob.width() + b0));
    }
  }
  return s;
}

inline CompactState compress(const CompactProblem& prob, const MixtureParams& params) {
  const std::size_t k = params.components();
  CompactState s;
  s.theta = params.theta;
  s.mass.assign(k * prob.width(), 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t c = 0; c < n_coords; ++c) {
      const std::size_t g = prob.group(c);
      if (prob.groups() == 1 && c > 0) continue;
      const auto& bins = prob.bins(g);
      for (std::size_t b = 0; b < bins.size(); ++b)
        s.mass[j * prob.width() + prob.group_begin(g) + b] = params.omega(j, c, bins[b]);
    }
  }
  return s;
}

inline MixtureParams expand(const CompactProblem& prob, const CompactState& s,
                            const Partition& part, bool repeated) {
  const std::size_t k = s.theta.size();
  MixtureParams params;
  params.theta = s.theta;
  params.omega = BinMasses(k, part.size());
  params.partition = part;
  params.repeated = repeated;
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t c = 0; c < n_coords; ++c) {
      const std::size_t g = prob.group(c);
      const auto& bins = prob.bins(g);
      for (std::size_t b = 0; b < bins.size(); ++b)
        params.omega(j, c, bins[b]) = s.mass[j * prob.width() + prob.group_begin(g) + b];
    }
  }
  return params;
}

inline void check_fit_inputs(const BinnedSample& data, std::size_t k, const EmConfig& cfg) {
  cfg.validate();
  if (k < 1) fail(ErrorKind::usage, "need at least one component");
  if (data.size() == 0)
    fail(ErrorKind::usage, "cannot fit " + std::to_string(k * (n_coords * (data.partition.size() - 1) + 1)) +
                               " parameters to an empty sample");
}

}  // namespace detail

/// Runs EM from `init` until the relative log-likelihood gain drops below
/// cfg.rel_tol or cfg.max_iters M-steps have been taken. Components keep
/// their labels; no reordering is applied.
inline EmTrace em_iterate(const BinnedSample& data, const MixtureParams& init, const EmConfig& cfg) {
  detail::check_fit_inputs(data, init.components(), cfg);
  if (!(init.partition == data.partition))
    fail(ErrorKind::usage, "initial parameters and data use different partitions");
  if (cfg.repeated)
    for (std::size_t j = 0; j < init.components(); ++j)
      if (!std::ranges::equal(init.omega.row(j, 1), init.omega.row(j, 0)) ||
          !std::ranges::equal(init.omega.row(j, 2), init.omega.row(j, 0)))
        fail(ErrorKind::usage, "repeated EM needs tied initial bin masses");
  const detail::CompactProblem prob(data, cfg.repeated);
  auto outcome = detail::run_em(prob, init.components(), detail::compress(prob, init), cfg, true);
  EmTrace trace;
  trace.params = detail::expand(prob, outcome.state, data.partition, cfg.repeated);
  trace.loglik = outcome.loglik;
  trace.iterations = outcome.iterations;
  trace.converged = outcome.converged;
  trace.logliks = std::move(outcome.logliks);
  return trace;
}

/// Best of cfg.restarts EM runs from random starts. Restart r draws its start
/// from the substream derive_seed(cfg.seed, {r}): weights from a flat
/// Dirichlet, bin masses from a flat Dirichlet over the occupied bins.
inline EmResult em_fit(const BinnedSample& data, std::size_t k, const EmConfig& cfg) {
  detail::check_fit_inputs(data, k, cfg);
  const detail::CompactProblem prob(data, cfg.repeated);

  EmResult result;
  result.restart_logliks.resize(cfg.restarts);
  std::optional<detail::RunOutcome> best;
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    Rng rng(derive_seed(cfg.seed, {r}));
    auto outcome = detail::run_em(prob, k, detail::random_start(prob, k, rng), cfg, false);
    result.restart_logliks[r] = outcome.loglik;
    if (!std::isfinite(outcome.loglik)) continue;
    if (!best || outcome.loglik > best->loglik) {
      result.best_restart = r;
      best = std::move(outcome);
    }
  }
  if (!best) fail(ErrorKind::estimation, "every EM restart reached a zero-likelihood point");

  result.params = canonical_order(detail::expand(prob, best->state, data.partition, cfg.repeated));
  result.loglik = log_likelihood(result.params, data);
  result.iterations = best->iterations;
  result.converged = best->converged;
  return result;
}

/// Limit of the weight estimate as the partition is refined with the sample
/// fixed: with n = kq + r, k - r weights q/n followed by r weights (q+1)/n.
inline std::vector<double> limiting_mle(std::size_t n, std::size_t k) {
  if (k < 1 || n < k) fail(ErrorKind::domain, "limiting weights need n >= k >= 1");
  const std::size_t q = n / k;
  const std::size_t r = n - k * q;
  std::vector<double> out;
  out.reserve(k);
  for (std::size_t j = 0; j < k - r; ++j) out.push_back(static_cast<double>(q) / static_cast<double>(n));
  for (std::size_t j = 0; j < r; ++j) out.push_back(static_cast<double>(q + 1) / static_cast<double>(n));
  return out;
}

/// True when no two coordinate values of the sample (across all three
/// coordinates) share a bin.
inline bool all_coordinate_bins_distinct(const BinnedSample& data) {
  std::vector<std::uint32_t> used;
  used.reserve(n_coords * data.size());
  for (const auto& cell : data.cells) used.insert(used.end(), cell.begin(), cell.end());
  std::ranges::sort(used);
  return std::adjacent_find(used.begin(), used.end()) == used.end();
}

/// A maximizer of the likelihood when every coordinate value has its own
/// bin: observations are split, in sample order, into k groups of sizes
/// given by limiting_mle; group j gets weight #A_j / n and mass 1/#A_j on
/// each bin its members occupy.
inline MixtureParams saturated_maximizer(const BinnedSample& data, std::size_t k) {
  const std::size_t n = data.size();
  if (n < k) fail(ErrorKind::usage, "saturated maximizer needs n >= k");
  if (!all_coordinate_bins_distinct(data))
    fail(ErrorKind::usage, "saturated maximizer needs every coordinate value in its own bin");
  const auto weights = limiting_mle(n, k);
  MixtureParams params;
  params.theta = weights;
  params.omega = BinMasses(k, data.partition.size());
  params.partition = data.partition;
  std::size_t i = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const auto size = static_cast<std::size_t>(std::llround(weights[j] * static_cast<double>(n)));
    for (std::size_t s = 0; s < size; ++s, ++i)
      for (std::size_t c = 0; c < n_coords; ++c)
        params.omega(j, c, data.cells[i][c]) = 1.0 / static_cast<double>(size);
  }
  return params;
}

/// Log-likelihood of saturated_maximizer without the bin-width term:
/// sum_s N_s log(N_s^-2) - n log n over the group sizes N_s.
inline double saturated_loglik_core(std::size_t n, std::size_t k) {
  double total = -static_cast<double>(n) * std::log(static_cast<double>(n));
  for (double w : limiting_mle(n, k)) {
    const double size = std::round(w * static_cast<double>(n));
    total += size * std::log(1.0 / (size * size));
  }
  return total;
}

}  // namespace histmix
