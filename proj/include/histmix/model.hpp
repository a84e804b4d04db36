#pragma once

// The binned mixture model: k populations, three conditionally independent
// coordinates, each emission replaced by a step function on a partition.
// A dataset reduces to the triple of bin indices of every observation and
// the model to a mixture of products of multinomials.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "histmix/error.hpp"
#include "histmix/partition.hpp"

namespace histmix {

inline constexpr std::size_t n_coords = 3;

using Point = std::array<double, n_coords>;
using Cell = std::array<std::uint32_t, n_coords>;

/// k x 3 x M array of bin masses, row-major in (component, coordinate, bin).
class BinMasses {
 public:
  BinMasses() = default;
  BinMasses(std::size_t k, std::size_t bins, double fill = 0.0)
      : k_(k), bins_(bins), data_(k * n_coords * bins, fill) {}

  std::size_t components() const noexcept { return k_; }
  std::size_t bins() const noexcept { return bins_; }

  double& operator()(std::size_t j, std::size_t c, std::size_t m) {
    return data_[(j * n_coords + c) * bins_ + m];
  }
  double operator()(std::size_t j, std::size_t c, std::size_t m) const {
    return data_[(j * n_coords + c) * bins_ + m];
  }

  std::span<double> row(std::size_t j, std::size_t c) {
    return {data_.data() + (j * n_coords + c) * bins_, bins_};
  }
  std::span<const double> row(std::size_t j, std::size_t c) const {
    return {data_.data() + (j * n_coords + c) * bins_, bins_};
  }

  std::span<const double> values() const { return data_; }

  friend bool operator==(const BinMasses&, const BinMasses&) = default;

 private:
  std::size_t k_ = 0;
  std::size_t bins_ = 0;
  std::vector<double> data_;
};

/// Weights and bin masses of a binned mixture. In the repeated setting the
/// three coordinate rows of every component are equal; they are still
/// stored expanded.
struct MixtureParams {
  std::vector<double> theta;
  BinMasses omega;
  Partition partition = Partition::regular(1);
  bool repeated = false;

  std::size_t components() const noexcept { return theta.size(); }
  std::size_t bins() const noexcept { return partition.size(); }

  /// Product of the bin masses of component j over the coordinates of `cell`.
  double component_mass(std::size_t j, const Cell& cell) const {
    return omega(j, 0, cell[0]) * omega(j, 1, cell[1]) * omega(j, 2, cell[2]);
  }

  void validate(double tol = 1e-9) const {
    const std::size_t k = components();
    if (k == 0) fail(ErrorKind::usage, "mixture needs at least one component");
    if (omega.components() != k || omega.bins() != bins())
      fail(ErrorKind::usage, "bin mass array shape does not match theta / partition");
    double total = 0.0;
    for (double t : theta) {
      if (!(t >= 0.0)) fail(ErrorKind::domain, "negative or NaN weight");
      total += t;
    }
    if (std::abs(total - 1.0) > tol) fail(ErrorKind::domain, "weights do not sum to one");
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t c = 0; c < n_coords; ++c) {
        double row_total = 0.0;
        for (double w : omega.row(j, c)) {
          if (!(w >= 0.0)) fail(ErrorKind::domain, "negative or NaN bin mass");
          row_total += w;
        }
        if (std::abs(row_total - 1.0) > tol)
          fail(ErrorKind::domain, "bin masses of component " + std::to_string(j) + ", coordinate " +
                                      std::to_string(c) + " do not sum to one");
        if (repeated && c > 0 && !std::ranges::equal(omega.row(j, c), omega.row(j, 0)))
          fail(ErrorKind::domain, "repeated parameters differ across coordinates");
      }
    }
  }
};

/// Uniform weights and uniform bin masses.
inline MixtureParams uniform_params(std::size_t k, const Partition& part, bool repeated = false) {
  MixtureParams params;
  params.theta.assign(k, 1.0 / static_cast<double>(k));
  params.omega = BinMasses(k, part.size(), 1.0 / static_cast<double>(part.size()));
  params.partition = part;
  params.repeated = repeated;
  return params;
}

struct CellCount {
  Cell cell;
  std::uint32_t count;
};

/// Observations reduced to their bin triples, plus the occupied-cell counts.
struct BinnedSample {
  std::vector<Cell> cells;
  std::vector<CellCount> counts;  // sorted lexicographically by cell
  Partition partition = Partition::regular(1);

  std::size_t size() const noexcept { return cells.size(); }
};

inline BinnedSample bin_cells(std::vector<Cell> cells, const Partition& part) {
  for (std::size_t i = 0; i < cells.size(); ++i)
    for (auto m : cells[i])
      if (m >= part.size())
        fail(ErrorKind::data, "cell index out of range at observation " + std::to_string(i));
  BinnedSample out;
  out.partition = part;
  std::vector<Cell> sorted = cells;
  std::ranges::sort(sorted);
  for (const auto& cell : sorted) {
    if (!out.counts.empty() && out.counts.back().cell == cell) ++out.counts.back().count;
    else out.counts.push_back({cell, 1});
  }
  out.cells = std::move(cells);
  return out;
}

inline BinnedSample bin_sample(std::span<const Point> raw, const Partition& part) {
  std::vector<Cell> cells(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    for (std::size_t c = 0; c < n_coords; ++c) {
      const double x = raw[i][c];
      if (!(x >= 0.0 && x <= 1.0))
        fail(ErrorKind::domain, "observation " + std::to_string(i) + ", coordinate " +
                                    std::to_string(c) + " lies outside [0,1]");
      cells[i][c] = static_cast<std::uint32_t>(part.bin_index(x));
    }
  }
  return bin_cells(std::move(cells), part);
}

/// Probability of a cell: sum_j theta_j prod_c omega[j,c,m_c].
inline double cell_probability(const MixtureParams& params, const Cell& cell) {
  double p = 0.0;
  for (std::size_t j = 0; j < params.components(); ++j)
    p += params.theta[j] * params.component_mass(j, cell);
  return p;
}

/// Log of the bin-width factor prod_c |I_{m_c}|.
inline double log_cell_volume(const Partition& part, const Cell& cell) {
  return std::log(part.length(cell[0])) + std::log(part.length(cell[1])) +
         std::log(part.length(cell[2]));
}

/// sum_i log of the step-function density at X_i. Returns -inf when an
/// occupied cell has zero probability.
inline double log_likelihood(const MixtureParams& params, const BinnedSample& data) {
  if (!(params.partition == data.partition))
    fail(ErrorKind::usage, "data and parameters use different partitions");
  double total = 0.0;
  for (const auto& [cell, count] : data.counts) {
    const double p = cell_probability(params, cell);
    if (!(p > 0.0)) return -std::numeric_limits<double>::infinity();
    total += count * (std::log(p) - log_cell_volume(data.partition, cell));
  }
  return total;
}

/// Component weights sorted ascending.
inline std::vector<double> ordered(std::span<const double> theta) {
  std::vector<double> out(theta.begin(), theta.end());
  std::ranges::sort(out);
  return out;
}

/// Distance between two weight vectors up to relabelling of the components.
/// Sorting both vectors attains the minimum over all permutations.
inline double tk_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::usage, "weight vectors have different lengths");
  const auto sa = ordered(a);
  const auto sb = ordered(b);
  double s = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) s += (sa[i] - sb[i]) * (sa[i] - sb[i]);
  return std::sqrt(s);
}

/// Which coordinates of the ordered weight vector enter risk computations:
/// all k of them, or only the k-1 free ones (the last is implied by the
/// simplex constraint).
enum class RiskMetric { full, free };

inline const char* to_string(RiskMetric metric) {
  return metric == RiskMetric::full ? "full" : "free";
}

/// Ordered weights restricted to the coordinates selected by `metric`.
inline std::vector<double> risk_coordinates(std::span<const double> theta, RiskMetric metric) {
  auto out = ordered(theta);
  if (metric == RiskMetric::free && !out.empty()) out.pop_back();
  return out;
}

inline double tk_squared(std::span<const double> a, std::span<const double> b,
                         RiskMetric metric = RiskMetric::full) {
  if (a.size() != b.size()) fail(ErrorKind::usage, "weight vectors have different lengths");
  const auto sa = risk_coordinates(a, metric);
  const auto sb = risk_coordinates(b, metric);
  double s = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) s += (sa[i] - sb[i]) * (sa[i] - sb[i]);
  return s;
}

/// Relabels components: output component j is input component perm[j].
inline MixtureParams permute_components(const MixtureParams& params,
                                        std::span<const std::size_t> perm) {
  const std::size_t k = params.components();
  if (perm.size() != k) fail(ErrorKind::usage, "permutation length mismatch");
  MixtureParams out = params;
  for (std::size_t j = 0; j < k; ++j) {
    out.theta[j] = params.theta[perm[j]];
    for (std::size_t c = 0; c < n_coords; ++c)
      std::ranges::copy(params.omega.row(perm[j], c), out.omega.row(j, c).begin());
  }
  return out;
}

}  // namespace histmix
