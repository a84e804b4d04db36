#pragma once

// Histogram partitions of [0, 1].
//
// Bins are left-closed and right-open, except the last one which is closed
// at 1. Bin indices are zero-based throughout the library.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "histmix/error.hpp"

namespace histmix {

class Partition {
 public:
  /// Largest supported bin count; bin indices are stored as uint32.
  static constexpr std::size_t max_bins = std::size_t{1} << 31;

  /// Regular partition with `bins` equal-width intervals.
  static Partition regular(std::size_t bins) {
    if (bins == 0) fail(ErrorKind::usage, "a partition needs at least one bin");
    if (bins > max_bins) fail(ErrorKind::size, "partition with " + std::to_string(bins) + " bins exceeds the bin index range");
    Partition part;
    part.regular_bins_ = bins;
    return part;
  }

  /// Partition from explicit breakpoints 0 = t0 < t1 < ... < tM = 1.
  static Partition from_breakpoints(std::vector<double> breakpoints) {
    if (breakpoints.size() < 2) fail(ErrorKind::usage, "need at least two breakpoints");
    if (breakpoints.size() - 1 > max_bins) fail(ErrorKind::size, "too many breakpoints");
    if (breakpoints.front() != 0.0 || breakpoints.back() != 1.0)
      fail(ErrorKind::usage, "breakpoints must start at 0 and end at 1");
    for (std::size_t i = 1; i < breakpoints.size(); ++i) {
      if (!(breakpoints[i] > breakpoints[i - 1]))
        fail(ErrorKind::usage, "breakpoints must be strictly increasing (index " + std::to_string(i) + ")");
    }
    Partition part;
    part.breakpoints_ = std::move(breakpoints);
    return part;
  }

  std::size_t size() const noexcept {
    return regular_bins_ != 0 ? regular_bins_ : breakpoints_.size() - 1;
  }

  bool is_regular() const noexcept { return regular_bins_ != 0; }

  /// i-th breakpoint, i in [0, size()].
  double breakpoint(std::size_t i) const {
    if (regular_bins_ != 0) {
      if (i >= regular_bins_) return 1.0;
      return static_cast<double>(i) / static_cast<double>(regular_bins_);
    }
    return breakpoints_[i];
  }

  double lower(std::size_t m) const { return breakpoint(m); }
  double upper(std::size_t m) const { return breakpoint(m + 1); }
  double length(std::size_t m) const { return upper(m) - lower(m); }

  std::vector<double> breakpoints() const {
    std::vector<double> out(size() + 1);
    for (std::size_t i = 0; i <= size(); ++i) out[i] = breakpoint(i);
    return out;
  }

  /// Zero-based index of the bin containing x.
  std::size_t bin_index(double x) const {
    if (!(x >= 0.0 && x <= 1.0))
      fail(ErrorKind::domain, "point " + std::to_string(x) + " lies outside [0,1]");
    const std::size_t bins = size();
    if (regular_bins_ != 0) {
      auto m = static_cast<std::size_t>(std::floor(x * static_cast<double>(bins)));
      if (m >= bins) m = bins - 1;
      // x*M can round across a breakpoint when M is not a power of two.
      if (m > 0 && x < lower(m)) --m;
      else if (m + 1 < bins && x >= upper(m)) ++m;
      return m;
    }
    // First breakpoint strictly greater than x, among t1..t_{M-1}.
    std::size_t lo = 0, hi = bins - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (x < breakpoints_[mid + 1]) hi = mid;
      else lo = mid + 1;
    }
    return lo;
  }

  friend bool operator==(const Partition& a, const Partition& b) {
    if (a.size() != b.size()) return false;
    if (a.is_regular() && b.is_regular()) return true;
    for (std::size_t i = 0; i <= a.size(); ++i)
      if (a.breakpoint(i) != b.breakpoint(i)) return false;
    return true;
  }

 private:
  Partition() = default;

  std::size_t regular_bins_ = 0;
  std::vector<double> breakpoints_;
};

/// Regular dyadic partition with 2^p bins.
inline Partition dyadic_partition(int p) {
  if (p < 0) fail(ErrorKind::usage, "dyadic exponent must be non-negative");
  if (p > 31) fail(ErrorKind::size, "dyadic exponent " + std::to_string(p) + " overflows the bin index range");
  return Partition::regular(std::size_t{1} << p);
}

/// Merges each run of `factor` consecutive bins into one.
inline Partition coarsen(const Partition& fine, std::size_t factor) {
  if (factor == 0 || fine.size() % factor != 0)
    fail(ErrorKind::usage, "coarsening factor must divide the bin count");
  if (fine.is_regular()) return Partition::regular(fine.size() / factor);
  std::vector<double> bp;
  bp.reserve(fine.size() / factor + 1);
  for (std::size_t i = 0; i <= fine.size(); i += factor) bp.push_back(fine.breakpoint(i));
  return Partition::from_breakpoints(std::move(bp));
}

/// True when every breakpoint of `coarse` is also a breakpoint of `fine`.
inline bool is_refinement_of(const Partition& fine, const Partition& coarse) {
  std::size_t j = 0;
  for (std::size_t i = 0; i <= coarse.size(); ++i) {
    const double t = coarse.breakpoint(i);
    while (j <= fine.size() && fine.breakpoint(j) < t) ++j;
    if (j > fine.size() || fine.breakpoint(j) != t) return false;
  }
  return true;
}

/// Largest dyadic exponent considered for a sample of size n:
/// floor(scale * ln n), with scale 1.5 by default.
inline int max_p_for_n(std::size_t n, double scale = 1.5) {
  if (n == 0) fail(ErrorKind::usage, "sample size must be positive");
  return static_cast<int>(std::floor(scale * std::log(static_cast<double>(n))));
}

/// Smallest exponent p0 with 2^p0 >= k + 2, the reference partition used
/// by the cross-validation criterion.
inline int reference_p(std::size_t k) {
  int p = 0;
  while ((std::size_t{1} << p) < k + 2) ++p;
  return p;
}

}  // namespace histmix
