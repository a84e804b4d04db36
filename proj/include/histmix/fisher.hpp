#pragma once

// Exact score functions and Fisher information of the binned model, obtained
// by enumerating all M^3 cells.
//
// Free coordinates: theta_1..theta_{k-1} (theta_k = 1 - sum), then for every
// component j and coordinate c the masses omega_{j,c,1..M-1} (the last bin
// takes the remainder). In the repeated setting one mass vector per component
// is shared by the three coordinates and its score is the sum over c.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "histmix/error.hpp"
#include "histmix/model.hpp"
#include "histmix/partition.hpp"
#include "histmix/scenarios.hpp"

namespace histmix {

/// Largest number of cells enumerated by the exact computations.
inline constexpr double max_enumerated_cells = 1e7;

inline std::size_t omega_dimension(std::size_t k, std::size_t bins, bool repeated) {
  return (repeated ? 1 : n_coords) * k * (bins - 1);
}

inline std::size_t score_dimension(std::size_t k, std::size_t bins, bool repeated) {
  return (k - 1) + omega_dimension(k, bins, repeated);
}

namespace detail {

// Writes the score of `cell` into `out` given its probability p > 0.
inline void fill_score(const MixtureParams& params, const Cell& cell, double p, bool repeated,
                       Eigen::Ref<Eigen::VectorXd> out) {
  const std::size_t k = params.components();
  const std::size_t bins = params.bins();
  const std::size_t last = bins - 1;
  out.setZero();
  const double last_prod = params.component_mass(k - 1, cell);
  for (std::size_t j = 0; j + 1 < k; ++j)
    out[static_cast<Eigen::Index>(j)] = (params.component_mass(j, cell) - last_prod) / p;
  if (bins < 2) return;
  for (std::size_t j = 0; j < k; ++j) {
    const double w0 = params.omega(j, 0, cell[0]);
    const double w1 = params.omega(j, 1, cell[1]);
    const double w2 = params.omega(j, 2, cell[2]);
    const double others[n_coords] = {w1 * w2, w0 * w2, w0 * w1};
    for (std::size_t c = 0; c < n_coords; ++c) {
      const double value = params.theta[j] * others[c] / p;
      if (value == 0.0) continue;
      const std::size_t base =
          (k - 1) + (repeated ? j : j * n_coords + c) * last;
      if (cell[c] < last) {
        out[static_cast<Eigen::Index>(base + cell[c])] += value;
      } else {
        for (std::size_t m = 0; m < last; ++m) out[static_cast<Eigen::Index>(base + m)] -= value;
      }
    }
  }
}

inline void check_enumerable(std::size_t bins) {
  const double cells = std::pow(static_cast<double>(bins), 3.0);
  if (cells > max_enumerated_cells)
    fail(ErrorKind::size, std::to_string(bins) + "^3 cells exceed the enumeration limit of 1e7");
}

template <class Fn>
void for_each_cell(std::size_t bins, Fn&& fn) {
  Cell cell{};
  for (cell[0] = 0; cell[0] < bins; ++cell[0])
    for (cell[1] = 0; cell[1] < bins; ++cell[1])
      for (cell[2] = 0; cell[2] < bins; ++cell[2]) fn(cell);
}

}  // namespace detail

/// Score vector of log p(cell) in the free coordinates.
inline Eigen::VectorXd score_at_cell(const MixtureParams& params, const Cell& cell, bool repeated) {
  const double p = cell_probability(params, cell);
  if (!(p > 0.0)) fail(ErrorKind::domain, "score requested at a zero-probability cell");
  Eigen::VectorXd out(static_cast<Eigen::Index>(score_dimension(params.components(), params.bins(), repeated)));
  detail::fill_score(params, cell, p, repeated, out);
  return out;
}

inline Eigen::VectorXd score_at_cell(const MixtureParams& params, const Cell& cell) {
  return score_at_cell(params, cell, params.repeated);
}

struct EfficientScore {
  Cell cell;
  double probability;
  Eigen::VectorXd value;  // length k-1
};

struct InfoMatrices {
  bool repeated = false;
  Eigen::MatrixXd full;           // J_M over all free coordinates
  Eigen::MatrixXd theta_theta;    // (k-1) x (k-1)
  Eigen::MatrixXd theta_omega;    // (k-1) x d_omega
  Eigen::MatrixXd omega_omega;    // d_omega x d_omega
  Eigen::MatrixXd efficient;      // Schur complement, (k-1) x (k-1)
  Eigen::MatrixXd projection;     // J_theta_omega J_omega_omega^+, maps omega-scores to their theta-part
  Eigen::Index omega_rank = 0;
  std::vector<EfficientScore> efficient_scores;  // filled on request
};

struct FisherOptions {
  bool with_efficient_scores = false;
  double pinv_rel_tol = 1e-10;  // relative eigenvalue cut-off on the equilibrated omega block
};

/// Exact J_M = sum over cells of p * S S^T, its blocks, and the efficient
/// information J_tt - J_to J_oo^+ J_ot. Zero-probability cells are skipped.
///
/// The omega block is equilibrated by its diagonal before the pseudo-inverse,
/// which leaves the Schur complement unchanged when the block is invertible
/// and keeps the cut-off meaningful when bin masses differ by many orders of
/// magnitude.
inline InfoMatrices fisher_information(const MixtureParams& params, bool repeated,
                                       const FisherOptions& opts = {}) {
  params.validate();
  const std::size_t k = params.components();
  const std::size_t bins = params.bins();
  if (k < 2) fail(ErrorKind::usage, "information about weights needs k >= 2");
  detail::check_enumerable(bins);
  const auto d = static_cast<Eigen::Index>(score_dimension(k, bins, repeated));
  const auto dt = static_cast<Eigen::Index>(k - 1);
  const Eigen::Index dw = d - dt;

  InfoMatrices info;
  info.repeated = repeated;
  info.full = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd s(d);
  detail::for_each_cell(bins, [&](const Cell& cell) {
    const double p = cell_probability(params, cell);
    if (!(p > 0.0)) return;
    detail::fill_score(params, cell, p, repeated, s);
    info.full.selfadjointView<Eigen::Lower>().rankUpdate(s, p);
  });
  info.full = info.full.selfadjointView<Eigen::Lower>();

  info.theta_theta = info.full.topLeftCorner(dt, dt);
  info.theta_omega = info.full.topRightCorner(dt, dw);
  info.omega_omega = info.full.bottomRightCorner(dw, dw);

  Eigen::VectorXd scale = Eigen::VectorXd::Zero(dw);
  for (Eigen::Index i = 0; i < dw; ++i) {
    const double diag = info.omega_omega(i, i);
    if (diag > 0.0) scale[i] = 1.0 / std::sqrt(diag);
  }
  const Eigen::MatrixXd balanced = scale.asDiagonal() * info.omega_omega * scale.asDiagonal();
  Eigen::MatrixXd balanced_pinv = Eigen::MatrixXd::Zero(dw, dw);
  if (dw > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(balanced);
    const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
    const Eigen::MatrixXd& v = eig.eigenvectors();
    for (Eigen::Index i = 0; i < dw; ++i) {
      const double lambda = eig.eigenvalues()[i];
      if (lambda > opts.pinv_rel_tol * top) {
        balanced_pinv.noalias() += (1.0 / lambda) * v.col(i) * v.col(i).transpose();
        ++info.omega_rank;
      }
    }
  }
  const Eigen::MatrixXd scaled_cross = info.theta_omega * scale.asDiagonal();
  info.projection = scaled_cross * balanced_pinv * scale.asDiagonal();
  info.efficient = info.theta_theta - scaled_cross * balanced_pinv * scaled_cross.transpose();
  info.efficient = 0.5 * (info.efficient + info.efficient.transpose()).eval();

  if (opts.with_efficient_scores) {
    detail::for_each_cell(bins, [&](const Cell& cell) {
      const double p = cell_probability(params, cell);
      if (!(p > 0.0)) return;
      detail::fill_score(params, cell, p, repeated, s);
      info.efficient_scores.push_back(
          {cell, p, s.head(dt) - info.projection * s.tail(dw)});
    });
  }
  return info;
}

inline InfoMatrices fisher_information(const MixtureParams& params) {
  return fisher_information(params, params.repeated);
}

inline double min_eigenvalue(const Eigen::MatrixXd& sym) {
  if (sym.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

/// Efficient information at (theta*, omega*_M) on the dyadic partition 2^p.
inline Eigen::MatrixXd efficient_information(const TrueModel& model, int p, bool repeated) {
  return fisher_information(true_params(model, dyadic_partition(p)), repeated).efficient;
}

struct MonotonicityReport {
  int p_coarse = 0;
  int p_fine = 0;
  Eigen::MatrixXd coarse;
  Eigen::MatrixXd fine;
  double min_eigenvalue = 0.0;  // of fine - coarse
  bool passed = false;
};

/// Compares efficient information on nested dyadic partitions; refining can
/// only add information, so fine - coarse must be positive semi-definite.
inline MonotonicityReport refinement_monotonicity_check(const TrueModel& model, int p_coarse, int p_fine,
                                                        bool repeated, double tol = 1e-8) {
  if (p_coarse > p_fine) fail(ErrorKind::usage, "coarse exponent exceeds fine exponent");
  MonotonicityReport report;
  report.p_coarse = p_coarse;
  report.p_fine = p_fine;
  report.coarse = efficient_information(model, p_coarse, repeated);
  report.fine = p_fine == p_coarse ? report.coarse : efficient_information(model, p_fine, repeated);
  report.min_eigenvalue = min_eigenvalue(report.fine - report.coarse);
  report.passed = report.min_eigenvalue >= -tol;
  return report;
}

inline MonotonicityReport refinement_monotonicity_check(const TrueModel& model, int p_coarse, int p_fine) {
  return refinement_monotonicity_check(model, p_coarse, p_fine, model.repeated);
}

/// Inverse of an efficient information matrix; the predicted asymptotic
/// covariance of sqrt(n) (theta_hat - theta*). Rejects singular or
/// ill-conditioned input (condition number >= max_condition).
inline Eigen::MatrixXd invert_efficient_information(const Eigen::MatrixXd& efficient,
                                                    double max_condition = 1e12) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(efficient);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(hi > 0.0) || !(lo > 0.0) || hi / lo >= max_condition)
    fail(ErrorKind::singular, "efficient information is singular or ill-conditioned (eigenvalues " +
                                  std::to_string(lo) + " .. " + std::to_string(hi) + ")");
  const Eigen::MatrixXd& v = eig.eigenvectors();
  return v * eig.eigenvalues().cwiseInverse().asDiagonal() * v.transpose();
}

inline Eigen::MatrixXd efficient_variance_prediction(const TrueModel& model, int p) {
  return invert_efficient_information(efficient_information(model, p, model.repeated));
}

}  // namespace histmix
