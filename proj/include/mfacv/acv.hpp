#pragma once

#include "mfacv/estimators.hpp"
#include "mfacv/kernels.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfacv {

enum class SingularPolicy {
  /// Drop duplicate (a > b) variance entries, solve; pseudo-inverse if the
  /// reduced system is still rank deficient (noisy pilots).
  Deduplicate,
  /// Pseudo-inverse on the full system, duplicates included.
  PseudoInverse,
  /// Drop duplicates and refuse rank-deficient systems.
  Strict,
};

inline std::string to_string(SingularPolicy p) {
  switch (p) {
    case SingularPolicy::Deduplicate: return "deduplicate";
    case SingularPolicy::PseudoInverse: return "pseudo-inverse";
    case SingularPolicy::Strict: return "strict";
  }
  return "?";
}

inline SingularPolicy singular_policy_from_string(const std::string& s) {
  if (s == "deduplicate") return SingularPolicy::Deduplicate;
  if (s == "pseudo-inverse") return SingularPolicy::PseudoInverse;
  if (s == "strict") return SingularPolicy::Strict;
  throw std::invalid_argument("unknown singular policy '" + s + "'");
}

constexpr double kRankTolerance = 1e-10;

struct WeightResult {
  Matrix alpha;
  bool pseudo_inverse = false;
};

/// alpha* = -Cov[Q, Delta] Var[Delta]^-1. Eigenvalues below 1e-10 times the
/// largest are treated as zero; that triggers the pseudo-inverse unless
/// `strict` is set, in which case it is an error.
inline WeightResult optimal_weights(const Matrix& var_delta, const Matrix& cov_q_delta, bool strict = false) {
  if (var_delta.rows() != var_delta.cols()) throw std::invalid_argument("optimal_weights: Var[Delta] must be square");
  if (cov_q_delta.cols() != var_delta.rows()) throw std::invalid_argument("optimal_weights: shape mismatch");
  WeightResult out;
  if (var_delta.size() == 0) {
    out.alpha = Matrix::Zero(cov_q_delta.rows(), 0);
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(var_delta));
  const Vector& lam = eig.eigenvalues();
  const double lmax = lam.cwiseAbs().maxCoeff();
  if (!(lmax > 0.0)) {
    if (strict) throw std::runtime_error("Var[Delta] is zero; the control variates carry no information");
    out.alpha = Matrix::Zero(cov_q_delta.rows(), cov_q_delta.cols());
    out.pseudo_inverse = true;
    return out;
  }
  const double tol = kRankTolerance * lmax;
  const bool deficient = lam.minCoeff() <= tol;
  if (deficient && strict) {
    throw std::runtime_error("Var[Delta] is numerically rank deficient beyond duplicate entries "
                             "(insufficient pilot data?)");
  }
  if (!deficient) {
    Eigen::LDLT<Matrix> ldlt(symmetrize(var_delta));
    out.alpha = -ldlt.solve(cov_q_delta.transpose()).transpose();
    return out;
  }
  Vector inv = Vector::Zero(lam.size());
  for (Index k = 0; k < lam.size(); ++k) {
    if (lam[k] > tol) inv[k] = 1.0 / lam[k];
  }
  const Matrix pinv = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  out.alpha = -cov_q_delta * pinv;
  out.pseudo_inverse = true;
  return out;
}

/// Var[Q + alpha Delta] for arbitrary alpha.
inline Matrix acv_variance(const Matrix& var_delta, const Matrix& cov_q_delta, const Matrix& var_q, const Matrix& alpha) {
  if (alpha.rows() != var_q.rows() || alpha.cols() != var_delta.rows() || cov_q_delta.rows() != var_q.rows() ||
      cov_q_delta.cols() != var_delta.cols()) {
    throw std::invalid_argument("acv_variance: shape mismatch");
  }
  const Matrix cross = cov_q_delta * alpha.transpose();
  return symmetrize(var_q + alpha * var_delta * alpha.transpose() + cross + cross.transpose());
}

/// log|M| of a symmetric matrix; -inf when M is singular or indefinite.
inline double log_det(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::LLT<Matrix> llt(symmetrize(m));
  if (llt.info() == Eigen::Success) {
    const Vector diag = Matrix(llt.matrixL()).diagonal();
    double acc = 0.0;
    for (Index k = 0; k < diag.size(); ++k) {
      if (!(diag[k] > 0.0)) return -std::numeric_limits<double>::infinity();
      acc += 2.0 * std::log(diag[k]);
    }
    return acc;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(m), Eigen::EigenvaluesOnly);
  double acc = 0.0;
  for (Index k = 0; k < eig.eigenvalues().size(); ++k) {
    const double l = eig.eigenvalues()[k];
    if (!(l > 0.0)) return -std::numeric_limits<double>::infinity();
    acc += std::log(l);
  }
  return acc;
}

/// Canonical correlations between Q and Delta, largest first.
inline Vector canonical_correlations(const Matrix& var_q, const Matrix& var_delta, const Matrix& cov_q_delta) {
  if (var_delta.size() == 0) return Vector::Zero(0);
  const Matrix explained = cov_q_delta * var_delta.ldlt().solve(cov_q_delta.transpose());
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(symmetrize(explained), symmetrize(var_q));
  Vector rho2 = ges.eigenvalues().reverse();
  const Index keep = std::min(var_q.rows(), var_delta.rows());
  Vector out(keep);
  for (Index k = 0; k < keep; ++k) out[k] = std::sqrt(std::clamp(rho2[k], 0.0, 1.0));
  return out;
}

struct AcvSolution {
  EstimatorSpec spec;
  std::size_t low_fidelity_models = 0;
  SingularPolicy policy = SingularPolicy::Deduplicate;
  std::vector<std::size_t> statistics;  // distinct positions of the stacked vector
  Matrix alpha;        // L x K L, acting on the full stacked discrepancies
  Matrix variance;     // Var[Q~], L x L
  Matrix baseline;     // Var[Q], L x L
  double log_det = 0.0;           // over the distinct statistics
  double baseline_log_det = 0.0;  // over the distinct statistics
  Vector reduction;    // diag Var[Q] / diag Var[Q~], per stacked position
  bool pseudo_inverse = false;

  Matrix distinct(const Matrix& full) const {
    std::vector<Index> idx(statistics.begin(), statistics.end());
    return full(idx, idx);
  }
};

namespace detail {

inline std::vector<Index> to_index(const std::vector<std::size_t>& v) { return std::vector<Index>(v.begin(), v.end()); }

}  // namespace detail

/// Optimal MOACV weights and estimator variance for an assembled system.
inline AcvSolution solve_acv(const EstimatorSpec& spec, const AssembledSystem& sys,
                             SingularPolicy policy = SingularPolicy::Deduplicate) {
  const Index len = static_cast<Index>(spec.length());
  if (sys.var_q.rows() != len || sys.var_delta.rows() % std::max<Index>(len, 1) != 0) {
    throw std::invalid_argument("solve_acv: system does not match the estimator");
  }
  const std::size_t k = static_cast<std::size_t>(sys.var_delta.rows() / len);
  AcvSolution sol;
  sol.spec = spec;
  sol.low_fidelity_models = k;
  sol.policy = policy;
  sol.statistics = unique_statistics(spec);

  std::vector<std::size_t> rows_q;
  if (policy == SingularPolicy::PseudoInverse) {
    for (Index r = 0; r < len; ++r) rows_q.push_back(static_cast<std::size_t>(r));
  } else {
    rows_q = sol.statistics;
  }
  std::vector<Index> qi = detail::to_index(rows_q);
  std::vector<Index> di;
  for (std::size_t m = 0; m < k; ++m) {
    for (std::size_t r : rows_q) di.push_back(static_cast<Index>(m * static_cast<std::size_t>(len) + r));
  }
  const Matrix vq = sys.var_q(qi, qi);
  const Matrix vd = sys.var_delta(di, di);
  const Matrix cq = sys.cov_q_delta(qi, di);

  const WeightResult w = optimal_weights(vd, cq, policy == SingularPolicy::Strict);
  sol.pseudo_inverse = w.pseudo_inverse;

  // Expand to the full stacked layout: duplicate rows copy their canonical
  // row, duplicate discrepancy columns get zero weight.
  sol.alpha = Matrix::Zero(len, static_cast<Index>(k) * len);
  for (std::size_t a = 0; a < qi.size(); ++a) {
    for (std::size_t b = 0; b < di.size(); ++b) sol.alpha(qi[a], di[b]) = w.alpha(static_cast<Index>(a), static_cast<Index>(b));
  }
  const auto canon = canonical_statistic(spec);
  for (Index r = 0; r < len; ++r) {
    const Index c = static_cast<Index>(canon[static_cast<std::size_t>(r)]);
    if (c != r) sol.alpha.row(r) = sol.alpha.row(c);
  }
  sol.variance = acv_variance(sys.var_delta, sys.cov_q_delta, sys.var_q, sol.alpha);
  sol.baseline = sys.var_q;
  sol.log_det = log_det(sol.distinct(sol.variance));
  sol.baseline_log_det = log_det(sol.distinct(sol.baseline));
  sol.reduction = sol.baseline.diagonal().cwiseQuotient(sol.variance.diagonal());
  return sol;
}

template <class Count>
AcvSolution solve_acv(const EstimatorSpec& spec, const BasicOverlapLedger<Count>& L, const PilotStatistics& pilot,
                      SingularPolicy policy = SingularPolicy::Deduplicate) {
  return solve_acv(spec, assemble(spec, L, pilot), policy);
}

/// Estimates of every model's statistic on its two sets, plus the high
/// fidelity estimate on Z_0.
struct AcvInputs {
  Vector high;
  std::vector<Vector> starred;
  std::vector<Vector> plain;
};

/// Q + alpha Delta with Delta_i = Q_i(Z_i*) - Q_i(Z_i).
inline EstimateVector evaluate_moacv(const AcvSolution& sol, const AcvInputs& in) {
  const Index len = static_cast<Index>(sol.spec.length());
  if (in.high.size() != len || in.starred.size() != sol.low_fidelity_models ||
      in.plain.size() != sol.low_fidelity_models) {
    throw std::invalid_argument("evaluate_moacv: estimates do not match the solution (stale ledger?)");
  }
  Vector delta(static_cast<Index>(sol.low_fidelity_models) * len);
  for (std::size_t m = 0; m < sol.low_fidelity_models; ++m) {
    if (in.starred[m].size() != len || in.plain[m].size() != len) {
      throw std::invalid_argument("evaluate_moacv: low-fidelity estimate has the wrong length");
    }
    delta.segment(static_cast<Index>(m) * len, len) = in.starred[m] - in.plain[m];
  }
  return EstimateVector{sol.spec, in.high + sol.alpha * delta, 0};
}

/// Clamp rule: negative variance estimates become zero. Applies to the
/// diagonal of covariance blocks and to main-effect variances; means and
/// off-diagonal covariances are left alone.
inline EstimateVector sanitize_variance_estimate(EstimateVector est) {
  std::vector<std::size_t> targets = variance_diagonal(est.spec);
  if (uses_sensitivity(est.spec.family)) {
    for (std::size_t u = 0; u < est.spec.index_sets.size(); ++u) targets.push_back(u);
  }
  for (std::size_t t : targets) {
    double& v = est.values[static_cast<Index>(t)];
    if (v < 0.0) {
      v = 0.0;
      ++est.clamped;
    }
  }
  return est;
}

inline Vector variance_reduction(const Vector& mc_variance_diag, const Vector& moacv_variance_diag) {
  if (mc_variance_diag.size() != moacv_variance_diag.size()) {
    throw std::invalid_argument("variance_reduction: length mismatch");
  }
  for (Index k = 0; k < mc_variance_diag.size(); ++k) {
    if (!(mc_variance_diag[k] > 0.0)) throw std::invalid_argument("variance_reduction: MC variance must be positive");
  }
  return mc_variance_diag.cwiseQuotient(moacv_variance_diag);
}

}  // namespace mfacv
