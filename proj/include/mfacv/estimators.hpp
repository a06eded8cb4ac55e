#pragma once

#include "mfacv/sampling.hpp"
#include "mfacv/tensor.hpp"

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfacv {

enum class Family { Mean, Variance, MeanVariance, MainEffect, MainEffectVariance };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::Mean: return "M";
    case Family::Variance: return "V";
    case Family::MeanVariance: return "MV";
    case Family::MainEffect: return "ME";
    case Family::MainEffectVariance: return "MEV";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  if (s == "M" || s == "mean") return Family::Mean;
  if (s == "V" || s == "variance") return Family::Variance;
  if (s == "MV" || s == "mean-variance") return Family::MeanVariance;
  if (s == "ME" || s == "main-effect") return Family::MainEffect;
  if (s == "MEV" || s == "main-effect-variance") return Family::MainEffectVariance;
  throw std::invalid_argument("unknown estimator family '" + s + "'");
}

inline bool uses_sensitivity(Family f) { return f == Family::MainEffect || f == Family::MainEffectVariance; }
inline bool uses_variance(Family f) {
  return f == Family::Variance || f == Family::MeanVariance || f == Family::MainEffectVariance;
}

/// Which statistic family is estimated, over how many outputs, and (for the
/// sensitivity families) which input subsets.
struct EstimatorSpec {
  Family family = Family::Mean;
  std::size_t outputs = 1;
  std::vector<IndexSet> index_sets;

  void validate() const {
    if (outputs == 0) throw std::invalid_argument("estimator needs at least one output");
    if (uses_sensitivity(family)) {
      if (outputs != 1) throw std::invalid_argument("main-effect families require scalar outputs");
      if (index_sets.empty()) throw std::invalid_argument("main-effect families need at least one index subset");
      for (const auto& u : index_sets) {
        if (u.empty()) throw std::invalid_argument("index subset must be nonempty");
      }
    }
  }

  /// Length of the stacked estimate vector.
  std::size_t length() const {
    const std::size_t d = outputs;
    switch (family) {
      case Family::Mean: return d;
      case Family::Variance: return d * d;
      case Family::MeanVariance: return d + d * d;
      case Family::MainEffect: return index_sets.size();
      case Family::MainEffectVariance: return index_sets.size() + 1;
    }
    return 0;
  }

  /// Number of evaluations each sample costs (base point plus one per companion).
  std::size_t evaluations_per_sample() const { return uses_sensitivity(family) ? 1 + index_sets.size() : 1; }
};

// Offset of the flattened variance block inside the stacked vector.
inline std::size_t variance_offset(const EstimatorSpec& spec) {
  switch (spec.family) {
    case Family::Variance: return 0;
    case Family::MeanVariance: return spec.outputs;
    case Family::MainEffectVariance: return spec.index_sets.size();
    default: throw std::invalid_argument("estimator has no variance block");
  }
}

/// Stacked-vector positions with distinct meaning: variance entries (a,b)
/// with a > b duplicate (b,a) and are left out.
inline std::vector<std::size_t> unique_statistics(const EstimatorSpec& spec) {
  std::vector<std::size_t> keep;
  const std::size_t n = spec.length();
  if (spec.family != Family::Variance && spec.family != Family::MeanVariance) {
    for (std::size_t k = 0; k < n; ++k) keep.push_back(k);
    return keep;
  }
  const std::size_t d = spec.outputs;
  const std::size_t off = variance_offset(spec);
  for (std::size_t k = 0; k < off; ++k) keep.push_back(k);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) keep.push_back(off + a * d + b);
  }
  return keep;
}

/// Index of the canonical (a <= b) copy of every stacked-vector position.
inline std::vector<std::size_t> canonical_statistic(const EstimatorSpec& spec) {
  std::vector<std::size_t> out(spec.length());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = k;
  if (spec.family == Family::Variance || spec.family == Family::MeanVariance) {
    const std::size_t d = spec.outputs;
    const std::size_t off = variance_offset(spec);
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < a; ++b) out[off + a * d + b] = off + b * d + a;
    }
  }
  return out;
}

/// Positions holding variances of a single output (the diagonal of the
/// covariance block); these are the entries subject to the clamp rule.
inline std::vector<std::size_t> variance_diagonal(const EstimatorSpec& spec) {
  std::vector<std::size_t> out;
  if (spec.family == Family::MainEffectVariance) {
    out.push_back(spec.index_sets.size());
  } else if (spec.family == Family::Variance || spec.family == Family::MeanVariance) {
    const std::size_t off = variance_offset(spec);
    for (std::size_t a = 0; a < spec.outputs; ++a) out.push_back(off + a * spec.outputs + a);
  }
  return out;
}

inline std::vector<std::string> statistic_labels(const EstimatorSpec& spec) {
  std::vector<std::string> out;
  auto index_name = [](const IndexSet& u) {
    std::string s = "{";
    for (std::size_t k = 0; k < u.size(); ++k) s += (k ? "," : "") + std::to_string(u[k]);
    return s + "}";
  };
  if (spec.family == Family::Mean || spec.family == Family::MeanVariance) {
    for (std::size_t d = 0; d < spec.outputs; ++d) out.push_back("mean[" + std::to_string(d) + "]");
  }
  if (uses_sensitivity(spec.family)) {
    for (const auto& u : spec.index_sets) out.push_back("main_effect" + index_name(u));
  }
  if (spec.family == Family::Variance || spec.family == Family::MeanVariance) {
    for (std::size_t a = 0; a < spec.outputs; ++a) {
      for (std::size_t b = 0; b < spec.outputs; ++b) {
        out.push_back("cov[" + std::to_string(a) + "," + std::to_string(b) + "]");
      }
    }
  }
  if (spec.family == Family::MainEffectVariance) out.push_back("variance");
  return out;
}

struct EstimateVector {
  EstimatorSpec spec;
  Vector values;
  // Number of variance entries raised to zero by the clamp rule.
  std::size_t clamped = 0;
};

// ---------------------------------------------------------------------------
// Raw Monte Carlo estimators
// ---------------------------------------------------------------------------

inline Vector mc_mean(const Matrix& evals) {
  if (evals.rows() == 0) throw std::invalid_argument("mc_mean: need at least one sample");
  return evals.colwise().mean().transpose();
}

/// Unbiased sample covariance, flattened row-major.
inline Vector mc_variance(const Matrix& evals) {
  const Index n = evals.rows();
  if (n < 2) throw std::invalid_argument("mc_variance: need at least two samples");
  const Vector mean = mc_mean(evals);
  const Matrix centered = evals.rowwise() - mean.transpose();
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  return flatten(symmetrize(cov));
}

inline double mc_main_effect(const Vector& evals_z, const Vector& evals_yu) {
  if (evals_z.size() != evals_yu.size()) throw std::invalid_argument("mc_main_effect: length mismatch");
  if (evals_z.size() == 0) throw std::invalid_argument("mc_main_effect: need at least one sample");
  const double n = static_cast<double>(evals_z.size());
  const double m = evals_z.sum() / n;
  return evals_z.dot(evals_yu) / n - m * m;
}

/// Model outputs on a sample set: base evaluations (n x D) plus, for the
/// sensitivity families, scalar evaluations on each companion set.
struct Evaluations {
  Matrix base;
  std::vector<Vector> paired;

  Evaluations select(const std::vector<std::size_t>& rows) const {
    Evaluations out;
    out.base.resize(static_cast<Index>(rows.size()), base.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.base.row(static_cast<Index>(k)) = base.row(static_cast<Index>(rows[k]));
    for (const auto& p : paired) {
      Vector v(static_cast<Index>(rows.size()));
      for (std::size_t k = 0; k < rows.size(); ++k) v[static_cast<Index>(k)] = p[static_cast<Index>(rows[k])];
      out.paired.push_back(std::move(v));
    }
    return out;
  }
};

inline Vector stacked_estimate_values(const EstimatorSpec& spec, const Evaluations& ev) {
  spec.validate();
  if (static_cast<std::size_t>(ev.base.cols()) != spec.outputs) {
    throw std::invalid_argument("evaluations have " + std::to_string(ev.base.cols()) + " outputs, estimator expects " +
                                std::to_string(spec.outputs));
  }
  Vector out(static_cast<Index>(spec.length()));
  switch (spec.family) {
    case Family::Mean:
      out = mc_mean(ev.base);
      break;
    case Family::Variance:
      out = mc_variance(ev.base);
      break;
    case Family::MeanVariance: {
      const Index d = static_cast<Index>(spec.outputs);
      out.head(d) = mc_mean(ev.base);
      out.tail(d * d) = mc_variance(ev.base);
      break;
    }
    case Family::MainEffect:
    case Family::MainEffectVariance: {
      if (ev.paired.size() != spec.index_sets.size()) {
        throw std::invalid_argument("main-effect estimate needs one companion evaluation per index subset");
      }
      const Vector f = ev.base.col(0);
      for (std::size_t u = 0; u < spec.index_sets.size(); ++u) {
        if (ev.paired[u].size() != f.size()) throw std::invalid_argument("companion evaluations have the wrong length");
        out[static_cast<Index>(u)] = mc_main_effect(f, ev.paired[u]);
      }
      if (spec.family == Family::MainEffectVariance) out[static_cast<Index>(spec.index_sets.size())] = mc_variance(ev.base)[0];
      break;
    }
  }
  return out;
}

inline EstimateVector stacked_estimate(const EstimatorSpec& spec, const Evaluations& ev) {
  return EstimateVector{spec, stacked_estimate_values(spec, ev), 0};
}

/// O(n^2) pairwise-difference form of the sample covariance; test oracle only.
inline Vector mc_variance_pairwise(const Matrix& evals) {
  const Index n = evals.rows();
  if (n < 2) throw std::invalid_argument("mc_variance_pairwise: need at least two samples");
  const Index d = evals.cols();
  Vector acc = Vector::Zero(d * d);
  for (Index s = 0; s < n; ++s) {
    for (Index t = 0; t < n; ++t) {
      const Vector diff = (evals.row(s) - evals.row(t)).transpose();
      acc += kron_vec(diff, diff);
    }
  }
  return acc / (2.0 * static_cast<double>(n) * static_cast<double>(n - 1));
}

}  // namespace mfacv
