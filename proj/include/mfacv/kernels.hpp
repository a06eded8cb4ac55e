#pragma once

#include "mfacv/estimators.hpp"
#include "mfacv/pilot.hpp"
#include "mfacv/sampling.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace mfacv {

using Rational = boost::multiprecision::cpp_rational;

// Every estimator covariance is a sum of pilot blocks, each weighted by a
// scalar that depends only on the two set sizes N, M and their overlap P.
// The discrepancy coefficients are signed sums of the same scalars over the
// four (starred/plain) set pairs.
enum class Term {
  Mean,         // P / (N M)
  VarProduct,   // P (P-1) / (N (N-1) M (M-1))
  MeO,          // P / (N^2 M^2)
  MeR,          // P (N-1)(M-1) / (N^2 M^2)
  MeSFirst,     // P (N-1) / (N^2 M^2), weights S^T
  MeSSecond,    // P (M-1) / (N^2 M^2), weights S
  MeU,          // 2 P (P-1) / (N^2 M^2)
  CrossE,       // P (N-1) / (N^2 M), main effect on the first set, variance on the second
  CrossC,       // P / (N^2 M)
  CrossU,       // 2 P (P-1) / (N^2 M (M-1))
};

namespace detail {

template <class T>
T checked_ratio(const T& num, const T& den) {
  if (den == T(0)) throw std::domain_error("covariance coefficient has a zero denominator (degenerate set size)");
  return num / den;
}

template <class T>
T term_value(Term t, const T& n, const T& m, const T& p) {
  const T one(1);
  switch (t) {
    case Term::Mean: return checked_ratio<T>(p, n * m);
    case Term::VarProduct: return checked_ratio<T>(p * (p - one), n * (n - one) * m * (m - one));
    case Term::MeO: return checked_ratio<T>(p, n * n * m * m);
    case Term::MeR: return checked_ratio<T>(p * (n - one) * (m - one), n * n * m * m);
    case Term::MeSFirst: return checked_ratio<T>(p * (n - one), n * n * m * m);
    case Term::MeSSecond: return checked_ratio<T>(p * (m - one), n * n * m * m);
    case Term::MeU: return checked_ratio<T>(T(2) * p * (p - one), n * n * m * m);
    case Term::CrossE: return checked_ratio<T>(p * (n - one), n * n * m);
    case Term::CrossC: return checked_ratio<T>(p, n * n * m);
    case Term::CrossU: return checked_ratio<T>(T(2) * p * (p - one), n * n * m * (m - one));
  }
  return T(0);
}

template <class Count>
using ExactType = std::conditional_t<std::is_integral_v<Count>, Rational, double>;

template <class T>
double to_double(const T& v) {
  if constexpr (std::is_same_v<T, double>) {
    return v;
  } else {
    return v.template convert_to<double>();
  }
}

template <class Count>
ExactType<Count> exact(Count c) {
  return ExactType<Count>(c);
}

// Signed sum of a term over set pairs, evaluated exactly before rounding.
template <class Count>
double signed_sum(const BasicOverlapLedger<Count>& L, Term t,
                  std::initializer_list<std::tuple<std::size_t, std::size_t, int>> pairs) {
  using T = ExactType<Count>;
  T acc(0);
  for (const auto& [a, b, sign] : pairs) {
    const T v = term_value<T>(t, exact(L.set_size(a)), exact(L.set_size(b)), exact(L.overlap(a, b)));
    if (sign > 0) {
      acc += v;
    } else {
      acc -= v;
    }
  }
  return to_double(acc);
}

}  // namespace detail

/// Coefficient of `t` in Cov[Delta_i, Delta_j].
template <class Count>
double delta_coefficient(const BasicOverlapLedger<Count>& L, Term t, std::size_t i, std::size_t j) {
  const auto is = star_set(i), ip = plain_set(i), js = star_set(j), jp = plain_set(j);
  return detail::signed_sum(L, t, {{is, js, +1}, {is, jp, -1}, {ip, js, -1}, {ip, jp, +1}});
}

/// Coefficient of `t` in Cov[Q_0, Delta_i] (high fidelity on the first set).
template <class Count>
double high_coefficient(const BasicOverlapLedger<Count>& L, Term t, std::size_t i) {
  return detail::signed_sum(L, t, {{0, star_set(i), +1}, {0, plain_set(i), -1}});
}

/// Coefficient of `t` with the discrepancy's sets first and Z_0 second.
template <class Count>
double high_coefficient_reversed(const BasicOverlapLedger<Count>& L, Term t, std::size_t i) {
  return detail::signed_sum(L, t, {{star_set(i), 0, +1}, {plain_set(i), 0, -1}});
}

// ---------------------------------------------------------------------------
// Named coefficient bundles
// ---------------------------------------------------------------------------

enum class CoefficientFamily { Mean, Variance, MainEffect, MainEffectVariance };

/// Scalar coefficients for one (i, j) pair, under the names used for that
/// family. Letters repeat across families with different meanings, hence
/// the family tag.
struct CoefficientBundle {
  CoefficientFamily family;
  std::map<std::string, double> values;

  double operator[](const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) throw std::out_of_range("no coefficient named " + name);
    return it->second;
  }
};

template <class Count>
CoefficientBundle coeffs(CoefficientFamily family, const BasicOverlapLedger<Count>& L, std::size_t i, std::size_t j) {
  if (i == 0 || j == 0 || i > L.low_fidelity_models() || j > L.low_fidelity_models()) {
    throw std::out_of_range("coefficient indices must name low-fidelity models 1..K");
  }
  CoefficientBundle b{family, {}};
  switch (family) {
    case CoefficientFamily::Mean:
      b.values["F"] = delta_coefficient(L, Term::Mean, i, j);
      b.values["G"] = high_coefficient(L, Term::Mean, i);
      break;
    case CoefficientFamily::Variance:
      b.values["F"] = delta_coefficient(L, Term::Mean, i, j);
      b.values["H"] = delta_coefficient(L, Term::VarProduct, i, j);
      b.values["G"] = high_coefficient(L, Term::Mean, i);
      b.values["J"] = high_coefficient(L, Term::VarProduct, i);
      break;
    case CoefficientFamily::MainEffect:
      b.values["F"] = delta_coefficient(L, Term::MeO, i, j);
      b.values["G"] = delta_coefficient(L, Term::MeR, i, j);
      b.values["H_ij"] = delta_coefficient(L, Term::MeSFirst, i, j);
      b.values["H_ji"] = delta_coefficient(L, Term::MeSSecond, i, j);
      b.values["J"] = delta_coefficient(L, Term::MeU, i, j);
      b.values["V"] = high_coefficient(L, Term::MeO, i);
      b.values["W"] = high_coefficient(L, Term::MeR, i);
      b.values["X_i0"] = high_coefficient(L, Term::MeSFirst, i);
      b.values["X_0i"] = high_coefficient(L, Term::MeSSecond, i);
      b.values["Z"] = high_coefficient(L, Term::MeU, i);
      break;
    case CoefficientFamily::MainEffectVariance:
      b.values["F"] = delta_coefficient(L, Term::CrossE, i, j);
      b.values["G"] = delta_coefficient(L, Term::CrossC, i, j);
      b.values["H"] = delta_coefficient(L, Term::CrossU, i, j);
      b.values["L_0i"] = high_coefficient(L, Term::CrossE, i);
      b.values["I_0i"] = high_coefficient(L, Term::CrossC, i);
      b.values["J_0i"] = high_coefficient(L, Term::CrossU, i);
      b.values["L_i0"] = high_coefficient_reversed(L, Term::CrossE, i);
      b.values["I_i0"] = high_coefficient_reversed(L, Term::CrossC, i);
      b.values["J_i0"] = high_coefficient_reversed(L, Term::CrossU, i);
      break;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Block formulas
// ---------------------------------------------------------------------------

namespace detail {

// coef(t, reversed): scalar for term t, with the roles of the two
// estimators swapped when `reversed` is set.
template <class Coef>
Matrix block_formula(const EstimatorSpec& spec, std::size_t i, std::size_t j, const PilotStatistics& p, Coef coef) {
  auto c = [&](Term t) { return coef(t, false); };
  auto cr = [&](Term t) { return coef(t, true); };
  const Index d = static_cast<Index>(spec.outputs);
  const Index d2 = d * d;
  switch (spec.family) {
    case Family::Mean:
      return c(Term::Mean) * p.a(i, j);
    case Family::Variance:
      return c(Term::VarProduct) * p.v(i, j) + c(Term::Mean) * p.w(i, j);
    case Family::MeanVariance: {
      Matrix out(d + d2, d + d2);
      out.topLeftCorner(d, d) = c(Term::Mean) * p.a(i, j);
      out.topRightCorner(d, d2) = c(Term::Mean) * p.b(i, j);
      out.bottomLeftCorner(d2, d) = cr(Term::Mean) * p.b(j, i).transpose();
      out.bottomRightCorner(d2, d2) = c(Term::VarProduct) * p.v(i, j) + c(Term::Mean) * p.w(i, j);
      return out;
    }
    case Family::MainEffect:
    case Family::MainEffectVariance: {
      const Index s = static_cast<Index>(spec.index_sets.size());
      const Matrix me = c(Term::MeO) * p.o(i, j) + c(Term::MeR) * p.r(i, j) +
                        c(Term::MeSFirst) * p.s(j, i).transpose() + c(Term::MeSSecond) * p.s(i, j) +
                        c(Term::MeU) * p.u(i, j);
      if (spec.family == Family::MainEffect) return me;
      Matrix out(s + 1, s + 1);
      out.topLeftCorner(s, s) = me;
      out.topRightCorner(s, 1) =
          c(Term::CrossE) * p.e(i, j) + c(Term::CrossC) * p.c(i, j) + c(Term::CrossU) * p.u(i, j).col(0);
      out.bottomLeftCorner(1, s) =
          (cr(Term::CrossE) * p.e(j, i) + cr(Term::CrossC) * p.c(j, i) + cr(Term::CrossU) * p.u(j, i).col(0))
              .transpose();
      out.bottomRightCorner(1, 1) = c(Term::VarProduct) * p.v(i, j) + c(Term::Mean) * p.w(i, j);
      return out;
    }
  }
  return Matrix();
}

inline void check_pilot(const EstimatorSpec& spec, const PilotStatistics& p, std::size_t models_needed) {
  spec.validate();
  p.require(spec.family);
  if (p.models < models_needed) {
    throw std::invalid_argument("pilot covers " + std::to_string(p.models) + " models, need " +
                                std::to_string(models_needed));
  }
  if (p.outputs != spec.outputs) {
    throw std::invalid_argument("pilot has " + std::to_string(p.outputs) + " outputs, estimator expects " +
                                std::to_string(spec.outputs));
  }
  if (uses_sensitivity(spec.family) && p.sets() != spec.index_sets.size()) {
    throw std::invalid_argument("pilot index subsets do not match the estimator");
  }
}

inline void check_family_minimum(Family f, double n, const char* which) {
  if (n < 1.0) throw std::invalid_argument(std::string("set size ") + which + " must be >= 1");
  if (uses_variance(f) && n < 2.0) {
    throw std::invalid_argument(std::string("variance estimators need set size ") + which + " >= 2");
  }
}

}  // namespace detail

/// Cov[Q_i(N), Q_j(M)] for two sets of sizes N and M sharing P samples.
template <class Count>
Matrix pair_cov(const EstimatorSpec& spec, std::size_t i, std::size_t j, Count n, Count m, Count p,
                const PilotStatistics& pilot) {
  detail::check_pilot(spec, pilot, std::max(i, j) + 1);
  if (p < Count(0) || p > std::min(n, m)) throw std::invalid_argument("pair_cov: overlap exceeds a set size");
  detail::check_family_minimum(spec.family, static_cast<double>(n), "N");
  detail::check_family_minimum(spec.family, static_cast<double>(m), "M");
  using T = detail::ExactType<Count>;
  auto coef = [&](Term t, bool reversed) {
    return reversed ? detail::to_double(detail::term_value<T>(t, T(m), T(n), T(p)))
                    : detail::to_double(detail::term_value<T>(t, T(n), T(m), T(p)));
  };
  return detail::block_formula(spec, i, j, pilot, coef);
}

/// Cov[Delta_i, Delta_j] for low-fidelity models i, j in 1..K.
template <class Count>
Matrix delta_cov(const EstimatorSpec& spec, const BasicOverlapLedger<Count>& L, std::size_t i, std::size_t j,
                 const PilotStatistics& pilot) {
  detail::check_pilot(spec, pilot, L.low_fidelity_models() + 1);
  if (i == 0 || j == 0 || i > L.low_fidelity_models() || j > L.low_fidelity_models()) {
    throw std::out_of_range("delta_cov: model index out of range");
  }
  auto coef = [&](Term t, bool reversed) { return reversed ? delta_coefficient(L, t, j, i) : delta_coefficient(L, t, i, j); };
  return detail::block_formula(spec, i, j, pilot, coef);
}

/// Cov[Q_0, Delta_i].
template <class Count>
Matrix q_delta_cov(const EstimatorSpec& spec, const BasicOverlapLedger<Count>& L, std::size_t i,
                   const PilotStatistics& pilot) {
  detail::check_pilot(spec, pilot, L.low_fidelity_models() + 1);
  if (i == 0 || i > L.low_fidelity_models()) throw std::out_of_range("q_delta_cov: model index out of range");
  auto coef = [&](Term t, bool reversed) {
    return reversed ? high_coefficient_reversed(L, t, i) : high_coefficient(L, t, i);
  };
  return detail::block_formula(spec, 0, i, pilot, coef);
}

/// Var[Q_0] on Z_0.
template <class Count>
Matrix high_fidelity_cov(const EstimatorSpec& spec, const BasicOverlapLedger<Count>& L, const PilotStatistics& pilot) {
  return pair_cov(spec, 0, 0, L.n0(), L.n0(), L.n0(), pilot);
}

struct AssembledSystem {
  Matrix var_q;        // L x L
  Matrix var_delta;    // K L x K L
  Matrix cov_q_delta;  // L x K L
};

template <class Count>
AssembledSystem assemble(const EstimatorSpec& spec, const BasicOverlapLedger<Count>& L, const PilotStatistics& pilot) {
  detail::check_pilot(spec, pilot, L.low_fidelity_models() + 1);
  const std::size_t k = L.low_fidelity_models();
  const Index len = static_cast<Index>(spec.length());
  AssembledSystem out;
  out.var_q = high_fidelity_cov(spec, L, pilot);
  out.var_delta.resize(static_cast<Index>(k) * len, static_cast<Index>(k) * len);
  out.cov_q_delta.resize(len, static_cast<Index>(k) * len);
  for (std::size_t i = 1; i <= k; ++i) {
    const Index ri = static_cast<Index>(i - 1) * len;
    out.cov_q_delta.block(0, ri, len, len) = q_delta_cov(spec, L, i, pilot);
    for (std::size_t j = i; j <= k; ++j) {
      const Index rj = static_cast<Index>(j - 1) * len;
      const Matrix blk = delta_cov(spec, L, i, j, pilot);
      out.var_delta.block(ri, rj, len, len) = blk;
      if (j != i) out.var_delta.block(rj, ri, len, len) = blk.transpose();
    }
  }
  out.var_delta = symmetrize(out.var_delta);
  out.var_q = symmetrize(out.var_q);
  return out;
}

}  // namespace mfacv
