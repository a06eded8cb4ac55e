#pragma once

#include "mfacv/acv.hpp"
#include "mfacv/kernels.hpp"
#include "mfacv/rng.hpp"
#include "mfacv/sampling.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfacv {

struct CostModel {
  std::vector<double> costs;  // per model, index 0 is the high fidelity
  double budget = 0.0;

  void validate() const {
    if (costs.empty()) throw std::invalid_argument("cost model needs at least the high-fidelity cost");
    for (double c : costs) {
      if (!(c > 0.0)) throw std::invalid_argument("model costs must be positive");
    }
    if (!(budget > 0.0)) throw std::invalid_argument("budget must be positive");
  }

  /// Models cheaper than the high fidelity are expected; returns the
  /// indices that violate this ordering so callers can warn.
  std::vector<std::size_t> ordering_violations() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 1; i < costs.size(); ++i) {
      if (costs[i] > costs[0]) out.push_back(i);
    }
    return out;
  }
};

/// Integer sample allocation under an ACV-IS style scheme. A low-fidelity
/// model with zero fresh samples is not used at all.
struct Allocation {
  Scheme scheme = Scheme::AcvIs;
  std::int64_t n0 = 0;
  std::vector<std::int64_t> fresh;
  double cost = 0.0;
  double objective = std::numeric_limits<double>::infinity();
  std::vector<double> trace;  // best relaxed objective of each start, all subsets

  std::vector<std::size_t> active() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      if (fresh[i] > 0) out.push_back(i + 1);
    }
    return out;
  }

  /// |Z_i u Z_i*| per model (model 0 first).
  std::vector<std::int64_t> evaluations() const {
    std::vector<std::int64_t> out{n0};
    for (auto f : fresh) out.push_back(f > 0 ? n0 + f : 0);
    return out;
  }
};

inline std::size_t min_n0(Family f) { return uses_variance(f) ? 2 : 1; }
inline std::size_t min_fresh(Family f, Scheme s) { return uses_variance(f) && s == Scheme::AcvIs ? 2 : 1; }

/// C_0 N_0 + sum_i C_i |Z_i u Z_i*|, times the evaluations each sample costs.
template <class Count>
double allocation_cost(const EstimatorSpec& spec, const std::vector<double>& costs, Count n0,
                       const std::vector<Count>& fresh) {
  if (fresh.size() + 1 != costs.size()) throw std::invalid_argument("allocation_cost: wrong number of models");
  double c = costs[0] * static_cast<double>(n0);
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    if (fresh[i] > Count(0)) c += costs[i + 1] * static_cast<double>(n0 + fresh[i]);
  }
  return c * static_cast<double>(spec.evaluations_per_sample());
}

/// log|Var[Q~]| with optimal weights; models with zero fresh samples are
/// left out of the estimator.
template <class Count>
double allocation_objective(const EstimatorSpec& spec, const PilotStatistics& pilot, Scheme scheme, Count n0,
                            const std::vector<Count>& fresh, SingularPolicy policy = SingularPolicy::Deduplicate) {
  std::vector<std::size_t> keep{0};
  std::vector<Count> used;
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    if (fresh[i] > Count(0)) {
      keep.push_back(i + 1);
      used.push_back(fresh[i]);
    }
  }
  const PilotStatistics sub = keep.size() == pilot.models ? pilot : pilot.select_models(keep);
  const auto ledger = acv_is_ledger<Count>(n0, used, scheme);
  return solve_acv(spec, ledger, sub, policy).log_det;
}

template <class Count>
double allocation_objective(const EstimatorSpec& spec, const PilotStatistics& pilot, const Allocation& a) {
  std::vector<Count> fresh(a.fresh.begin(), a.fresh.end());
  return allocation_objective<Count>(spec, pilot, a.scheme, static_cast<Count>(a.n0), fresh);
}

struct OptimizerOptions {
  std::size_t starts = 8;
  std::uint64_t seed = 20240229;
  std::size_t max_iterations = 600;
  bool parallel = true;
  // Raise the per-family minimum counts, e.g. when the allocation also
  // serves variance estimators.
  std::size_t min_n0 = 0;
  std::size_t min_fresh = 0;
};

namespace detail {

struct NelderMeadResult {
  Vector x;
  double value = std::numeric_limits<double>::infinity();
};

inline NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& start,
                                    std::size_t max_iterations) {
  gsl_set_error_handler_off();
  NelderMeadResult best{start, f(start)};
  const std::size_t n = static_cast<std::size_t>(start.size());
  if (n == 0) return best;
  struct Ctx {
    const std::function<double(const Vector&)>* f;
    std::size_t n;
  } ctx{&f, n};
  gsl_multimin_function fn;
  fn.n = n;
  fn.params = &ctx;
  fn.f = [](const gsl_vector* v, void* params) -> double {
    auto* c = static_cast<Ctx*>(params);
    Vector x(static_cast<Index>(c->n));
    for (std::size_t k = 0; k < c->n; ++k) x[static_cast<Index>(k)] = gsl_vector_get(v, k);
    const double y = (*c->f)(x);
    return std::isfinite(y) ? y : (y < 0 ? -1e300 : 1e300);
  };
  gsl_vector* x0 = gsl_vector_alloc(n);
  gsl_vector* step = gsl_vector_alloc(n);
  for (std::size_t k = 0; k < n; ++k) {
    gsl_vector_set(x0, k, start[static_cast<Index>(k)]);
    gsl_vector_set(step, k, 1.0);
  }
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
  gsl_multimin_fminimizer_set(s, &fn, x0, step);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-7) == GSL_SUCCESS) break;
  }
  if (s->fval < best.value) {
    best.value = s->fval;
    for (std::size_t k = 0; k < n; ++k) best.x[static_cast<Index>(k)] = gsl_vector_get(s->x, k);
  }
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(x0);
  gsl_vector_free(step);
  return best;
}

inline bool identical_models(const PilotStatistics& p, std::size_t i, std::size_t j) {
  auto close = [](const Matrix& a, const Matrix& b) {
    const double scale = std::max({1e-300, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
    return (a - b).cwiseAbs().maxCoeff() <= 1e-12 * scale;
  };
  if (!close(p.a(i, i), p.a(j, j)) || !close(p.a(i, j), p.a(i, i))) return false;
  for (std::size_t m = 0; m < p.models; ++m) {
    if (m != i && m != j && !close(p.a(i, m), p.a(j, m))) return false;
  }
  if (p.has_variance() && !close(p.w(i, i), p.w(i, j))) return false;
  if (p.has_sensitivity() && !close(p.o(i, i), p.o(i, j))) return false;
  return true;
}

}  // namespace detail

/// Budget-constrained allocation minimizing log|Var[Q~]|.
///
/// For every subset of low-fidelity models, the budget left after the
/// minimum counts is split between N_0 and the fresh sets by softmax shares,
/// which keeps every start feasible and on the budget boundary. Each subset
/// is searched with Nelder-Mead from several deterministic starts; the best
/// relaxed point is floored, topped up cheapest-first and, for identical
/// models, balanced. Ties go to the lowest model index.
inline Allocation optimize_allocation(const EstimatorSpec& spec, const PilotStatistics& pilot, const CostModel& cm,
                                      Scheme scheme, const OptimizerOptions& opt = {}) {
  cm.validate();
  spec.validate();
  const std::size_t k = cm.costs.size() - 1;
  if (pilot.models < k + 1) throw std::invalid_argument("pilot covers fewer models than the cost model");
  if (k > 12) throw std::invalid_argument("optimize_allocation: at most 12 low-fidelity models are supported");
  const double eps = static_cast<double>(spec.evaluations_per_sample());
  const double c0 = cm.costs[0];
  const auto n0_min = static_cast<std::int64_t>(std::max(min_n0(spec.family), opt.min_n0));
  const auto fresh_min = static_cast<std::int64_t>(std::max(min_fresh(spec.family, scheme), opt.min_fresh));
  if (eps * c0 * static_cast<double>(n0_min) > cm.budget * (1 + 1e-12)) {
    throw std::invalid_argument("infeasible budget: cannot afford the minimum high-fidelity samples");
  }

  auto int_objective = [&](std::int64_t n0, const std::vector<std::int64_t>& fresh) {
    try {
      return allocation_objective<std::int64_t>(spec, pilot, scheme, n0, fresh);
    } catch (const std::exception&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  auto int_cost = [&](std::int64_t n0, const std::vector<std::int64_t>& fresh) {
    return allocation_cost<std::int64_t>(spec, cm.costs, n0, fresh);
  };
  auto not_worse = [](double candidate, double current) {
    return candidate <= current + 1e-12 * std::max(1.0, std::abs(current));
  };

  Allocation best;
  best.scheme = scheme;
  for (std::uint32_t mask = 0; mask < (1u << k); ++mask) {
    std::vector<std::size_t> act;
    for (std::size_t i = 0; i < k; ++i) {
      if (mask & (1u << i)) act.push_back(i + 1);
    }
    double per_n0 = c0;
    double min_cost = 0.0;
    for (std::size_t i : act) {
      per_n0 += cm.costs[i];
      min_cost += cm.costs[i] * static_cast<double>(fresh_min);
    }
    per_n0 *= eps;
    min_cost = eps * min_cost + per_n0 * static_cast<double>(n0_min);
    if (min_cost > cm.budget * (1 + 1e-12)) continue;
    const double spare = std::max(0.0, cm.budget - min_cost);

    auto counts_from = [&](const Vector& theta) {
      Vector logits(static_cast<Index>(act.size() + 1));
      logits[0] = 0.0;
      logits.tail(static_cast<Index>(act.size())) = theta;
      const double mx = logits.maxCoeff();
      Vector w = (logits.array() - mx).exp();
      w /= w.sum();
      std::pair<double, std::vector<double>> c;
      c.first = static_cast<double>(n0_min) + w[0] * spare / per_n0;
      c.second.assign(k, 0.0);
      for (std::size_t a = 0; a < act.size(); ++a) {
        c.second[act[a] - 1] =
            static_cast<double>(fresh_min) + w[static_cast<Index>(a + 1)] * spare / (eps * cm.costs[act[a]]);
      }
      return c;
    };
    auto relaxed = [&](const Vector& theta) {
      const auto c = counts_from(theta);
      try {
        return allocation_objective<double>(spec, pilot, scheme, c.first, c.second);
      } catch (const std::exception&) {
        return std::numeric_limits<double>::infinity();
      }
    };

    std::vector<Vector> starts;
    const Index dim = static_cast<Index>(act.size());
    starts.push_back(Vector::Zero(dim));
    Rng rng = substream(opt.seed, {mask});
    std::normal_distribution<double> normal(0.0, 2.5);
    while (starts.size() < std::max<std::size_t>(opt.starts, 1)) {
      Vector s(dim);
      for (Index d = 0; d < dim; ++d) s[d] = normal(rng);
      starts.push_back(s);
    }
    std::vector<detail::NelderMeadResult> results(starts.size());
    if (opt.parallel && dim > 0) {
      std::vector<std::future<detail::NelderMeadResult>> jobs;
      for (const auto& s : starts) {
        jobs.push_back(std::async(std::launch::async, [&, s] { return detail::nelder_mead(relaxed, s, opt.max_iterations); }));
      }
      for (std::size_t r = 0; r < jobs.size(); ++r) results[r] = jobs[r].get();
    } else {
      for (std::size_t r = 0; r < starts.size(); ++r) results[r] = detail::nelder_mead(relaxed, starts[r], opt.max_iterations);
    }
    std::size_t pick = 0;
    for (std::size_t r = 0; r < results.size(); ++r) {
      best.trace.push_back(results[r].value);
      if (results[r].value < results[pick].value) pick = r;
    }
    struct Rounded {
      std::int64_t n0;
      std::vector<std::int64_t> fresh;
      double value;
    };
    // Floor, then spend what is left cheapest-first.
    auto integerize = [&](double n0_cont, const std::vector<double>& fresh_cont) {
      std::int64_t n0 = std::max<std::int64_t>(n0_min, static_cast<std::int64_t>(std::floor(n0_cont + 1e-9)));
      std::vector<std::int64_t> fresh(k, 0);
      for (std::size_t i : act) {
        fresh[i - 1] = std::max<std::int64_t>(fresh_min, static_cast<std::int64_t>(std::floor(fresh_cont[i - 1] + 1e-9)));
      }
      while (int_cost(n0, fresh) > cm.budget && n0 > n0_min) --n0;
      double value = int_objective(n0, fresh);

      struct Var {
        double unit;
        std::size_t model;  // 0 is N_0
      };
      std::vector<Var> vars{{per_n0, 0}};
      for (std::size_t i : act) vars.push_back({eps * cm.costs[i], i});
      std::stable_sort(vars.begin(), vars.end(), [](const Var& a, const Var& b) { return a.unit < b.unit; });
      for (const auto& v : vars) {
        const double left = cm.budget - int_cost(n0, fresh);
        const auto extra = static_cast<std::int64_t>(std::floor(left / v.unit + 1e-9));
        if (extra <= 0) continue;
        auto n0_try = n0;
        auto fresh_try = fresh;
        if (v.model == 0) {
          n0_try += extra;
        } else {
          fresh_try[v.model - 1] += extra;
        }
        while (int_cost(n0_try, fresh_try) > cm.budget) {
          if (v.model == 0) {
            --n0_try;
          } else {
            --fresh_try[v.model - 1];
          }
        }
        const double trial = int_objective(n0_try, fresh_try);
        if (not_worse(trial, value)) {
          n0 = n0_try;
          fresh = fresh_try;
          value = trial;
        }
      }

      // Identical models at equal cost share their samples evenly.
      for (std::size_t a = 0; a < act.size(); ++a) {
        for (std::size_t b = a + 1; b < act.size(); ++b) {
          const std::size_t i = act[a], j = act[b];
          if (cm.costs[i] != cm.costs[j] || !detail::identical_models(pilot, i, j)) continue;
          auto trial_fresh = fresh;
          const std::int64_t total = fresh[i - 1] + fresh[j - 1];
          trial_fresh[j - 1] = total / 2;
          trial_fresh[i - 1] = total - total / 2;
          const double trial = int_objective(n0, trial_fresh);
          if (not_worse(trial, value)) {
            fresh = trial_fresh;
            value = trial;
          }
        }
      }
      return Rounded{n0, fresh, value};
    };

    const auto cont = counts_from(results[pick].x);
    Rounded r = integerize(cont.first, cont.second);

    // Flooring a small N_0 moves a large share of the budget; retry the
    // neighbouring integers with the low-fidelity split re-optimized.
    double fresh_floor = 0.0;
    for (std::size_t i : act) fresh_floor += eps * cm.costs[i] * static_cast<double>(fresh_min);
    const auto centre = static_cast<std::int64_t>(std::floor(cont.first));
    for (std::int64_t n0 = std::max(n0_min, centre - 2); dim > 0 && n0 <= centre + 2; ++n0) {
      const double left = cm.budget - per_n0 * static_cast<double>(n0) - fresh_floor;
      if (left < 0.0) break;
      auto split = [&](const Vector& theta) {
        Vector logits(dim);
        logits[0] = 0.0;
        logits.tail(dim - 1) = theta;
        const Vector w = (logits.array() - logits.maxCoeff()).exp();
        std::vector<double> f(k, 0.0);
        for (std::size_t a = 0; a < act.size(); ++a) {
          f[act[a] - 1] = static_cast<double>(fresh_min) + w[static_cast<Index>(a)] / w.sum() * left / (eps * cm.costs[act[a]]);
        }
        return f;
      };
      auto value_at = [&](const Vector& theta) {
        try {
          return allocation_objective<double>(spec, pilot, scheme, static_cast<double>(n0), split(theta));
        } catch (const std::exception&) {
          return std::numeric_limits<double>::infinity();
        }
      };
      Vector from_cont(dim - 1);
      const double base = std::max(1e-12, (cont.second[act[0] - 1] - fresh_min) * cm.costs[act[0]]);
      for (Index a = 1; a < dim; ++a) {
        const std::size_t i = act[static_cast<std::size_t>(a)];
        from_cont[a - 1] = std::log(std::max(1e-12, (cont.second[i - 1] - fresh_min) * cm.costs[i]) / base);
      }
      detail::NelderMeadResult fit{from_cont, value_at(from_cont)};
      if (dim > 1) {
        for (const Vector& s : {from_cont, Vector(Vector::Zero(dim - 1))}) {
          const auto res = detail::nelder_mead(value_at, s, opt.max_iterations);
          if (res.value < fit.value) fit = res;
        }
      }
      const Rounded trial = integerize(static_cast<double>(n0), split(fit.x));
      if (trial.value < r.value) r = trial;
    }
    const std::int64_t n0 = r.n0;
    const std::vector<std::int64_t> fresh = r.fresh;
    const double value = r.value;

    if (value < best.objective) {
      best.n0 = n0;
      best.fresh = fresh;
      best.objective = value;
      best.cost = int_cost(n0, fresh);
    }
  }
  if (!std::isfinite(best.objective) && best.fresh.empty()) {
    throw std::invalid_argument("infeasible budget: no allocation satisfies the minimum counts");
  }
  return best;
}

}  // namespace mfacv
