#pragma once

#include "mfacv/acv.hpp"
#include "mfacv/estimators.hpp"
#include "mfacv/kernels.hpp"
#include "mfacv/models.hpp"
#include "mfacv/parallel.hpp"
#include "mfacv/pilot.hpp"
#include "mfacv/sampling.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <json.hpp>

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfacv {

// ---------------------------------------------------------------------------
// Exact enumeration on discrete inputs
// ---------------------------------------------------------------------------

/// Every input coordinate takes one of k atoms independently. Each model is
/// tabulated over the k^I input tuples (input 0 is the most significant
/// digit of the row index).
struct DiscreteCase {
  std::vector<double> atoms;
  std::vector<double> probabilities;
  std::size_t inputs = 1;
  std::vector<Matrix> tables;

  std::size_t atom_count() const { return atoms.size(); }
  std::size_t models() const { return tables.size(); }
  std::size_t outputs() const { return tables.empty() ? 0 : static_cast<std::size_t>(tables[0].cols()); }

  std::size_t tuples() const {
    std::size_t t = 1;
    for (std::size_t i = 0; i < inputs; ++i) t *= atoms.size();
    return t;
  }

  void validate() const {
    if (atoms.empty() || atoms.size() > 3) throw std::invalid_argument("discrete case: need 1 to 3 atoms");
    if (probabilities.size() != atoms.size()) throw std::invalid_argument("discrete case: one probability per atom");
    long double total = 0;
    for (double p : probabilities) {
      if (!(p > 0.0)) throw std::invalid_argument("discrete case: probabilities must be positive");
      total += p;
    }
    if (std::abs(static_cast<double>(total - 1.0L)) > 1e-12) {
      throw std::invalid_argument("discrete case: probabilities must sum to 1");
    }
    if (inputs == 0) throw std::invalid_argument("discrete case: need at least one input");
    if (tables.empty()) throw std::invalid_argument("discrete case: no models");
    for (const auto& t : tables) {
      if (static_cast<std::size_t>(t.rows()) != tuples() || t.cols() != tables[0].cols()) {
        throw std::invalid_argument("discrete case: model table has the wrong shape");
      }
    }
  }

  static DiscreteCase from_functions(std::vector<double> atoms, std::vector<double> probabilities, std::size_t inputs,
                                     const std::vector<std::function<Vector(const Vector&)>>& models) {
    DiscreteCase c{std::move(atoms), std::move(probabilities), inputs, {}};
    const std::size_t k = c.atoms.size();
    for (const auto& f : models) {
      Matrix t;
      for (std::size_t row = 0; row < c.tuples(); ++row) {
        Vector x(static_cast<Index>(inputs));
        std::size_t rest = row;
        for (std::size_t d = inputs; d-- > 0;) {
          x[static_cast<Index>(d)] = c.atoms[rest % k];
          rest /= k;
        }
        const Vector y = f(x);
        if (row == 0) t.resize(static_cast<Index>(c.tuples()), y.size());
        t.row(static_cast<Index>(row)) = y.transpose();
      }
      c.tables.push_back(std::move(t));
    }
    c.validate();
    return c;
  }
};

namespace detail {

/// All states of one sample position: its input tuple plus the redrawn
/// coordinates of each companion.
struct PositionStates {
  std::size_t count = 0;
  std::vector<long double> prob;
  std::vector<Matrix> base;                  // per model: count x D
  std::vector<std::vector<Vector>> paired;   // per model, per index set: count

  PositionStates(const DiscreteCase& c, const std::vector<IndexSet>& index_sets) {
    c.validate();
    validate_index_sets(index_sets, c.inputs);
    const std::size_t k = c.atom_count();
    std::vector<std::vector<bool>> kept;
    std::size_t digits = c.inputs;
    for (const auto& u : index_sets) {
      std::vector<bool> keep(c.inputs, false);
      for (std::size_t v : u) keep[v] = true;
      digits += static_cast<std::size_t>(std::count(keep.begin(), keep.end(), false));
      kept.push_back(std::move(keep));
    }
    count = 1;
    for (std::size_t d = 0; d < digits; ++d) count *= k;
    prob.resize(count);
    base.assign(c.models(), Matrix(static_cast<Index>(count), static_cast<Index>(c.outputs())));
    paired.assign(c.models(), std::vector<Vector>(index_sets.size(), Vector(static_cast<Index>(count))));
    std::vector<std::size_t> dig(digits);
    auto row_of = [&](const std::vector<std::size_t>& z) {
      std::size_t r = 0;
      for (std::size_t d = 0; d < c.inputs; ++d) r = r * k + z[d];
      return r;
    };
    for (std::size_t s = 0; s < count; ++s) {
      std::size_t rest = s;
      long double p = 1;
      for (std::size_t d = 0; d < digits; ++d) {
        dig[d] = rest % k;
        rest /= k;
        p *= c.probabilities[dig[d]];
      }
      prob[s] = p;
      std::vector<std::size_t> z(dig.begin(), dig.begin() + static_cast<std::ptrdiff_t>(c.inputs));
      const std::size_t zrow = row_of(z);
      for (std::size_t m = 0; m < c.models(); ++m) base[m].row(static_cast<Index>(s)) = c.tables[m].row(static_cast<Index>(zrow));
      std::size_t next = c.inputs;
      for (std::size_t u = 0; u < index_sets.size(); ++u) {
        std::vector<std::size_t> y = z;
        for (std::size_t d = 0; d < c.inputs; ++d) {
          if (!kept[u][d]) y[d] = dig[next++];
        }
        const std::size_t yrow = row_of(y);
        for (std::size_t m = 0; m < c.models(); ++m) paired[m][u][static_cast<Index>(s)] = c.tables[m](static_cast<Index>(yrow), 0);
      }
    }
  }
};

}  // namespace detail

/// One signed estimate Q_model over the listed sample positions.
struct EstimateTerm {
  std::size_t model = 0;
  std::vector<std::size_t> positions;
  double sign = 1.0;
};

/// A stacked random vector entry: the sum of its signed terms.
using EstimateRequest = std::vector<EstimateTerm>;

struct ExactMoments {
  Vector mean;
  Matrix cov;
  long double total_probability = 0;
  std::size_t realizations = 0;
};

constexpr std::size_t kDefaultEnumerationLimit = std::size_t{1} << 22;

/// Mean and covariance of the stacked requests, by enumerating every joint
/// state of `positions` labeled sample positions.
inline ExactMoments exact_moments(const DiscreteCase& c, const EstimatorSpec& spec, std::size_t positions,
                                  const std::vector<EstimateRequest>& requests,
                                  std::size_t limit = kDefaultEnumerationLimit, std::size_t workers = 0) {
  spec.validate();
  if (spec.outputs != c.outputs()) throw std::invalid_argument("exact_moments: estimator and case outputs differ");
  const detail::PositionStates st(c, uses_sensitivity(spec.family) ? spec.index_sets : std::vector<IndexSet>{});
  long double total = 1;
  for (std::size_t p = 0; p < positions; ++p) total *= static_cast<long double>(st.count);
  if (total > static_cast<long double>(limit)) {
    throw std::invalid_argument("exact_moments: enumeration too large (" + std::to_string(static_cast<double>(total)) +
                                " realizations, limit " + std::to_string(limit) + ")");
  }
  for (const auto& req : requests) {
    for (const auto& t : req) {
      if (t.model >= c.models()) throw std::out_of_range("exact_moments: model index out of range");
      for (std::size_t p : t.positions) {
        if (p >= positions) throw std::out_of_range("exact_moments: position out of range");
      }
    }
  }
  const std::size_t n = static_cast<std::size_t>(total);
  const Index len = static_cast<Index>(spec.length());
  const Index dim = static_cast<Index>(requests.size()) * len;
  const bool sens = uses_sensitivity(spec.family);

  auto evaluate = [&](std::size_t t, std::vector<std::size_t>& state, Vector& y) {
    long double p = 1;
    for (std::size_t k = 0; k < positions; ++k) {
      state[k] = t % st.count;
      t /= st.count;
      p *= st.prob[state[k]];
    }
    for (std::size_t r = 0; r < requests.size(); ++r) {
      Vector acc = Vector::Zero(len);
      for (const auto& term : requests[r]) {
        Evaluations ev;
        ev.base.resize(static_cast<Index>(term.positions.size()), static_cast<Index>(c.outputs()));
        for (std::size_t q = 0; q < term.positions.size(); ++q) {
          ev.base.row(static_cast<Index>(q)) = st.base[term.model].row(static_cast<Index>(state[term.positions[q]]));
        }
        if (sens) {
          for (std::size_t u = 0; u < spec.index_sets.size(); ++u) {
            Vector v(static_cast<Index>(term.positions.size()));
            for (std::size_t q = 0; q < term.positions.size(); ++q) {
              v[static_cast<Index>(q)] = st.paired[term.model][u][static_cast<Index>(state[term.positions[q]])];
            }
            ev.paired.push_back(std::move(v));
          }
        }
        acc += term.sign * stacked_estimate_values(spec, ev);
      }
      y.segment(static_cast<Index>(r) * len, len) = acc;
    }
    return p;
  };

  // Fixed blocks reduced in index order keep the result independent of the
  // worker count.
  constexpr std::size_t block = 4096;
  const std::size_t blocks = (n + block - 1) / block;
  using LVec = std::vector<long double>;
  std::vector<LVec> first(blocks), second(blocks);
  std::vector<long double> mass(blocks, 0);

  parallel_for(blocks, workers, [&](std::size_t b) {
    std::vector<std::size_t> state(positions);
    Vector y(dim);
    LVec s(static_cast<std::size_t>(dim), 0);
    long double m = 0;
    for (std::size_t t = b * block; t < std::min(n, (b + 1) * block); ++t) {
      const long double p = evaluate(t, state, y);
      m += p;
      for (Index a = 0; a < dim; ++a) s[static_cast<std::size_t>(a)] += p * y[a];
    }
    first[b] = std::move(s);
    mass[b] = m;
  });
  ExactMoments out;
  out.realizations = n;
  LVec mean(static_cast<std::size_t>(dim), 0);
  for (std::size_t b = 0; b < blocks; ++b) {
    out.total_probability += mass[b];
    for (Index a = 0; a < dim; ++a) mean[static_cast<std::size_t>(a)] += first[b][static_cast<std::size_t>(a)];
  }
  for (auto& v : mean) v /= out.total_probability;

  parallel_for(blocks, workers, [&](std::size_t b) {
    std::vector<std::size_t> state(positions);
    Vector y(dim);
    LVec s(static_cast<std::size_t>(dim * dim), 0);
    LVec centered(static_cast<std::size_t>(dim));
    for (std::size_t t = b * block; t < std::min(n, (b + 1) * block); ++t) {
      const long double p = evaluate(t, state, y);
      for (Index a = 0; a < dim; ++a) centered[static_cast<std::size_t>(a)] = y[a] - mean[static_cast<std::size_t>(a)];
      for (Index a = 0; a < dim; ++a) {
        const long double pa = p * centered[static_cast<std::size_t>(a)];
        for (Index e = a; e < dim; ++e) s[static_cast<std::size_t>(a * dim + e)] += pa * centered[static_cast<std::size_t>(e)];
      }
    }
    second[b] = std::move(s);
  });
  LVec cov(static_cast<std::size_t>(dim * dim), 0);
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t a = 0; a < cov.size(); ++a) cov[a] += second[b][a];
  }
  out.mean.resize(dim);
  out.cov.resize(dim, dim);
  for (Index a = 0; a < dim; ++a) {
    out.mean[a] = static_cast<double>(mean[static_cast<std::size_t>(a)]);
    for (Index e = a; e < dim; ++e) {
      out.cov(a, e) = out.cov(e, a) = static_cast<double>(cov[static_cast<std::size_t>(a * dim + e)] / out.total_probability);
    }
  }
  return out;
}

/// Cov[Q_i(first set), Q_j(second set)] for sets of sizes n and m sharing p
/// labeled positions.
inline Matrix exact_cov(const DiscreteCase& c, const EstimatorSpec& spec, std::size_t i, std::size_t j, std::size_t n,
                        std::size_t m, std::size_t p, std::size_t limit = kDefaultEnumerationLimit) {
  if (p > std::min(n, m)) throw std::invalid_argument("exact_cov: overlap exceeds a set size");
  const std::size_t positions = n + m - p;
  EstimateTerm a{i, {}, 1.0}, b{j, {}, 1.0};
  for (std::size_t k = 0; k < n; ++k) a.positions.push_back(k);
  for (std::size_t k = n - p; k < positions; ++k) b.positions.push_back(k);
  const ExactMoments mom = exact_moments(c, spec, positions, {{a}, {b}}, limit);
  const Index len = static_cast<Index>(spec.length());
  return mom.cov.block(0, len, len, len);
}

/// Requests for the stacked [Q_0; Delta_1; ...; Delta_K] of a plan.
inline std::vector<EstimateRequest> acv_requests(const SampleSetPlan& plan) {
  std::vector<EstimateRequest> req;
  req.push_back({EstimateTerm{0, plan.members(0), 1.0}});
  for (std::size_t i = 1; i <= plan.low_fidelity_models(); ++i) {
    req.push_back({EstimateTerm{i, plan.members(star_set(i)), 1.0}, EstimateTerm{i, plan.members(plain_set(i)), -1.0}});
  }
  return req;
}

/// Splits the covariance of [Q_0; Delta_1; ...; Delta_K] into its blocks.
inline AssembledSystem split_system(const Matrix& cov, Index len) {
  AssembledSystem s;
  const Index rest = cov.rows() - len;
  s.var_q = cov.topLeftCorner(len, len);
  s.cov_q_delta = cov.topRightCorner(len, rest);
  s.var_delta = cov.bottomRightCorner(rest, rest);
  return s;
}

/// Exact Var[Q_0], Cov[Q_0, Delta] and Var[Delta] for a plan.
inline AssembledSystem exact_system(const DiscreteCase& c, const EstimatorSpec& spec, const SampleSetPlan& plan,
                                    std::size_t limit = kDefaultEnumerationLimit) {
  const ExactMoments mom = exact_moments(c, spec, plan.total(), acv_requests(plan), limit);
  return split_system(mom.cov, static_cast<Index>(spec.length()));
}

/// Population pilot statistics of a discrete case (exact blocks).
inline PilotStatistics exact_pilot(const DiscreteCase& c, PilotNeeds needs, const std::vector<IndexSet>& index_sets = {}) {
  const detail::PositionStates st(c, needs.sensitivity ? index_sets : std::vector<IndexSet>{});
  std::vector<Evaluations> evals;
  for (std::size_t m = 0; m < c.models(); ++m) evals.push_back(Evaluations{st.base[m], st.paired[m]});
  Vector w(static_cast<Index>(st.count));
  for (std::size_t s = 0; s < st.count; ++s) w[static_cast<Index>(s)] = static_cast<double>(st.prob[s]);
  return estimate_pilot(evals, needs, needs.sensitivity ? index_sets : std::vector<IndexSet>{}, &w);
}

// ---------------------------------------------------------------------------
// Quadrature pilot for one-dimensional uniform inputs
// ---------------------------------------------------------------------------

/// Pilot blocks of a one-input ensemble on U(low, high) by composite 20-point
/// Gauss-Legendre quadrature. Only the full index set {0} is meaningful for
/// sensitivity blocks, where the companion coincides with the base input.
inline PilotStatistics quadrature_pilot(const ModelEnsemble& e, const std::vector<std::size_t>& cols, PilotNeeds needs,
                                        const std::vector<IndexSet>& index_sets = {}, std::size_t panels = 256) {
  const auto* dist = std::get_if<InputDistribution>(&e.source);
  if (!dist || dist->dimension() != 1 || !std::holds_alternative<Uniform>(dist->marginals()[0])) {
    throw std::invalid_argument("quadrature_pilot: needs a single uniform input");
  }
  for (const auto& u : index_sets) {
    if (u != IndexSet{0}) throw std::invalid_argument("quadrature_pilot: only the index set {0} is supported");
  }
  const auto& uni = std::get<Uniform>(dist->marginals()[0]);
  using Rule = boost::math::quadrature::gauss<double, 20>;
  std::vector<double> x, w;
  const double h = (uni.high - uni.low) / static_cast<double>(panels);
  for (std::size_t p = 0; p < panels; ++p) {
    const double mid = uni.low + (static_cast<double>(p) + 0.5) * h;
    const auto& ab = Rule::abscissa();
    const auto& wt = Rule::weights();
    for (std::size_t k = 0; k < ab.size(); ++k) {
      // Rule nodes are stored for the nonnegative half of [-1, 1].
      const double weight = wt[k] * 0.5 / static_cast<double>(panels);
      x.push_back(mid + 0.5 * h * ab[k]);
      w.push_back(weight);
      if (ab[k] != 0.0) {
        x.push_back(mid - 0.5 * h * ab[k]);
        w.push_back(weight);
      }
    }
  }
  Samples s;
  s.inputs = Eigen::Map<const Vector>(x.data(), static_cast<Index>(x.size()));
  const Vector weights = Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size())) / Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size())).sum();
  std::vector<Samples> comps(needs.sensitivity ? index_sets.size() : 0, s);
  std::vector<Evaluations> evals;
  for (const auto& m : e.models) evals.push_back(evaluate_model(*m, s, comps, cols));
  return estimate_pilot(evals, needs, needs.sensitivity ? index_sets : std::vector<IndexSet>{}, &weights);
}

// ---------------------------------------------------------------------------
// Replication
// ---------------------------------------------------------------------------

/// Evaluations of every model of a plan on one realization: model 0 on Z_0,
/// model i on Z_i* u Z_i (rows kept in global order).
struct PlanEvaluation {
  std::vector<std::vector<std::size_t>> rows;
  std::vector<Evaluations> evals;
};

inline PlanEvaluation evaluate_plan(const ModelEnsemble& e, const std::vector<std::size_t>& cols,
                                    const std::vector<IndexSet>& index_sets, const SampleSetPlan& plan,
                                    std::uint64_t seed, std::uint64_t stream) {
  const std::size_t k = plan.low_fidelity_models();
  if (e.size() < k + 1) throw std::invalid_argument("simulate: plan uses more models than the ensemble has");
  const PlanRealization real = realize_plan(plan, e.source, index_sets, seed, stream);
  PlanEvaluation pe;
  for (std::size_t m = 0; m <= k; ++m) {
    pe.rows.push_back(m == 0 ? plan.members(0) : plan.model_union(m));
    std::vector<Samples> comps;
    for (const auto& c : real.companions) comps.push_back(c.select(pe.rows.back()));
    pe.evals.push_back(evaluate_model(*e.models[m], real.base.select(pe.rows.back()), comps, cols));
  }
  return pe;
}

/// Restriction of evaluations to some output columns and companion sets.
inline Evaluations project(const Evaluations& ev, const std::vector<std::size_t>& cols,
                           const std::vector<std::size_t>& sets) {
  Evaluations out;
  out.base.resize(ev.base.rows(), static_cast<Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.base.col(static_cast<Index>(c)) = ev.base.col(static_cast<Index>(cols.at(c)));
  for (std::size_t u : sets) out.paired.push_back(ev.paired.at(u));
  return out;
}

/// Per-set estimates of `spec` from a plan evaluation, using columns `cols`
/// and companion sets `sets` of the evaluated data.
inline AcvInputs acv_inputs(const EstimatorSpec& spec, const SampleSetPlan& plan, const PlanEvaluation& pe,
                            const std::vector<std::size_t>& cols, const std::vector<std::size_t>& sets) {
  AcvInputs in;
  in.high = stacked_estimate_values(spec, project(pe.evals[0], cols, sets));
  for (std::size_t i = 1; i <= plan.low_fidelity_models(); ++i) {
    const auto& rows = pe.rows[i];
    const Evaluations ev = project(pe.evals[i], cols, sets);
    auto local = [&](const std::vector<std::size_t>& set) {
      std::vector<std::size_t> idx;
      idx.reserve(set.size());
      for (std::size_t g : set) idx.push_back(static_cast<std::size_t>(std::lower_bound(rows.begin(), rows.end(), g) - rows.begin()));
      return ev.select(idx);
    };
    in.starred.push_back(stacked_estimate_values(spec, local(plan.members(star_set(i)))));
    in.plain.push_back(stacked_estimate_values(spec, local(plan.members(plain_set(i)))));
  }
  return in;
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

/// Estimates of one realization of a plan: Q_0 on Z_0 and Q_i on Z_i*, Z_i.
inline AcvInputs simulate_acv_inputs(const ModelEnsemble& e, const std::vector<std::size_t>& cols,
                                     const EstimatorSpec& spec, const SampleSetPlan& plan, std::uint64_t seed,
                                     std::uint64_t stream) {
  const bool sens = uses_sensitivity(spec.family);
  const auto& sets = sens ? spec.index_sets : std::vector<IndexSet>{};
  const PlanEvaluation pe = evaluate_plan(e, cols, sets, plan, seed, stream);
  return acv_inputs(spec, plan, pe, iota_indices(cols.size()), iota_indices(sets.size()));
}

/// Stacked [Q_0; Delta_1; ...; Delta_K] of one realization.
inline Vector stacked_discrepancies(const AcvInputs& in) {
  const Index len = in.high.size();
  Vector y(len * static_cast<Index>(1 + in.plain.size()));
  y.head(len) = in.high;
  for (std::size_t i = 0; i < in.plain.size(); ++i) y.segment(len * static_cast<Index>(i + 1), len) = in.starred[i] - in.plain[i];
  return y;
}

struct ReplicationReport {
  std::size_t replicates = 0;
  Matrix samples;  // one replicate per row
  Vector mean;
  Matrix cov;
  Matrix se;       // jackknife standard error of each covariance entry
  Vector mean_se;  // standard error of each mean
};

/// Sample mean and covariance of the rows of `y`, with jackknife standard
/// errors for every covariance entry.
inline ReplicationReport summarize_replicates(Matrix y) {
  ReplicationReport r;
  const Index n = y.rows(), d = y.cols();
  r.replicates = static_cast<std::size_t>(n);
  r.mean = n > 0 ? Vector(y.colwise().mean().transpose()) : Vector::Zero(d);
  r.cov = Matrix::Zero(d, d);
  r.se = Matrix::Zero(d, d);
  r.mean_se = Vector::Zero(d);
  if (n >= 2) {
    const Matrix c = y.rowwise() - r.mean.transpose();
    r.cov = (c.transpose() * c) / static_cast<double>(n - 1);
    for (Index a = 0; a < d; ++a) r.mean_se[a] = std::sqrt(r.cov(a, a) / static_cast<double>(n));
    if (n >= 3) {
      // Leave-one-out covariances are (sum d - n/(n-1) d_r) / (n-2) with
      // d_r the centered cross products.
      const double nn = static_cast<double>(n);
      const double scale = (nn - 1.0) / nn * std::pow(nn / (nn - 1.0) / (nn - 2.0), 2);
      for (Index a = 0; a < d; ++a) {
        for (Index b = a; b < d; ++b) {
          const Vector prod = c.col(a).cwiseProduct(c.col(b));
          const double avg = prod.mean();
          const double ss = (prod.array() - avg).square().sum();
          r.se(a, b) = r.se(b, a) = std::sqrt(scale * ss);
        }
      }
    }
  }
  r.samples = std::move(y);
  return r;
}

/// Empirical covariance of [Q_0; Delta] over R independent realizations of
/// the plan; replicate r uses stream r, so results do not depend on the
/// number of workers.
inline ReplicationReport replicate_cov(const ModelEnsemble& e, const std::vector<std::size_t>& cols,
                                       const EstimatorSpec& spec, const SampleSetPlan& plan, std::size_t replicates,
                                       std::uint64_t seed, std::size_t workers = 0) {
  spec.validate();
  const Index dim = static_cast<Index>(spec.length() * (1 + plan.low_fidelity_models()));
  Matrix y(static_cast<Index>(replicates), dim);
  parallel_for(replicates, workers, [&](std::size_t r) {
    y.row(static_cast<Index>(r)) = stacked_discrepancies(simulate_acv_inputs(e, cols, spec, plan, seed, r)).transpose();
  });
  return summarize_replicates(std::move(y));
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

inline nlohmann::json oracle_fixture(const std::string& name, const EstimatorSpec& spec, const Matrix& value,
                                     const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json j;
  j["format"] = "mfacv-oracle";
  j["version"] = 1;
  j["name"] = name;
  j["family"] = to_string(spec.family);
  j["outputs"] = spec.outputs;
  j["index_sets"] = spec.index_sets;
  j["value"] = matrix_to_json(value);
  j["meta"] = meta;
  return j;
}

inline Matrix fixture_value(const nlohmann::json& j) {
  if (j.value("format", "") != "mfacv-oracle") throw std::invalid_argument("not an oracle fixture");
  return matrix_from_json(j.at("value"));
}

}  // namespace mfacv
