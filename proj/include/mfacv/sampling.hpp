#pragma once

#include "mfacv/rng.hpp"
#include "mfacv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

namespace mfacv {

// ---------------------------------------------------------------------------
// Input distributions
// ---------------------------------------------------------------------------

struct Uniform {
  double low = 0.0;
  double high = 1.0;
};

struct Discrete {
  std::vector<double> atoms;
  std::vector<double> probabilities;
};

struct StandardNormal {};

using Marginal = std::variant<Uniform, Discrete, StandardNormal>;

/// Product distribution of independent marginals over R^I.
class InputDistribution {
 public:
  InputDistribution() = default;

  explicit InputDistribution(std::vector<Marginal> marginals) : marginals_(std::move(marginals)) {
    if (marginals_.empty()) throw std::invalid_argument("InputDistribution: dimension must be >= 1");
    for (const auto& m : marginals_) validate(m);
  }

  static InputDistribution uniform_cube(std::size_t dimension, double low = 0.0, double high = 1.0) {
    return InputDistribution(std::vector<Marginal>(dimension, Uniform{low, high}));
  }

  std::size_t dimension() const { return marginals_.size(); }
  const std::vector<Marginal>& marginals() const { return marginals_; }

  double draw_component(std::size_t column, Rng& rng) const {
    return std::visit(
        [&rng](const auto& m) -> double {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, Uniform>) {
            return std::uniform_real_distribution<double>(m.low, m.high)(rng);
          } else if constexpr (std::is_same_v<T, Discrete>) {
            std::discrete_distribution<std::size_t> pick(m.probabilities.begin(), m.probabilities.end());
            return m.atoms[pick(rng)];
          } else {
            return std::normal_distribution<double>(0.0, 1.0)(rng);
          }
        },
        marginals_.at(column));
  }

 private:
  static void validate(const Marginal& m) {
    if (const auto* u = std::get_if<Uniform>(&m)) {
      if (!(u->low < u->high)) throw std::invalid_argument("uniform marginal needs low < high");
    } else if (const auto* d = std::get_if<Discrete>(&m)) {
      if (d->atoms.empty() || d->atoms.size() != d->probabilities.size()) {
        throw std::invalid_argument("discrete marginal needs matching atoms and probabilities");
      }
      double total = 0.0;
      for (double p : d->probabilities) {
        if (!(p >= 0.0)) throw std::invalid_argument("discrete marginal has a negative probability");
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("discrete probabilities must sum to 1");
    }
  }

  std::vector<Marginal> marginals_;
};

/// Finite design (e.g. precomputed simulator inputs). Rows are drawn uniformly
/// with replacement and samples remember which row they came from.
class DesignTable {
 public:
  DesignTable() = default;
  explicit DesignTable(Matrix rows) : rows_(std::move(rows)) {
    if (rows_.rows() == 0 || rows_.cols() == 0) throw std::invalid_argument("DesignTable: empty design");
  }
  std::size_t dimension() const { return static_cast<std::size_t>(rows_.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(rows_.rows()); }
  const Matrix& rows() const { return rows_; }

 private:
  Matrix rows_;
};

using SampleSource = std::variant<InputDistribution, DesignTable>;

inline std::size_t source_dimension(const SampleSource& source) {
  return std::visit([](const auto& s) { return s.dimension(); }, source);
}

/// Input rows plus, for design-backed sources, the design row of each sample.
struct Samples {
  Matrix inputs;
  std::vector<std::int64_t> rows;

  Index size() const { return inputs.rows(); }

  Samples select(const std::vector<std::size_t>& which) const {
    Samples out;
    out.inputs.resize(static_cast<Index>(which.size()), inputs.cols());
    for (std::size_t k = 0; k < which.size(); ++k) out.inputs.row(static_cast<Index>(k)) = inputs.row(static_cast<Index>(which[k]));
    if (!rows.empty()) {
      out.rows.reserve(which.size());
      for (std::size_t k : which) out.rows.push_back(rows[k]);
    }
    return out;
  }
};

namespace detail {

inline void draw_rows_into(const SampleSource& source, Samples& out, Index first, Index count, Rng& rng) {
  if (const auto* dist = std::get_if<InputDistribution>(&source)) {
    for (Index r = first; r < first + count; ++r) {
      for (Index c = 0; c < out.inputs.cols(); ++c) {
        out.inputs(r, c) = dist->draw_component(static_cast<std::size_t>(c), rng);
      }
    }
  } else {
    const auto& design = std::get<DesignTable>(source);
    std::uniform_int_distribution<std::int64_t> pick(0, static_cast<std::int64_t>(design.size()) - 1);
    for (Index r = first; r < first + count; ++r) {
      const std::int64_t row = pick(rng);
      out.inputs.row(r) = design.rows().row(row);
      out.rows[static_cast<std::size_t>(r)] = row;
    }
  }
}

inline Samples empty_samples(const SampleSource& source, Index n) {
  Samples s;
  s.inputs.resize(n, static_cast<Index>(source_dimension(source)));
  if (std::holds_alternative<DesignTable>(source)) s.rows.assign(static_cast<std::size_t>(n), 0);
  return s;
}

}  // namespace detail

inline Samples draw_samples(const SampleSource& source, std::size_t n, Rng& rng) {
  Samples out = detail::empty_samples(source, static_cast<Index>(n));
  detail::draw_rows_into(source, out, 0, static_cast<Index>(n), rng);
  return out;
}

/// n i.i.d. rows; deterministic given the seed.
inline Samples draw_samples(const SampleSource& source, std::size_t n, std::uint64_t seed) {
  Rng rng = substream(seed, {0});
  return draw_samples(source, n, rng);
}

// ---------------------------------------------------------------------------
// Sobol paired samples
// ---------------------------------------------------------------------------

using IndexSet = std::vector<std::size_t>;

/// Base set Z and, per index subset u, a companion set Y_u that copies the
/// columns in u from Z and redraws every other column independently.
struct SobolPairedSamples {
  Samples base;
  std::vector<IndexSet> index_sets;
  std::vector<Samples> companions;
};

inline void validate_index_sets(const std::vector<IndexSet>& sets, std::size_t dimension) {
  for (const auto& u : sets) {
    if (u.empty()) throw std::invalid_argument("index subset must be nonempty");
    for (std::size_t k : u) {
      if (k >= dimension) {
        throw std::out_of_range("input index " + std::to_string(k) + " out of range for dimension " +
                                std::to_string(dimension));
      }
    }
  }
}

inline Samples draw_companion(const SampleSource& source, const Samples& base, const IndexSet& keep, Rng& rng) {
  const auto dim = source_dimension(source);
  Samples out = base;
  if (const auto* dist = std::get_if<InputDistribution>(&source)) {
    std::vector<bool> kept(dim, false);
    for (std::size_t k : keep) kept[k] = true;
    for (Index r = 0; r < base.size(); ++r) {
      for (std::size_t c = 0; c < dim; ++c) {
        if (!kept[c]) out.inputs(r, static_cast<Index>(c)) = dist->draw_component(c, rng);
      }
    }
  } else {
    std::vector<std::size_t> sorted = keep;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    if (sorted.size() != dim) {
      throw std::invalid_argument("design-backed sources only support index subsets covering every input");
    }
  }
  return out;
}

inline SobolPairedSamples draw_sobol_pairs(const SampleSource& source, std::size_t n,
                                           const std::vector<IndexSet>& index_sets, std::uint64_t seed) {
  validate_index_sets(index_sets, source_dimension(source));
  SobolPairedSamples out;
  out.index_sets = index_sets;
  out.base = draw_samples(source, n, seed);
  for (std::size_t u = 0; u < index_sets.size(); ++u) {
    Rng rng = substream(seed, {1, u});
    out.companions.push_back(draw_companion(source, out.base, index_sets[u], rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sample-set plans and overlap ledgers
// ---------------------------------------------------------------------------

// Set numbering: 0 is Z_0; low-fidelity model i >= 1 owns Z_i* (2i - 1) and
// Z_i (2i). For model 0 both starred and plain refer to Z_0.
constexpr std::size_t star_set(std::size_t model) { return model == 0 ? 0 : 2 * model - 1; }
constexpr std::size_t plain_set(std::size_t model) { return model == 0 ? 0 : 2 * model; }
constexpr std::size_t set_count(std::size_t low_fidelity_models) { return 2 * low_fidelity_models + 1; }

/// Pairwise intersection counts between all 2K+1 sample sets. `Count` is an
/// integer type for realized plans or `double` for continuous relaxations.
template <class Count>
class BasicOverlapLedger {
 public:
  BasicOverlapLedger() = default;

  BasicOverlapLedger(std::size_t low_fidelity_models, std::vector<Count> counts)
      : models_(low_fidelity_models), counts_(std::move(counts)) {
    const std::size_t s = set_count(models_);
    if (counts_.size() != s * s) throw std::invalid_argument("ledger: count matrix has the wrong size");
    for (std::size_t a = 0; a < s; ++a) {
      if (counts_[a * s + a] < Count(0)) throw std::invalid_argument("ledger: negative set size");
      for (std::size_t b = 0; b < s; ++b) {
        const Count v = counts_[a * s + b];
        if (v != counts_[b * s + a]) throw std::invalid_argument("ledger: intersections must be symmetric");
        if (v < Count(0) || v > std::min(counts_[a * s + a], counts_[b * s + b])) {
          throw std::invalid_argument("ledger: intersection exceeds a set size");
        }
      }
    }
  }

  std::size_t low_fidelity_models() const { return models_; }

  Count set_size(std::size_t set) const { return counts_.at(set * set_count(models_) + set); }
  Count overlap(std::size_t a, std::size_t b) const { return counts_.at(a * set_count(models_) + b); }

  Count n0() const { return set_size(0); }
  Count n(std::size_t model) const { return set_size(plain_set(model)); }
  Count n_star(std::size_t model) const { return set_size(star_set(model)); }

  const std::vector<Count>& counts() const { return counts_; }

  template <class Other>
  BasicOverlapLedger<Other> cast() const {
    std::vector<Other> c(counts_.begin(), counts_.end());
    return BasicOverlapLedger<Other>(models_, std::move(c));
  }

  friend bool operator==(const BasicOverlapLedger& a, const BasicOverlapLedger& b) {
    return a.models_ == b.models_ && a.counts_ == b.counts_;
  }

 private:
  std::size_t models_ = 0;
  std::vector<Count> counts_;
};

using OverlapLedger = BasicOverlapLedger<std::int64_t>;
using RelaxedLedger = BasicOverlapLedger<double>;

/// Membership of each of the 2K+1 sets over `total` globally indexed samples.
class SampleSetPlan {
 public:
  SampleSetPlan() = default;

  SampleSetPlan(std::size_t low_fidelity_models, std::size_t total, std::vector<std::vector<std::size_t>> members)
      : models_(low_fidelity_models), total_(total), members_(std::move(members)) {
    if (members_.size() != set_count(models_)) throw std::invalid_argument("plan: wrong number of sets");
    for (auto& m : members_) {
      if (!std::is_sorted(m.begin(), m.end()) || std::adjacent_find(m.begin(), m.end()) != m.end()) {
        throw std::invalid_argument("plan: inconsistent membership (set indices must be sorted and unique)");
      }
      if (!m.empty() && m.back() >= total_) throw std::invalid_argument("plan: inconsistent membership (index out of range)");
    }
  }

  std::size_t low_fidelity_models() const { return models_; }
  std::size_t total() const { return total_; }
  const std::vector<std::size_t>& members(std::size_t set) const { return members_.at(set); }

  /// Samples model `model` must be evaluated on: Z_i* union Z_i.
  std::vector<std::size_t> model_union(std::size_t model) const {
    std::vector<std::size_t> out;
    const auto& a = members(star_set(model));
    const auto& b = members(plain_set(model));
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
  }

  /// Lowest-numbered set containing each global sample; the owner's
  /// substream generates that sample. Samples in no set get npos.
  std::vector<std::size_t> owners() const {
    std::vector<std::size_t> own(total_, npos);
    for (std::size_t s = members_.size(); s-- > 0;) {
      for (std::size_t g : members_[s]) own[g] = s;
    }
    return own;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::size_t models_ = 0;
  std::size_t total_ = 0;
  std::vector<std::vector<std::size_t>> members_;
};

inline OverlapLedger ledger_from_membership(const SampleSetPlan& plan) {
  const std::size_t s = set_count(plan.low_fidelity_models());
  std::vector<std::int64_t> counts(s * s, 0);
  std::vector<std::size_t> scratch;
  for (std::size_t a = 0; a < s; ++a) {
    for (std::size_t b = a; b < s; ++b) {
      scratch.clear();
      const auto& x = plan.members(a);
      const auto& y = plan.members(b);
      std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(scratch));
      counts[a * s + b] = counts[b * s + a] = static_cast<std::int64_t>(scratch.size());
    }
  }
  return OverlapLedger(plan.low_fidelity_models(), std::move(counts));
}

enum class Scheme {
  /// Z_i* = Z_0; each Z_i is fresh and disjoint from every other set.
  AcvIs,
  /// Z_i* = Z_0; Z_i = Z_0 plus fresh samples private to model i.
  AcvIsNested,
};

inline std::string to_string(Scheme s) { return s == Scheme::AcvIs ? "acv-is" : "acv-is-nested"; }

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "acv-is") return Scheme::AcvIs;
  if (s == "acv-is-nested") return Scheme::AcvIsNested;
  throw std::invalid_argument("unknown sampling scheme '" + s + "'");
}

/// Ledger of an ACV-IS style scheme from N_0 and the per-model fresh counts.
/// A model with zero fresh samples is still listed; callers decide whether
/// to drop it.
template <class Count>
BasicOverlapLedger<Count> acv_is_ledger(Count n0, const std::vector<Count>& fresh, Scheme scheme) {
  const std::size_t k = fresh.size();
  const std::size_t s = set_count(k);
  std::vector<Count> c(s * s, Count(0));
  auto at = [&](std::size_t a, std::size_t b) -> Count& { return c[a * s + b]; };
  const bool nested = scheme == Scheme::AcvIsNested;
  at(0, 0) = n0;
  for (std::size_t i = 1; i <= k; ++i) {
    const std::size_t si = star_set(i);
    const std::size_t pi = plain_set(i);
    at(si, si) = n0;
    at(pi, pi) = nested ? n0 + fresh[i - 1] : fresh[i - 1];
    at(0, si) = at(si, 0) = n0;
    at(0, pi) = at(pi, 0) = nested ? n0 : Count(0);
    at(si, pi) = at(pi, si) = nested ? n0 : Count(0);
    for (std::size_t j = 1; j < i; ++j) {
      const std::size_t sj = star_set(j);
      const std::size_t pj = plain_set(j);
      const Count shared = nested ? n0 : Count(0);
      at(si, sj) = at(sj, si) = n0;
      at(si, pj) = at(pj, si) = shared;
      at(pi, sj) = at(sj, pi) = shared;
      at(pi, pj) = at(pj, pi) = shared;
    }
  }
  return BasicOverlapLedger<Count>(k, std::move(c));
}

/// ACV-IS with disjoint fresh sets: Z_i* = Z_0 (n0 samples) and Z_i made of
/// n[i-1] samples not shared with any other set.
inline std::pair<SampleSetPlan, OverlapLedger> build_acv_is_plan(std::size_t n0, const std::vector<std::size_t>& n) {
  if (n0 == 0) throw std::invalid_argument("build_acv_is_plan: n0 must be >= 1");
  const std::size_t k = n.size();
  std::vector<std::vector<std::size_t>> members(set_count(k));
  std::vector<std::size_t> z0(n0);
  std::iota(z0.begin(), z0.end(), std::size_t{0});
  members[0] = z0;
  std::size_t next = n0;
  for (std::size_t i = 1; i <= k; ++i) {
    members[star_set(i)] = z0;
    auto& zi = members[plain_set(i)];
    zi.resize(n[i - 1]);
    std::iota(zi.begin(), zi.end(), next);
    next += n[i - 1];
  }
  SampleSetPlan plan(k, next, std::move(members));
  std::vector<std::int64_t> fresh(n.begin(), n.end());
  auto ledger = acv_is_ledger<std::int64_t>(static_cast<std::int64_t>(n0), fresh, Scheme::AcvIs);
  return {std::move(plan), std::move(ledger)};
}

/// Nested ACV-IS: Z_i* = Z_0 and Z_i = Z_0 plus (n_total[i-1] - n0) private
/// samples, so n_total counts every evaluation of model i.
inline std::pair<SampleSetPlan, OverlapLedger> build_acv_is_nested_plan(std::size_t n0,
                                                                        const std::vector<std::size_t>& n_total) {
  if (n0 == 0) throw std::invalid_argument("build_acv_is_nested_plan: n0 must be >= 1");
  const std::size_t k = n_total.size();
  std::vector<std::vector<std::size_t>> members(set_count(k));
  std::vector<std::size_t> z0(n0);
  std::iota(z0.begin(), z0.end(), std::size_t{0});
  members[0] = z0;
  std::size_t next = n0;
  std::vector<std::int64_t> fresh;
  for (std::size_t i = 1; i <= k; ++i) {
    if (n_total[i - 1] < n0) throw std::invalid_argument("nested ACV-IS needs N_i >= N_0");
    const std::size_t extra = n_total[i - 1] - n0;
    members[star_set(i)] = z0;
    auto& zi = members[plain_set(i)];
    zi = z0;
    for (std::size_t e = 0; e < extra; ++e) zi.push_back(next + e);
    next += extra;
    fresh.push_back(static_cast<std::int64_t>(extra));
  }
  SampleSetPlan plan(k, next, std::move(members));
  auto ledger = acv_is_ledger<std::int64_t>(static_cast<std::int64_t>(n0), fresh, Scheme::AcvIsNested);
  return {std::move(plan), std::move(ledger)};
}

inline std::pair<SampleSetPlan, OverlapLedger> build_plan(Scheme scheme, std::size_t n0,
                                                          const std::vector<std::size_t>& fresh) {
  if (scheme == Scheme::AcvIs) return build_acv_is_plan(n0, fresh);
  std::vector<std::size_t> total(fresh);
  for (auto& t : total) t += n0;
  return build_acv_is_nested_plan(n0, total);
}

// ---------------------------------------------------------------------------
// Realizing a plan
// ---------------------------------------------------------------------------

/// Inputs for every global sample of a plan, plus Sobol companions when the
/// estimator needs them.
struct PlanRealization {
  Samples base;
  std::vector<Samples> companions;
};

/// Each set draws the samples it owns from substream (seed, stream, set), and
/// companions from (seed, stream, set, 1 + u), so a set's inputs do not
/// depend on the evaluation order of the others.
inline PlanRealization realize_plan(const SampleSetPlan& plan, const SampleSource& source,
                                    const std::vector<IndexSet>& index_sets, std::uint64_t seed,
                                    std::uint64_t stream) {
  validate_index_sets(index_sets, source_dimension(source));
  PlanRealization out;
  out.base = detail::empty_samples(source, static_cast<Index>(plan.total()));
  const auto owners = plan.owners();
  const std::size_t sets = set_count(plan.low_fidelity_models());
  std::vector<std::vector<std::size_t>> owned(sets);
  for (std::size_t g = 0; g < owners.size(); ++g) {
    if (owners[g] != SampleSetPlan::npos) owned[owners[g]].push_back(g);
  }
  for (std::size_t s = 0; s < sets; ++s) {
    if (owned[s].empty()) continue;
    Rng rng = substream(seed, {stream, s});
    Samples chunk = detail::empty_samples(source, static_cast<Index>(owned[s].size()));
    detail::draw_rows_into(source, chunk, 0, chunk.size(), rng);
    for (std::size_t k = 0; k < owned[s].size(); ++k) {
      out.base.inputs.row(static_cast<Index>(owned[s][k])) = chunk.inputs.row(static_cast<Index>(k));
      if (!chunk.rows.empty()) out.base.rows[owned[s][k]] = chunk.rows[k];
    }
  }
  for (std::size_t u = 0; u < index_sets.size(); ++u) {
    Samples comp = out.base;
    for (std::size_t s = 0; s < sets; ++s) {
      if (owned[s].empty()) continue;
      Rng rng = substream(seed, {stream, s, 1 + u});
      Samples part = draw_companion(source, out.base.select(owned[s]), index_sets[u], rng);
      for (std::size_t k = 0; k < owned[s].size(); ++k) {
        comp.inputs.row(static_cast<Index>(owned[s][k])) = part.inputs.row(static_cast<Index>(k));
      }
    }
    out.companions.push_back(std::move(comp));
  }
  return out;
}

}  // namespace mfacv
