#pragma once

#include "mfacv/acv.hpp"
#include "mfacv/allocator.hpp"
#include "mfacv/kernels.hpp"
#include "mfacv/models.hpp"
#include "mfacv/oracle.hpp"
#include "mfacv/parallel.hpp"
#include "mfacv/pilot.hpp"
#include "mfacv/subprocess.hpp"
#include "mfacv/tabulated.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mfacv {

inline constexpr const char* kLibraryVersion = "0.1.0";

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out += hex[digest[k] >> 4];
    out += hex[digest[k] & 15];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class StatisticGroup { MeanVariance, Sensitivity };

struct PilotConfig {
  std::string mode = "samples";  // samples | quadrature | file
  std::size_t samples = 1000;
  std::uint64_t seed = 2;
  std::string path;
};

struct SweepConfig {
  Family family = Family::Mean;
  std::vector<std::size_t> pilot_counts{5, 10, 25, 50, 100};
  std::vector<std::size_t> output_counts{1, 5, 10};
  std::size_t trials = 300;
  double percentile = 5.0;
  std::size_t reference_samples = 1000000;
};

struct StudyConfig {
  nlohmann::json raw;
  std::filesystem::path base_dir = ".";
  std::string name = "study";

  nlohmann::json suite;
  std::vector<double> costs;  // overrides the suite's costs when nonempty

  std::vector<std::size_t> outputs;
  StatisticGroup statistics = StatisticGroup::MeanVariance;
  std::vector<IndexSet> index_sets;
  Scheme scheme = Scheme::AcvIs;
  SingularPolicy policy = SingularPolicy::Deduplicate;

  std::optional<double> budget;
  std::optional<std::pair<std::int64_t, std::vector<std::int64_t>>> fixed_allocation;
  Family objective_family = Family::Mean;
  std::vector<std::size_t> objective_outputs{0};
  std::vector<IndexSet> objective_index_sets;
  OptimizerOptions optimizer;

  PilotConfig pilot;
  std::size_t replications = 2000;
  std::uint64_t seed = 1;
  std::size_t workers = 0;
  std::string output_dir = "study-out";
  std::vector<double> sobol_truth;
  SweepConfig sweep;
};

namespace detail {

inline std::vector<IndexSet> index_sets_from_json(const nlohmann::json& j) {
  std::vector<IndexSet> out;
  for (const auto& u : j) out.push_back(u.get<IndexSet>());
  return out;
}

inline Marginal marginal_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "uniform") return Uniform{j.value("low", 0.0), j.value("high", 1.0)};
  if (type == "discrete") return Discrete{j.at("atoms").get<std::vector<double>>(), j.at("probabilities").get<std::vector<double>>()};
  if (type == "normal") return StandardNormal{};
  throw std::invalid_argument("unknown marginal type '" + type + "'");
}

inline InputDistribution distribution_from_json(const nlohmann::json& j) {
  if (j.is_object() && j.value("type", "") == "uniform-cube") {
    return InputDistribution::uniform_cube(j.at("dimension").get<std::size_t>(), j.value("low", 0.0), j.value("high", 1.0));
  }
  if (!j.is_array()) throw std::invalid_argument("inputs: expected a list of marginals or a uniform-cube object");
  std::vector<Marginal> m;
  for (const auto& e : j) m.push_back(marginal_from_json(e));
  return InputDistribution(std::move(m));
}

}  // namespace detail

inline StudyConfig parse_study_config(const nlohmann::json& j, const std::filesystem::path& base_dir = ".") {
  StudyConfig c;
  c.raw = j;
  c.base_dir = base_dir;
  c.name = j.value("name", c.name);
  c.suite = j.at("suite");
  if (j.contains("costs")) c.costs = j["costs"].get<std::vector<double>>();
  c.outputs = j.value("outputs", std::vector<std::size_t>{0});
  if (c.outputs.empty()) throw std::invalid_argument("config: outputs must be nonempty");
  const std::string stats = j.value("statistics", "mean-variance");
  if (stats == "mean-variance") {
    c.statistics = StatisticGroup::MeanVariance;
  } else if (stats == "sensitivity") {
    c.statistics = StatisticGroup::Sensitivity;
    if (c.outputs.size() != 1) throw std::invalid_argument("config: sensitivity studies use exactly one output");
    c.index_sets = detail::index_sets_from_json(j.at("index_sets"));
    if (c.index_sets.empty()) throw std::invalid_argument("config: sensitivity studies need index_sets");
  } else {
    throw std::invalid_argument("config: statistics must be 'mean-variance' or 'sensitivity'");
  }
  c.scheme = scheme_from_string(j.value("scheme", "acv-is"));
  c.policy = singular_policy_from_string(j.value("singular_policy", "deduplicate"));
  if (j.contains("budget")) c.budget = j["budget"].get<double>();
  if (j.contains("allocation")) {
    const auto& a = j["allocation"];
    c.fixed_allocation = std::make_pair(a.at("n0").get<std::int64_t>(), a.at("fresh").get<std::vector<std::int64_t>>());
  } else if (!c.budget) {
    throw std::invalid_argument("config: give either a fixed allocation or a budget");
  }
  if (j.contains("objective")) {
    const auto& o = j["objective"];
    c.objective_family = family_from_string(o.value("family", "M"));
    c.objective_outputs = o.value("outputs", std::vector<std::size_t>{c.outputs[0]});
    if (o.contains("index_sets")) c.objective_index_sets = detail::index_sets_from_json(o["index_sets"]);
  } else {
    c.objective_outputs = {c.outputs[0]};
    if (c.statistics == StatisticGroup::Sensitivity) {
      c.objective_family = Family::MainEffect;
      c.objective_index_sets = {c.index_sets[0]};
    }
  }
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    c.optimizer.starts = o.value("starts", c.optimizer.starts);
    c.optimizer.seed = o.value("seed", c.optimizer.seed);
    c.optimizer.max_iterations = o.value("max_iterations", c.optimizer.max_iterations);
  }
  if (j.contains("pilot")) {
    const auto& p = j["pilot"];
    c.pilot.mode = p.value("mode", c.pilot.mode);
    c.pilot.samples = p.value("samples", c.pilot.samples);
    c.pilot.seed = p.value("seed", c.pilot.seed);
    c.pilot.path = p.value("path", std::string{});
    if (c.pilot.mode != "samples" && c.pilot.mode != "quadrature" && c.pilot.mode != "file") {
      throw std::invalid_argument("config: pilot.mode must be samples, quadrature or file");
    }
  }
  c.replications = j.value("replications", c.replications);
  if (c.replications == 0) throw std::invalid_argument("config: replications must be positive");
  c.seed = j.value("seed", c.seed);
  c.workers = j.value("workers", c.workers);
  c.output_dir = j.value("output_dir", c.output_dir);
  c.sobol_truth = j.value("sobol_truth", std::vector<double>{});
  if (!c.sobol_truth.empty() && c.sobol_truth.size() != c.index_sets.size()) {
    throw std::invalid_argument("config: sobol_truth needs one value per index set");
  }
  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    c.sweep.family = family_from_string(s.value("family", "M"));
    c.sweep.pilot_counts = s.value("pilot_counts", c.sweep.pilot_counts);
    c.sweep.output_counts = s.value("output_counts", c.sweep.output_counts);
    c.sweep.trials = s.value("trials", c.sweep.trials);
    c.sweep.percentile = s.value("percentile", c.sweep.percentile);
    c.sweep.reference_samples = s.value("reference_samples", c.sweep.reference_samples);
  }
  return c;
}

inline StudyConfig load_study_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config '" + path + "': " + e.what());
  }
  return parse_study_config(j, std::filesystem::path(path).parent_path());
}

/// Canonical config hash: compact dump of the parsed JSON (keys sorted).
inline std::string config_hash(const StudyConfig& c) { return sha256_hex(c.raw.dump()); }

inline ModelEnsemble build_ensemble(const StudyConfig& c) {
  const auto& s = c.suite;
  const std::string type = s.at("type").get<std::string>();
  ModelEnsemble e;
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return (path.is_absolute() ? path : c.base_dir / path).string();
  };
  if (type == "builtin") {
    e = builtin_suite(s.at("name").get<std::string>());
  } else if (type == "tabulated") {
    e = load_tabulated_models(resolve(s.at("path").get<std::string>()));
  } else if (type == "subprocess") {
    e.name = s.value("name", "subprocess");
    for (const auto& m : s.at("models")) {
      SubprocessSpec sp;
      sp.argv = m.at("command").get<std::vector<std::string>>();
      if (!sp.argv.empty() && sp.argv[0].find('/') != std::string::npos) sp.argv[0] = resolve(sp.argv[0]);
      sp.outputs = m.at("outputs").get<std::size_t>();
      sp.timeout_ms = m.value("timeout_ms", sp.timeout_ms);
      sp.batch = m.value("batch", sp.batch);
      sp.name = m.value("name", "m" + std::to_string(e.models.size()));
      e.models.push_back(subprocess_model(std::move(sp)));
    }
    e.costs.assign(e.models.size(), 1.0);
    e.source = detail::distribution_from_json(s.at("inputs"));
  } else {
    throw std::invalid_argument("config: unknown suite type '" + type + "'");
  }
  if (s.contains("inputs") && type == "builtin") e.source = detail::distribution_from_json(s["inputs"]);
  if (!c.costs.empty()) e.costs = c.costs;
  e.validate();
  for (std::size_t col : c.outputs) {
    if (col >= e.outputs()) throw std::invalid_argument("config: output " + std::to_string(col) + " out of range");
  }
  return e;
}

// ---------------------------------------------------------------------------
// Pilot
// ---------------------------------------------------------------------------

/// Pilot statistics for every model on columns `cols`, streamed in chunks.
inline PilotStatistics sample_pilot(const ModelEnsemble& e, const std::vector<std::size_t>& cols, PilotNeeds needs,
                                    const std::vector<IndexSet>& index_sets, std::size_t samples, std::uint64_t seed,
                                    std::size_t chunk_rows = 8192) {
  const auto& sets = needs.sensitivity ? index_sets : std::vector<IndexSet>{};
  validate_index_sets(sets, source_dimension(e.source));
  const std::size_t chunks = std::max<std::size_t>(1, (samples + chunk_rows - 1) / chunk_rows);
  auto get = [&](std::size_t k) {
    const std::size_t n = std::min(chunk_rows, samples - k * chunk_rows);
    Rng rng = substream(seed, {k});
    Samples base = draw_samples(e.source, n, rng);
    std::vector<Samples> comps;
    for (std::size_t u = 0; u < sets.size(); ++u) {
      Rng cr = substream(seed, {k, 1 + u});
      comps.push_back(draw_companion(e.source, base, sets[u], cr));
    }
    PilotChunk c;
    for (const auto& m : e.models) c.models.push_back(evaluate_model(*m, base, comps, cols));
    return c;
  };
  return estimate_pilot_chunked(get, chunks, needs, sets);
}

inline PilotStatistics study_pilot(const StudyConfig& c, const ModelEnsemble& e) {
  const bool sens = c.statistics == StatisticGroup::Sensitivity;
  const PilotNeeds needs{true, sens};
  if (c.pilot.mode == "file") {
    const std::filesystem::path p(c.pilot.path);
    return load_pilot((p.is_absolute() ? p : c.base_dir / p).string());
  }
  if (c.pilot.mode == "quadrature") return quadrature_pilot(e, c.outputs, needs, c.index_sets);
  return sample_pilot(e, c.outputs, needs, c.index_sets, c.pilot.samples, c.pilot.seed);
}

// ---------------------------------------------------------------------------
// Estimator candidates
// ---------------------------------------------------------------------------

struct ReportedStatistic {
  std::string statistic;  // mean | variance | main_effect
  std::size_t output = 0;
  std::string index_set;
  Index position = 0;
};

struct Candidate {
  std::string type;   // ACV | S-MOACV | C-MOACV
  std::string group;  // which statistic the estimator targets
  EstimatorSpec spec;
  std::vector<std::size_t> cols;  // positions within the configured outputs
  std::vector<std::size_t> sets;  // positions within the configured index sets
  std::vector<ReportedStatistic> report;
};

inline std::string index_set_name(const IndexSet& u) {
  std::string s;
  for (std::size_t k = 0; k < u.size(); ++k) s += (k ? "+" : "") + std::to_string(u[k]);
  return s;
}

inline std::vector<Candidate> study_candidates(const StudyConfig& c) {
  std::vector<Candidate> out;
  const std::size_t d = c.outputs.size();
  if (c.statistics == StatisticGroup::MeanVariance) {
    for (std::size_t k = 0; k < d; ++k) {
      out.push_back({"ACV", "mean", {Family::Mean, 1, {}}, {k}, {}, {{"mean", c.outputs[k], "", 0}}});
    }
    for (std::size_t k = 0; k < d; ++k) {
      out.push_back({"ACV", "variance", {Family::Variance, 1, {}}, {k}, {}, {{"variance", c.outputs[k], "", 0}}});
    }
    std::vector<std::size_t> all(d);
    std::iota(all.begin(), all.end(), std::size_t{0});
    Candidate sm{"S-MOACV", "mean", {Family::Mean, d, {}}, all, {}, {}};
    Candidate sv{"S-MOACV", "variance", {Family::Variance, d, {}}, all, {}, {}};
    Candidate cm{"C-MOACV", "mean-variance", {Family::MeanVariance, d, {}}, all, {}, {}};
    for (std::size_t k = 0; k < d; ++k) {
      const Index kk = static_cast<Index>(k), dd = static_cast<Index>(d);
      sm.report.push_back({"mean", c.outputs[k], "", kk});
      sv.report.push_back({"variance", c.outputs[k], "", kk * dd + kk});
      cm.report.push_back({"mean", c.outputs[k], "", kk});
    }
    for (std::size_t k = 0; k < d; ++k) {
      const Index kk = static_cast<Index>(k), dd = static_cast<Index>(d);
      cm.report.push_back({"variance", c.outputs[k], "", dd + kk * dd + kk});
    }
    out.push_back(std::move(sm));
    out.push_back(std::move(sv));
    out.push_back(std::move(cm));
  } else {
    const std::size_t k = c.index_sets.size();
    const std::size_t col = c.outputs[0];
    for (std::size_t u = 0; u < k; ++u) {
      out.push_back({"ACV", "main_effect", {Family::MainEffect, 1, {c.index_sets[u]}}, {0}, {u},
                     {{"main_effect", col, index_set_name(c.index_sets[u]), 0}}});
    }
    out.push_back({"ACV", "variance", {Family::Variance, 1, {}}, {0}, {}, {{"variance", col, "", 0}}});
    std::vector<std::size_t> sets(k);
    std::iota(sets.begin(), sets.end(), std::size_t{0});
    Candidate sm{"S-MOACV", "main_effect", {Family::MainEffect, 1, c.index_sets}, {0}, sets, {}};
    Candidate cm{"C-MOACV", "main_effect-variance", {Family::MainEffectVariance, 1, c.index_sets}, {0}, sets, {}};
    for (std::size_t u = 0; u < k; ++u) {
      sm.report.push_back({"main_effect", col, index_set_name(c.index_sets[u]), static_cast<Index>(u)});
      cm.report.push_back({"main_effect", col, index_set_name(c.index_sets[u]), static_cast<Index>(u)});
    }
    cm.report.push_back({"variance", col, "", static_cast<Index>(k)});
    out.push_back(std::move(sm));
    out.push_back(std::move(cm));
  }
  return out;
}

inline PilotStatistics candidate_pilot(const PilotStatistics& p, const Candidate& c) {
  PilotStatistics s = p.select_outputs(c.cols);
  if (uses_sensitivity(c.spec.family)) s = s.select_index_sets(c.sets);
  return s;
}

// ---------------------------------------------------------------------------
// Study
// ---------------------------------------------------------------------------

struct StudyRow {
  std::string estimator;
  std::string group;
  std::string statistic;
  std::size_t output = 0;
  std::string index_set;
  double predicted_reduction = 0.0;
  std::optional<double> empirical_reduction;
  std::optional<double> moacv_variance;
  std::optional<double> mc_variance;
  double moacv_mean = 0.0;
  double mc_mean = 0.0;
  std::optional<double> moacv_mse;
  std::optional<double> mc_mse;
  std::size_t clamped = 0;
};

struct StudyReport {
  nlohmann::json provenance;
  std::vector<StudyRow> rows;
  std::size_t replications = 0;
  std::size_t mc_samples = 0;
  Allocation allocation;

  static std::string format(const std::optional<double>& v) {
    if (!v || !std::isfinite(*v)) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", *v);
    return buf;
  }

  std::string csv() const {
    std::ostringstream out;
    out << "study,estimator,group,statistic,output,index_set,predicted_reduction,empirical_reduction,"
           "moacv_variance,mc_variance,moacv_mean,mc_mean,moacv_mse,mc_mse,clamped,replications,mc_samples\n";
    const std::string study = provenance.value("study", std::string{});
    for (const auto& r : rows) {
      out << study << ',' << r.estimator << ',' << r.group << ',' << r.statistic << ',' << r.output << ','
          << r.index_set << ',' << format(r.predicted_reduction) << ',' << format(r.empirical_reduction) << ','
          << format(r.moacv_variance) << ',' << format(r.mc_variance) << ',' << format(r.moacv_mean) << ','
          << format(r.mc_mean) << ',' << format(r.moacv_mse) << ',' << format(r.mc_mse) << ',' << r.clamped << ','
          << replications << ',' << mc_samples << '\n';
    }
    return out.str();
  }

  nlohmann::json json() const {
    nlohmann::json j = provenance;
    auto opt = [](const std::optional<double>& v) -> nlohmann::json {
      if (!v || !std::isfinite(*v)) return nullptr;
      return *v;
    };
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json row{{"estimator", r.estimator},
                         {"group", r.group},
                         {"statistic", r.statistic},
                         {"output", r.output},
                         {"index_set", r.index_set},
                         {"predicted_reduction", r.predicted_reduction},
                         {"empirical_reduction", opt(r.empirical_reduction)},
                         {"moacv_variance", opt(r.moacv_variance)},
                         {"mc_variance", opt(r.mc_variance)},
                         {"moacv_mean", r.moacv_mean},
                         {"mc_mean", r.mc_mean},
                         {"moacv_mse", opt(r.moacv_mse)},
                         {"mc_mse", opt(r.mc_mse)},
                         {"clamped", r.clamped}};
      nlohmann::json undefined = nlohmann::json::array();
      for (const char* key : {"empirical_reduction", "moacv_variance", "mc_variance"}) {
        if (row[key].is_null()) undefined.push_back(key);
      }
      row["undefined"] = undefined;
      j["rows"].push_back(std::move(row));
    }
    return j;
  }

  const StudyRow& find(const std::string& estimator, const std::string& statistic, std::size_t output,
                       const std::string& group = "", const std::string& index_set = "") const {
    for (const auto& r : rows) {
      if (r.estimator == estimator && r.statistic == statistic && r.output == output &&
          (group.empty() || r.group == group) && r.index_set == index_set) {
        return r;
      }
    }
    throw std::out_of_range("study report has no row " + estimator + "/" + statistic + "/" + std::to_string(output));
  }
};

inline nlohmann::json allocation_json(const Allocation& a) {
  return {{"scheme", to_string(a.scheme)}, {"n0", a.n0},           {"fresh", a.fresh},
          {"cost", a.cost},                {"objective", a.objective}, {"trace", a.trace}};
}

inline EstimatorSpec objective_spec(const StudyConfig& c, std::vector<std::size_t>& cols) {
  cols.clear();
  for (std::size_t o : c.objective_outputs) {
    const auto it = std::find(c.outputs.begin(), c.outputs.end(), o);
    if (it == c.outputs.end()) throw std::invalid_argument("config: objective output is not among the study outputs");
    cols.push_back(static_cast<std::size_t>(it - c.outputs.begin()));
  }
  return EstimatorSpec{c.objective_family, cols.size(), c.objective_index_sets};
}

/// Allocation for a study: the fixed one from the config, or the optimizer's.
inline Allocation study_allocation(const StudyConfig& c, const ModelEnsemble& e, const PilotStatistics& pilot) {
  std::vector<std::size_t> cols;
  const EstimatorSpec spec = objective_spec(c, cols);
  PilotStatistics p = pilot.select_outputs(cols);
  if (uses_sensitivity(spec.family)) {
    std::vector<std::size_t> sets;
    for (const auto& u : spec.index_sets) {
      const auto it = std::find(c.index_sets.begin(), c.index_sets.end(), u);
      if (it == c.index_sets.end()) throw std::invalid_argument("config: objective index set is not among the study's");
      sets.push_back(static_cast<std::size_t>(it - c.index_sets.begin()));
    }
    p = p.select_index_sets(sets);
  }
  if (c.fixed_allocation) {
    Allocation a;
    a.scheme = c.scheme;
    a.n0 = c.fixed_allocation->first;
    a.fresh = c.fixed_allocation->second;
    if (a.fresh.size() + 1 != e.size()) throw std::invalid_argument("config: allocation needs one fresh count per low-fidelity model");
    a.cost = allocation_cost<std::int64_t>(spec, e.costs, a.n0, a.fresh);
    a.objective = allocation_objective<std::int64_t>(spec, p, a);
    return a;
  }
  // Every study also runs variance estimators.
  OptimizerOptions opt = c.optimizer;
  opt.min_n0 = std::max(opt.min_n0, min_n0(Family::Variance));
  opt.min_fresh = std::max(opt.min_fresh, min_fresh(Family::Variance, c.scheme));
  return optimize_allocation(spec, p, CostModel{e.costs, *c.budget}, c.scheme, opt);
}

inline StudyReport run_study(const StudyConfig& c, const ModelEnsemble& e, const PilotStatistics& pilot,
                             const Allocation& alloc) {
  const bool sens = c.statistics == StatisticGroup::Sensitivity;
  std::vector<std::size_t> keep{0};
  std::vector<std::size_t> fresh;
  for (std::size_t i = 0; i < alloc.fresh.size(); ++i) {
    if (alloc.fresh[i] < 0) throw std::invalid_argument("allocation: negative count");
    if (alloc.fresh[i] > 0) {
      keep.push_back(i + 1);
      fresh.push_back(static_cast<std::size_t>(alloc.fresh[i]));
    }
  }
  ModelEnsemble used = e;
  used.models.clear();
  used.costs.clear();
  for (std::size_t m : keep) {
    used.models.push_back(e.models[m]);
    used.costs.push_back(e.costs[m]);
  }
  const PilotStatistics p = keep.size() == pilot.models ? pilot : pilot.select_models(keep);
  const auto [plan, ledger] = build_plan(c.scheme, static_cast<std::size_t>(alloc.n0), fresh);

  // Equal-cost Monte Carlo: all estimators share the evaluation multiplier,
  // so the budget is compared in units of one evaluation per sample.
  std::vector<std::size_t> ocols;
  const EstimatorSpec ospec = objective_spec(c, ocols);
  const double base_cost = allocation_cost<std::int64_t>(EstimatorSpec{Family::Mean, 1, {}}, e.costs, alloc.n0, alloc.fresh);
  const double budget = c.budget ? *c.budget / static_cast<double>(ospec.evaluations_per_sample()) : base_cost;
  const auto mc_samples = static_cast<std::size_t>(std::floor(budget / e.costs[0] + 1e-9));
  if (mc_samples < 2) throw std::invalid_argument("study: budget buys fewer than two high-fidelity samples");
  const SampleSetPlan mc_plan(0, mc_samples, {iota_indices(mc_samples)});

  const auto candidates = study_candidates(c);
  std::vector<AcvSolution> solutions;
  std::vector<Matrix> mc_predicted;
  for (const auto& cand : candidates) {
    const PilotStatistics cp = candidate_pilot(p, cand);
    solutions.push_back(solve_acv(cand.spec, ledger, cp, c.policy));
    const auto n = static_cast<std::int64_t>(mc_samples);
    mc_predicted.push_back(pair_cov<std::int64_t>(cand.spec, 0, 0, n, n, n, cp));
  }

  const std::size_t R = c.replications;
  const auto& sets = sens ? c.index_sets : std::vector<IndexSet>{};
  std::vector<std::vector<Vector>> moacv(candidates.size(), std::vector<Vector>(R));
  std::vector<std::vector<Vector>> mc(candidates.size(), std::vector<Vector>(R));
  std::vector<std::vector<std::vector<char>>> clamped(candidates.size(), std::vector<std::vector<char>>(R));
  const std::uint64_t mc_stream_offset = std::uint64_t{1} << 40;
  parallel_for(R, c.workers, [&](std::size_t r) {
    const PlanEvaluation pe = evaluate_plan(used, c.outputs, sets, plan, c.seed, r);
    const PlanEvaluation me = evaluate_plan(used, c.outputs, sets, mc_plan, c.seed, mc_stream_offset + r);
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      const auto& cand = candidates[k];
      EstimateVector raw = evaluate_moacv(solutions[k], acv_inputs(cand.spec, plan, pe, cand.cols, cand.sets));
      const Vector before = raw.values;
      EstimateVector est = sanitize_variance_estimate(std::move(raw));
      clamped[k][r].resize(static_cast<std::size_t>(before.size()));
      for (Index t = 0; t < before.size(); ++t) clamped[k][r][static_cast<std::size_t>(t)] = before[t] != est.values[t];
      moacv[k][r] = est.values;
      mc[k][r] = stacked_estimate_values(cand.spec, project(me.evals[0], cand.cols, cand.sets));
    }
  });

  auto stats = [&](const std::vector<Vector>& v, Index t) {
    double mean = 0.0;
    for (const auto& x : v) mean += x[t];
    mean /= static_cast<double>(v.size());
    std::optional<double> var;
    if (v.size() >= 2) {
      double ss = 0.0;
      for (const auto& x : v) ss += (x[t] - mean) * (x[t] - mean);
      var = ss / static_cast<double>(v.size() - 1);
    }
    return std::make_pair(mean, var);
  };

  StudyReport rep;
  rep.replications = R;
  rep.mc_samples = mc_samples;
  rep.allocation = alloc;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto& cand = candidates[k];
    for (const auto& s : cand.report) {
      StudyRow row;
      row.estimator = cand.type;
      row.group = cand.group;
      row.statistic = s.statistic;
      row.output = s.output;
      row.index_set = s.index_set;
      row.predicted_reduction = mc_predicted[k](s.position, s.position) / solutions[k].variance(s.position, s.position);
      const auto [mm, mv] = stats(moacv[k], s.position);
      const auto [cm, cv] = stats(mc[k], s.position);
      row.moacv_mean = mm;
      row.mc_mean = cm;
      row.moacv_variance = mv;
      row.mc_variance = cv;
      if (mv && cv && *mv > 0.0) row.empirical_reduction = *cv / *mv;
      for (std::size_t r = 0; r < R; ++r) row.clamped += static_cast<std::size_t>(clamped[k][r][static_cast<std::size_t>(s.position)]);
      rep.rows.push_back(std::move(row));
    }
    // Sobol indices: main effect over total variance of the same evaluation.
    if (cand.spec.family == Family::MainEffectVariance) {
      const Index vpos = static_cast<Index>(cand.spec.index_sets.size());
      for (std::size_t u = 0; u < cand.spec.index_sets.size(); ++u) {
        StudyRow row;
        row.estimator = cand.type;
        row.group = cand.group;
        row.statistic = "sobol_index";
        row.output = c.outputs[0];
        row.index_set = index_set_name(cand.spec.index_sets[u]);
        row.predicted_reduction = std::numeric_limits<double>::quiet_NaN();
        std::vector<Vector> sm(R), sc(R);
        for (std::size_t r = 0; r < R; ++r) {
          sm[r] = Vector::Constant(1, moacv[k][r][static_cast<Index>(u)] / moacv[k][r][vpos]);
          sc[r] = Vector::Constant(1, mc[k][r][static_cast<Index>(u)] / mc[k][r][vpos]);
        }
        const auto [mm, mv] = stats(sm, 0);
        const auto [cm, cv] = stats(sc, 0);
        row.moacv_mean = mm;
        row.mc_mean = cm;
        row.moacv_variance = mv;
        row.mc_variance = cv;
        if (!c.sobol_truth.empty()) {
          const double truth = c.sobol_truth[cand.sets[u]];
          double a = 0.0, b = 0.0;
          for (std::size_t r = 0; r < R; ++r) {
            a += std::pow(sm[r][0] - truth, 2);
            b += std::pow(sc[r][0] - truth, 2);
          }
          row.moacv_mse = a / static_cast<double>(R);
          row.mc_mse = b / static_cast<double>(R);
          if (*row.moacv_mse > 0.0) row.empirical_reduction = *row.mc_mse / *row.moacv_mse;
        }
        rep.rows.push_back(std::move(row));
      }
    }
  }

  nlohmann::json prov;
  prov["format"] = "mfacv-study";
  prov["version"] = 1;
  prov["library_version"] = kLibraryVersion;
  prov["study"] = c.name;
  prov["config"] = c.raw;
  prov["config_hash"] = config_hash(c);
  prov["seeds"] = {{"replication", c.seed}, {"pilot", c.pilot.seed}, {"optimizer", c.optimizer.seed}};
  prov["pilot"] = {{"mode", c.pilot.mode}, {"samples", pilot.count}, {"hash", sha256_hex(to_json(pilot).dump())}};
  prov["allocation"] = allocation_json(alloc);
  prov["models_used"] = keep;
  prov["replications"] = R;
  prov["mc_samples"] = mc_samples;
  prov["estimators"] = nlohmann::json::array();
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    prov["estimators"].push_back({{"type", candidates[k].type},
                                  {"group", candidates[k].group},
                                  {"family", to_string(candidates[k].spec.family)},
                                  {"outputs", candidates[k].spec.outputs},
                                  {"index_sets", candidates[k].spec.index_sets},
                                  {"log_det", solutions[k].log_det},
                                  {"pseudo_inverse", solutions[k].pseudo_inverse}});
  }
  rep.provenance = std::move(prov);
  return rep;
}

inline StudyReport run_study(const StudyConfig& c) {
  const ModelEnsemble e = build_ensemble(c);
  const PilotStatistics pilot = study_pilot(c, e);
  return run_study(c, e, pilot, study_allocation(c, e, pilot));
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

inline void write_study_report(const StudyReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "study.csv", r.csv());
  write_text(dir / "study.json", r.json().dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Pilot sweep
// ---------------------------------------------------------------------------

/// Linear-interpolation percentile (p in [0, 100]).
inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) throw std::invalid_argument("percentile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct SweepCell {
  std::size_t pilot = 0;
  std::size_t outputs = 0;
  double percentile_reduction = 0.0;
  double median_reduction = 0.0;
  double reference_reduction = 0.0;
  std::size_t failures = 0;
};

struct SweepResult {
  Family family = Family::Mean;
  std::size_t mc_samples = 0;
  double percentile = 5.0;
  std::vector<SweepCell> cells;

  const SweepCell& at(std::size_t pilot, std::size_t outputs) const {
    for (const auto& c : cells) {
      if (c.pilot == pilot && c.outputs == outputs) return c;
    }
    throw std::out_of_range("sweep: no such cell");
  }

  /// Smallest grid pilot count from which the percentile reduction stays
  /// above one; nullopt when it never does.
  std::optional<std::size_t> crossing(std::size_t outputs) const {
    std::vector<const SweepCell*> col;
    for (const auto& c : cells) {
      if (c.outputs == outputs) col.push_back(&c);
    }
    std::sort(col.begin(), col.end(), [](auto* a, auto* b) { return a->pilot < b->pilot; });
    std::optional<std::size_t> out;
    for (auto it = col.rbegin(); it != col.rend(); ++it) {
      if ((*it)->percentile_reduction > 1.0) {
        out = (*it)->pilot;
      } else {
        break;
      }
    }
    return out;
  }

  std::string csv() const {
    std::ostringstream out;
    out << "family,pilot_samples,statistics,percentile,percentile_reduction,median_reduction,reference_reduction,failures\n";
    for (const auto& c : cells) {
      out << to_string(family) << ',' << c.pilot << ',' << c.outputs << ',' << percentile << ','
          << StudyReport::format(c.percentile_reduction) << ',' << StudyReport::format(c.median_reduction) << ','
          << StudyReport::format(c.reference_reduction) << ',' << c.failures << '\n';
    }
    return out.str();
  }
};

/// Percentile of the variance reduction reached when optimal weights come
/// from a small pilot but the true covariances are those of `reference`.
/// Mean sweeps use the first k configured outputs; main-effect sweeps use the
/// first configured output and the first k index sets, reporting the first
/// statistic.
inline SweepResult pilot_sweep(const StudyConfig& c, const ModelEnsemble& e, const PilotStatistics& reference,
                               std::int64_t n0, const std::vector<std::int64_t>& fresh) {
  const SweepConfig& s = c.sweep;
  if (s.family != Family::Mean && s.family != Family::MainEffect) {
    throw std::invalid_argument("sweep: family must be M or ME");
  }
  if (s.trials == 0) throw std::invalid_argument("sweep: trials must be positive");
  const bool sens = s.family == Family::MainEffect;
  const std::size_t max_k = *std::max_element(s.output_counts.begin(), s.output_counts.end());
  if (!sens && max_k > c.outputs.size()) throw std::invalid_argument("sweep: more statistics than configured outputs");
  if (sens && max_k > c.index_sets.size()) throw std::invalid_argument("sweep: more statistics than index sets");
  const std::vector<std::size_t> cols = sens ? std::vector<std::size_t>{c.outputs[0]} : c.outputs;
  const std::vector<IndexSet> sets = sens ? std::vector<IndexSet>(c.index_sets.begin(), c.index_sets.begin() + static_cast<std::ptrdiff_t>(max_k))
                                          : std::vector<IndexSet>{};
  const PilotNeeds needs{false, sens};

  const auto ledger = acv_is_ledger<std::int64_t>(n0, fresh, c.scheme);
  const double alloc_cost = allocation_cost<std::int64_t>(EstimatorSpec{Family::Mean, 1, {}}, e.costs, n0, fresh);
  const auto n_mc = static_cast<std::int64_t>(std::floor(alloc_cost / e.costs[0] + 1e-9));

  auto spec_for = [&](std::size_t k) {
    return sens ? EstimatorSpec{Family::MainEffect, 1, std::vector<IndexSet>(sets.begin(), sets.begin() + static_cast<std::ptrdiff_t>(k))}
                : EstimatorSpec{Family::Mean, k, {}};
  };
  auto restrict_to = [&](const PilotStatistics& p, std::size_t k) {
    if (sens) return p.select_index_sets(iota_indices(k));
    return p.select_outputs(iota_indices(k));
  };

  struct Reference {
    AssembledSystem sys;
    double mc = 0.0;
    double reduction = 0.0;
  };
  std::vector<Reference> refs;
  for (std::size_t k : s.output_counts) {
    const EstimatorSpec spec = spec_for(k);
    const PilotStatistics rp = restrict_to(reference, k);
    Reference r;
    r.sys = assemble(spec, ledger, rp);
    r.mc = pair_cov<std::int64_t>(spec, 0, 0, n_mc, n_mc, n_mc, rp)(0, 0);
    r.reduction = r.mc / solve_acv(spec, r.sys, c.policy).variance(0, 0);
    refs.push_back(std::move(r));
  }

  SweepResult out;
  out.family = s.family;
  out.mc_samples = static_cast<std::size_t>(n_mc);
  out.percentile = s.percentile;
  const std::size_t P = s.pilot_counts.size(), K = s.output_counts.size();
  std::vector<std::vector<double>> red(P * K, std::vector<double>(s.trials, 0.0));
  std::vector<std::vector<char>> failed(P * K, std::vector<char>(s.trials, 0));
  parallel_for(P * s.trials, c.workers, [&](std::size_t job) {
    const std::size_t pi = job / s.trials, t = job % s.trials;
    const std::size_t n = s.pilot_counts[pi];
    std::optional<PilotStatistics> pilot;
    try {
      pilot = sample_pilot(e, cols, needs, sets, n, substream(c.pilot.seed, {n, t})());
    } catch (const std::exception&) {
    }
    for (std::size_t ki = 0; ki < K; ++ki) {
      const std::size_t cell = pi * K + ki;
      if (!pilot) {
        failed[cell][t] = 1;
        continue;
      }
      try {
        const EstimatorSpec spec = spec_for(s.output_counts[ki]);
        const AcvSolution sol = solve_acv(spec, ledger, restrict_to(*pilot, s.output_counts[ki]), c.policy);
        const auto& r = refs[ki];
        const double v = acv_variance(r.sys.var_delta, r.sys.cov_q_delta, r.sys.var_q, sol.alpha)(0, 0);
        red[cell][t] = v > 0.0 && std::isfinite(v) ? r.mc / v : 0.0;
      } catch (const std::exception&) {
        failed[cell][t] = 1;
      }
    }
  });
  for (std::size_t pi = 0; pi < P; ++pi) {
    for (std::size_t ki = 0; ki < K; ++ki) {
      const std::size_t cell = pi * K + ki;
      SweepCell sc;
      sc.pilot = s.pilot_counts[pi];
      sc.outputs = s.output_counts[ki];
      sc.percentile_reduction = percentile(red[cell], s.percentile);
      sc.median_reduction = percentile(red[cell], 50.0);
      sc.reference_reduction = refs[ki].reduction;
      sc.failures = static_cast<std::size_t>(std::count(failed[cell].begin(), failed[cell].end(), 1));
      out.cells.push_back(sc);
    }
  }
  return out;
}

}  // namespace mfacv
