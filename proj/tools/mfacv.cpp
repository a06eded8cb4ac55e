// Command-line front end: pilot, allocate, estimate, oracle, study, sweep.
#include "mfacv/mfacv.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace mfacv;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string output_dir;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "Study configuration (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option("-s,--seed", c.seed, "Override the replication seed");
  app->add_option("-w,--workers", c.workers, "Worker threads (0: all cores)");
  app->add_option("-o,--output-dir", c.output_dir, "Directory for reports");
}

StudyConfig load(const Common& c) {
  StudyConfig cfg = load_study_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.raw["seed"] = *c.seed;
  }
  if (c.workers) cfg.workers = *c.workers;
  if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
  return cfg;
}

fs::path out_dir(const StudyConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  return fs::path(cfg.output_dir);
}

void save_json(const fs::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
  std::cout << "wrote " << path.string() << "\n";
}

int cmd_pilot(const Common& c) {
  const StudyConfig cfg = load(c);
  const ModelEnsemble e = build_ensemble(cfg);
  const PilotStatistics p = study_pilot(cfg, e);
  const fs::path path = out_dir(cfg) / "pilot.json";
  save_pilot(p, path.string());
  std::cout << "wrote " << path.string() << " (" << p.count << " samples, sha256 " << sha256_hex(to_json(p).dump())
            << ")\n";
  return 0;
}

int cmd_allocate(const Common& c) {
  const StudyConfig cfg = load(c);
  const ModelEnsemble e = build_ensemble(cfg);
  for (std::size_t i : CostModel{e.costs, 1.0}.ordering_violations()) {
    std::cerr << "warning: model " << i << " costs more than the high-fidelity model\n";
  }
  const PilotStatistics p = study_pilot(cfg, e);
  const Allocation a = study_allocation(cfg, e, p);
  const nlohmann::json j = allocation_json(a);
  std::cout << j.dump(2) << "\n";
  save_json(out_dir(cfg) / "allocation.json", j);
  return 0;
}

int cmd_estimate(const Common& c) {
  const StudyConfig cfg = load(c);
  const ModelEnsemble e = build_ensemble(cfg);
  const PilotStatistics p = study_pilot(cfg, e);
  const Allocation a = study_allocation(cfg, e, p);
  StudyConfig once = cfg;
  once.replications = 1;
  const StudyReport r = run_study(once, e, p, a);
  nlohmann::json j;
  j["allocation"] = allocation_json(a);
  j["seed"] = cfg.seed;
  j["estimates"] = nlohmann::json::array();
  for (const auto& row : r.rows) {
    j["estimates"].push_back({{"estimator", row.estimator},
                              {"group", row.group},
                              {"statistic", row.statistic},
                              {"output", row.output},
                              {"index_set", row.index_set},
                              {"value", row.moacv_mean},
                              {"clamped", row.clamped > 0},
                              {"predicted_reduction", row.predicted_reduction}});
  }
  std::cout << j.dump(2) << "\n";
  save_json(out_dir(cfg) / "estimate.json", j);
  return 0;
}

int cmd_oracle(const Common& c) {
  const StudyConfig cfg = load(c);
  const ModelEnsemble e = build_ensemble(cfg);
  const PilotStatistics p = study_pilot(cfg, e);
  const Allocation a = study_allocation(cfg, e, p);
  std::vector<std::size_t> cols;
  const EstimatorSpec spec = objective_spec(cfg, cols);
  std::vector<std::size_t> keep{0}, fresh;
  for (std::size_t i = 0; i < a.fresh.size(); ++i) {
    if (a.fresh[i] > 0) {
      keep.push_back(i + 1);
      fresh.push_back(static_cast<std::size_t>(a.fresh[i]));
    }
  }
  ModelEnsemble used = e;
  used.models.clear();
  for (std::size_t m : keep) used.models.push_back(e.models[m]);
  used.costs.assign(keep.size(), 1.0);
  const auto [plan, ledger] = build_plan(cfg.scheme, static_cast<std::size_t>(a.n0), fresh);
  std::vector<std::size_t> model_cols;
  for (std::size_t k : cols) model_cols.push_back(cfg.outputs[k]);
  const ReplicationReport rep = replicate_cov(used, model_cols, spec, plan, cfg.replications, cfg.seed, cfg.workers);

  PilotStatistics kp = p.select_outputs(cols);
  if (uses_sensitivity(spec.family)) {
    std::vector<std::size_t> sets;
    for (const auto& u : spec.index_sets) {
      sets.push_back(static_cast<std::size_t>(std::find(cfg.index_sets.begin(), cfg.index_sets.end(), u) - cfg.index_sets.begin()));
    }
    kp = kp.select_index_sets(sets);
  }
  if (keep.size() != kp.models) kp = kp.select_models(keep);
  const AssembledSystem sys = assemble(spec, ledger, kp);
  const Index len = static_cast<Index>(spec.length());
  Matrix kernel(rep.cov.rows(), rep.cov.cols());
  kernel.topLeftCorner(len, len) = sys.var_q;
  kernel.topRightCorner(len, sys.cov_q_delta.cols()) = sys.cov_q_delta;
  kernel.bottomLeftCorner(sys.cov_q_delta.cols(), len) = sys.cov_q_delta.transpose();
  kernel.bottomRightCorner(sys.var_delta.rows(), sys.var_delta.cols()) = sys.var_delta;
  double worst = 0.0;
  for (Index i = 0; i < kernel.rows(); ++i) {
    for (Index j = 0; j < kernel.cols(); ++j) {
      if (rep.se(i, j) > 0.0) worst = std::max(worst, std::abs(rep.cov(i, j) - kernel(i, j)) / rep.se(i, j));
    }
  }
  nlohmann::json j = oracle_fixture("replication", spec, rep.cov,
                                    {{"replicates", rep.replicates},
                                     {"seed", cfg.seed},
                                     {"allocation", allocation_json(a)},
                                     {"max_abs_z", worst}});
  j["standard_error"] = matrix_to_json(rep.se);
  j["kernel"] = matrix_to_json(kernel);
  std::cout << "replicates " << rep.replicates << ", largest |empirical - kernel| / SE = " << worst << "\n";
  save_json(out_dir(cfg) / "oracle.json", j);
  return 0;
}

int cmd_study(const Common& c) {
  const StudyConfig cfg = load(c);
  const StudyReport r = run_study(cfg);
  write_study_report(r, out_dir(cfg));
  std::cout << r.csv();
  std::cout << "wrote " << (fs::path(cfg.output_dir) / "study.csv").string() << " and study.json\n";
  return 0;
}

int cmd_sweep(const Common& c) {
  const StudyConfig cfg = load(c);
  const ModelEnsemble e = build_ensemble(cfg);
  if (!cfg.fixed_allocation) throw std::invalid_argument("sweep: the config needs a fixed allocation");
  const bool sens = cfg.sweep.family == Family::MainEffect;
  const std::vector<std::size_t> cols = sens ? std::vector<std::size_t>{cfg.outputs[0]} : cfg.outputs;
  const PilotStatistics ref =
      sample_pilot(e, cols, PilotNeeds{false, sens}, cfg.index_sets, cfg.sweep.reference_samples, cfg.pilot.seed + 1);
  const SweepResult s = pilot_sweep(cfg, e, ref, cfg.fixed_allocation->first, cfg.fixed_allocation->second);
  const fs::path dir = out_dir(cfg);
  write_text(dir / "sweep.csv", s.csv());
  std::cout << s.csv();
  for (std::size_t k : cfg.sweep.output_counts) {
    const auto x = s.crossing(k);
    std::cout << "statistics " << k << ": reduction stays above 1 from "
              << (x ? std::to_string(*x) + " pilot samples" : std::string("no grid point")) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-output approximate control variate toolkit"};
  app.require_subcommand(1);
  Common common;
  struct Entry {
    const char* name;
    const char* help;
    int (*run)(const Common&);
  };
  const Entry entries[] = {
      {"pilot", "Estimate pilot covariance blocks and save them", cmd_pilot},
      {"allocate", "Optimize (or evaluate) the sample allocation", cmd_allocate},
      {"estimate", "Run every estimator once on one realization", cmd_estimate},
      {"oracle", "Replication oracle versus assembled kernels", cmd_oracle},
      {"study", "Replicated variance-reduction study", cmd_study},
      {"sweep", "Pilot-sample sweep of the worst-case reduction", cmd_sweep},
  };
  std::vector<std::pair<CLI::App*, const Entry*>> subs;
  for (const auto& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    add_common(sub, common);
    subs.emplace_back(sub, &e);
  }
  CLI11_PARSE(app, argc, argv);
  try {
    for (const auto& [sub, entry] : subs) {
      if (sub->parsed()) return entry->run(common);
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}
