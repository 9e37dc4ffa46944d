// Command-line front end: dataset generation, engine fits, prediction,
// method comparison, benchmarking, and the end-to-end replica pipeline.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dpvb/experiment.hpp"

namespace {

using namespace dpvb;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitEngine = 3;
constexpr int kExitIo = 4;

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

ExperimentConfig resolve_config(const CommonArgs& args) {
  ExperimentConfig cfg;
  if (!args.config_path.empty()) {
    cfg = load_config(args.config_path);
  }
  if (args.seed) {
    cfg.seed = *args.seed;
    cfg.seed_set = true;
  }
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("--seed", args.seed, "master seed (overrides config)");
  cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
}

GroupedDataset load_train_split(const ExperimentConfig& cfg,
                                std::vector<HeldOutGroup>* held_out) {
  if (!cfg.dataset_path) throw ConfigError("this subcommand needs dataset.path");
  const auto all = read_dataset_csv(*cfg.dataset_path);
  const std::size_t n_train =
      (cfg.train_groups == 0 || cfg.train_groups >= all.num_groups())
          ? all.num_groups()
          : cfg.train_groups;
  if (held_out != nullptr) {
    for (std::size_t j = n_train; j < all.num_groups(); ++j) {
      held_out->emplace_back(all.group_id(j), all.observations(j));
    }
  }
  return all.slice(0, n_train);
}

int cmd_generate(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  if (!c.generator) c.generator = GeneratorSpec{};
  c.validate();
  std::filesystem::create_directories(c.out_dir);
  GroundTruth truth = make_ground_truth(*c.generator);
  Rng rng(c.seed);
  const auto data =
      generate_dataset(rng, truth, c.generator->num_groups, c.generator->obs_per_group);
  write_dataset_csv(data, c.out_dir / "dataset.csv");
  write_ground_truth_json(truth, c.out_dir / "truth.json");
  std::cout << "wrote " << (c.out_dir / "dataset.csv").string() << " ("
            << data.num_groups() << " groups)\n";
  return kExitOk;
}

int cmd_fit_vb(const ExperimentConfig& cfg) {
  cfg.validate();
  auto train = load_train_split(cfg, nullptr);
  auto [state, report] = run_vb(train, cfg.model, cfg.vb_tol, cfg.vb_max_iter);
  std::filesystem::create_directories(cfg.out_dir);
  write_vb_state_json(state, cfg.out_dir / "vb_state.json");
  write_vb_report_json(report, cfg.out_dir / "vb_report.json");
  const double merge = cfg.merge_tol ? *cfg.merge_tol : default_merge_tol(train);
  const auto summary = estimate_truncation(state, merge, cfg.prune_tol);
  nlohmann::json cj;
  cj["merge_tol"] = merge;
  cj["prune_tol"] = cfg.prune_tol;
  cj["count"] = summary.count();
  auto& arr = cj["components"] = nlohmann::json::array();
  for (const auto& m : summary.components) {
    arr.push_back(
        {{"location", m.location}, {"weight", m.weight}, {"variance", m.variance}});
  }
  std::ofstream out(cfg.out_dir / "vb_components.json", std::ios::binary);
  out << cj.dump(2) << '\n';
  std::cout << "VB converged=" << report.converged << " iterations=" << report.iterations
            << " components=" << summary.count() << '\n';
  return kExitOk;
}

template <typename RunFn>
int cmd_fit_gibbs(const ExperimentConfig& cfg, const std::string& name, RunFn run) {
  cfg.validate();
  auto train = load_train_split(cfg, nullptr);
  std::filesystem::create_directories(cfg.out_dir);
  const auto trace = run(train);
  write_trace_jsonl(trace, cfg.out_dir / (name + "_trace.jsonl"));
  nlohmann::json hist;
  for (const auto& [count, freq] : count_components(trace)) {
    hist[std::to_string(count)] = freq;
  }
  std::ofstream out(cfg.out_dir / (name + "_components.json"), std::ios::binary);
  out << nlohmann::json{{"component_count_posterior", hist}}.dump(2) << '\n';
  std::cout << name << ": retained " << trace.states.size() << " states in "
            << trace.meta.wall_time_seconds << " s\n";
  return kExitOk;
}

int cmd_predict(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<HeldOutGroup> held_out;
  auto train = load_train_split(cfg, &held_out);
  if (held_out.empty()) {
    throw ConfigError("predict needs dataset.train_groups below the group count");
  }
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream csv(cfg.out_dir / "predictive.csv", std::ios::binary);
  if (!csv) throw IoError("cannot write predictive.csv");
  csv << "group_id,method,log_predictive,wall_time_seconds\n";
  Rng rng(cfg.seed);
  char buf[64];
  auto emit = [&](const std::string& id, const char* method, double value, double secs) {
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    csv << id << ',' << method << ',' << buf << ',';
    std::snprintf(buf, sizeof(buf), "%.6g", secs);
    csv << buf << '\n';
  };
  const auto vb_path = cfg.out_dir / "vb_state.json";
  const auto polya_path = cfg.out_dir / "polya_trace.jsonl";
  const auto blocked_path = cfg.out_dir / "blocked_trace.jsonl";
  std::optional<VBState> vb_state;
  std::optional<PolyaTrace> polya_trace;
  std::optional<BlockedTrace> blocked_trace;
  if (std::filesystem::exists(vb_path)) vb_state = read_vb_state_json(vb_path);
  if (std::filesystem::exists(polya_path)) polya_trace = read_polya_trace_jsonl(polya_path);
  if (std::filesystem::exists(blocked_path)) {
    blocked_trace = read_blocked_trace_jsonl(blocked_path);
  }
  if (!vb_state && !polya_trace && !blocked_trace) {
    throw ConfigError("predict found no fitted outputs under " + cfg.out_dir.string());
  }
  using clock = std::chrono::steady_clock;
  for (const auto& y : held_out) {
    if (polya_trace) {
      const auto t0 = clock::now();
      const double lp = predictive_mcmc(*polya_trace, y, cfg.model.alpha,
                                        train.num_groups(), cfg.predictive, rng);
      emit(y.id, "polya", lp, std::chrono::duration<double>(clock::now() - t0).count());
    }
    if (blocked_trace) {
      const auto t0 = clock::now();
      const double lp = predictive_mcmc(*blocked_trace, y);
      emit(y.id, "blocked", lp, std::chrono::duration<double>(clock::now() - t0).count());
    }
    if (vb_state) {
      const auto t0 = clock::now();
      const double lp = predictive_vb(*vb_state, y, cfg.predictive);
      emit(y.id, "vb", lp, std::chrono::duration<double>(clock::now() - t0).count());
    }
  }
  std::cout << "wrote " << (cfg.out_dir / "predictive.csv").string() << '\n';
  return kExitOk;
}

int cmd_compare(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("compare needs an output directory");
  const auto csv_path = cfg.out_dir / "predictive.csv";
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open " + csv_path.string());
  std::string line;
  std::getline(in, line);  // header
  std::map<std::string, std::vector<double>> by_method;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, method, value;
    std::getline(ss, id, ',');
    std::getline(ss, method, ',');
    std::getline(ss, value, ',');
    by_method[method].push_back(std::stod(value));
  }
  nlohmann::json pairs = nlohmann::json::array();
  for (auto it = by_method.begin(); it != by_method.end(); ++it) {
    for (auto jt = std::next(it); jt != by_method.end(); ++jt) {
      const auto res = compare_methods(it->second, jt->second);
      pairs.push_back({{"a", it->first},
                       {"b", jt->first},
                       {"mean_a", res.mean_a},
                       {"mean_b", res.mean_b},
                       {"t_pooled", res.t_pooled},
                       {"p_pooled", res.p_pooled},
                       {"t_welch", res.t_welch},
                       {"p_welch", res.p_welch},
                       {"degenerate", res.degenerate}});
    }
  }
  std::ofstream out(cfg.out_dir / "comparison.json", std::ios::binary);
  out << nlohmann::json{{"pairs", pairs}}.dump(2) << '\n';
  std::cout << "wrote " << (cfg.out_dir / "comparison.json").string() << '\n';
  return kExitOk;
}

int cmd_benchmark(const ExperimentConfig& cfg) {
  const auto result = dpvb::benchmark(cfg);
  std::cout << "blocked/vb wall-time ratio: " << result.blocked_over_vb
            << " (paper-scale extrapolation: " << result.ratio_paper_scale << ")\n";
  return kExitOk;
}

int cmd_reproduce(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  if (!c.generator && !c.dataset_path) c.generator = GeneratorSpec{};
  const auto result = run_experiment(c);
  std::cout << "completed stages:";
  for (const auto& s : result.completed_stages) std::cout << ' ' << s.name;
  std::cout << "\noutputs in " << c.out_dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Truncated-DP random-effects model: VB and Gibbs engines"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string command;

  auto* generate = app.add_subcommand("generate", "simulate a grouped dataset");
  add_common(generate, args);
  auto* fit_vb = app.add_subcommand("fit-vb", "variational fit + component estimate");
  add_common(fit_vb, args);
  auto* fit_polya = app.add_subcommand("fit-gibbs-polya", "urn-type Gibbs chain");
  add_common(fit_polya, args);
  auto* fit_blocked = app.add_subcommand("fit-gibbs-blocked", "blocked Gibbs chain");
  add_common(fit_blocked, args);
  auto* predict = app.add_subcommand("predict", "held-out log predictive densities");
  add_common(predict, args);
  auto* compare = app.add_subcommand("compare", "t tests between predictive methods");
  add_common(compare, args);
  auto* bench = app.add_subcommand("benchmark", "relative engine wall times");
  add_common(bench, args);
  auto* reproduce =
      app.add_subcommand("reproduce-paper", "full desk-scale simulation pipeline");
  add_common(reproduce, args);

  // Frequently overridden knobs.
  std::optional<std::size_t> truncation, scans, train_groups;
  std::optional<double> alpha, tol;
  for (auto* cmd : {fit_vb, fit_polya, fit_blocked, predict, bench, reproduce}) {
    cmd->add_option("--truncation", truncation, "stick-breaking truncation level B");
    cmd->add_option("--alpha", alpha, "DP concentration");
    cmd->add_option("--train-groups", train_groups, "training-group count");
  }
  fit_vb->add_option("--tol", tol, "VB convergence tolerance");
  for (auto* cmd : {fit_polya, fit_blocked, bench}) {
    cmd->add_option("--scans", scans, "MCMC scan count");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = resolve_config(args);
    if (truncation) cfg.model.truncation = *truncation;
    if (alpha) cfg.model.alpha = *alpha;
    if (train_groups) cfg.train_groups = *train_groups;
    if (tol) cfg.vb_tol = *tol;
    if (scans) {
      cfg.polya_scans = *scans;
      cfg.blocked_scans = *scans;
      cfg.benchmark_scans = *scans;
    }

    if (generate->parsed()) return cmd_generate(cfg);
    if (fit_vb->parsed()) return cmd_fit_vb(cfg);
    if (fit_polya->parsed()) {
      return cmd_fit_gibbs(cfg, "polya", [&](const GroupedDataset& train) {
        GibbsOptions opt;
        opt.aux_atoms = cfg.aux_atoms;
        Rng rng(cfg.seed);
        return run_polya_chain(train, cfg.model, opt, cfg.polya_scans, cfg.burnin_frac,
                               cfg.stride, rng);
      });
    }
    if (fit_blocked->parsed()) {
      return cmd_fit_gibbs(cfg, "blocked", [&](const GroupedDataset& train) {
        GibbsOptions opt;
        Rng rng(cfg.seed);
        return run_blocked_chain(train, cfg.model, opt, cfg.blocked_scans,
                                 cfg.burnin_frac, cfg.stride, rng);
      });
    }
    if (predict->parsed()) return cmd_predict(cfg);
    if (compare->parsed()) return cmd_compare(cfg);
    if (bench->parsed()) return cmd_benchmark(cfg);
    if (reproduce->parsed()) return cmd_reproduce(cfg);
    return kExitConfig;
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << '\n';
    return kExitConfig;
  } catch (const IoError& ex) {
    std::cerr << "i/o error: " << ex.what() << '\n';
    return kExitIo;
  } catch (const std::invalid_argument& ex) {
    std::cerr << "config error: " << ex.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& ex) {
    std::cerr << "engine error: " << ex.what() << '\n';
    return kExitEngine;
  }
}
