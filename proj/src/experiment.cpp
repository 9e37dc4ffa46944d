#include "dpvb/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dpvb {

namespace {

using nlohmann::json;

// Stage seeds are derived from the master seed so stages stay decoupled:
// inserting a stage never shifts another stage's stream.
std::uint64_t stage_seed(std::uint64_t master, std::string_view stage) {
  std::uint64_t h = 1469598103934665603ull ^ master;
  for (char ch : stage) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  return h;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

GeneratorSpec parse_generator(const json& j) {
  GeneratorSpec g;
  if (j.contains("atoms")) g.atoms = j.at("atoms").get<std::vector<double>>();
  if (j.contains("weights")) g.weights = j.at("weights").get<std::vector<double>>();
  g.mu = j.value("mu", g.mu);
  g.tau2 = j.value("tau2", g.tau2);
  g.sigma2 = j.value("sigma2", g.sigma2);
  g.num_groups = j.value("num_groups", g.num_groups);
  g.obs_per_group = j.value("obs_per_group", g.obs_per_group);
  g.train_groups = j.value("train_groups", g.train_groups);
  return g;
}

void write_json_file(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    throw ConfigError("bad JSON in " + path.string() + ": " + ex.what());
  }
  return j;
}

struct SplitData {
  GroupedDataset train;
  std::vector<HeldOutGroup> held_out;
};

SplitData split_dataset(const GroupedDataset& all, std::size_t train_groups) {
  SplitData out;
  const std::size_t n_train =
      (train_groups == 0 || train_groups >= all.num_groups()) ? all.num_groups()
                                                              : train_groups;
  out.train = all.slice(0, n_train);
  for (std::size_t j = n_train; j < all.num_groups(); ++j) {
    out.held_out.emplace_back(all.group_id(j), all.observations(j));
  }
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (!seed_set) throw ConfigError("config requires an explicit seed");
  if (out_dir.empty()) throw ConfigError("config requires an output directory");
  if (!dataset_path && !generator) {
    throw ConfigError("config needs either a dataset path or generator parameters");
  }
  if (dataset_path && !std::filesystem::exists(*dataset_path)) {
    throw ConfigError("dataset path does not exist: " + dataset_path->string());
  }
  try {
    model.validate();
  } catch (const std::exception& ex) {
    throw ConfigError(ex.what());
  }
  if (!(vb_tol > 0.0) || vb_max_iter == 0) throw ConfigError("bad VB stopping parameters");
  if (stride == 0 || polya_scans < stride || blocked_scans < stride) {
    throw ConfigError("scan counts must be at least the thinning stride");
  }
  if (!(burnin_frac >= 0.0 && burnin_frac < 1.0)) {
    throw ConfigError("burnin fraction must lie in [0,1)");
  }
  if (generator) {
    if (generator->atoms.size() != generator->weights.size() || generator->atoms.empty()) {
      throw ConfigError("generator atoms/weights mismatch");
    }
    if (generator->train_groups > generator->num_groups) {
      throw ConfigError("generator train_groups exceeds num_groups");
    }
  }
}

ExperimentConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("bad config JSON: ") + ex.what());
  }
  ExperimentConfig cfg;
  static const std::vector<std::string> known{
      "seed",          "out_dir",        "dataset",        "model",
      "vb",            "gibbs",          "predictive",     "truncation_estimate",
      "benchmark"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown config key: " + key);
    }
  }
  if (j.contains("seed")) {
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.seed_set = true;
  }
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    if (d.contains("path") && !d.at("path").is_null()) {
      cfg.dataset_path = d.at("path").get<std::string>();
    }
    if (d.contains("truth_path") && !d.at("truth_path").is_null()) {
      cfg.truth_path = d.at("truth_path").get<std::string>();
    }
    if (d.contains("generate")) cfg.generator = parse_generator(d.at("generate"));
    cfg.train_groups = d.value("train_groups", cfg.train_groups);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    cfg.model.truncation = m.value("truncation", cfg.model.truncation);
    cfg.model.alpha = m.value("alpha", cfg.model.alpha);
  }
  if (j.contains("vb")) {
    const auto& v = j.at("vb");
    cfg.vb_tol = v.value("tol", cfg.vb_tol);
    cfg.vb_max_iter = v.value("max_iter", cfg.vb_max_iter);
  }
  if (j.contains("gibbs")) {
    const auto& g = j.at("gibbs");
    cfg.polya_scans = g.value("polya_scans", cfg.polya_scans);
    cfg.blocked_scans = g.value("blocked_scans", cfg.blocked_scans);
    cfg.burnin_frac = g.value("burnin_frac", cfg.burnin_frac);
    cfg.stride = g.value("stride", cfg.stride);
    cfg.aux_atoms = g.value("s_aux", cfg.aux_atoms);
  }
  if (j.contains("predictive")) {
    const auto& p = j.at("predictive");
    cfg.predictive.fresh_atom_draws =
        p.value("fresh_atom_draws", cfg.predictive.fresh_atom_draws);
    cfg.predictive.inner_tol = p.value("inner_tol", cfg.predictive.inner_tol);
    cfg.predictive.inner_max_iter = p.value("inner_max_iter", cfg.predictive.inner_max_iter);
  }
  if (j.contains("truncation_estimate")) {
    const auto& t = j.at("truncation_estimate");
    if (t.contains("merge_tol") && !t.at("merge_tol").is_null()) {
      cfg.merge_tol = t.at("merge_tol").get<double>();
    }
    cfg.prune_tol = t.value("prune_tol", cfg.prune_tol);
  }
  if (j.contains("benchmark")) {
    const auto& b = j.at("benchmark");
    cfg.benchmark_scans = b.value("scans", cfg.benchmark_scans);
    if (b.contains("engines")) {
      cfg.benchmark_engines = b.at("engines").get<std::vector<std::string>>();
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_json(ss.str());
}

GroundTruth make_ground_truth(const GeneratorSpec& spec) {
  GroundTruth truth;
  truth.measure.atoms = spec.atoms;
  double total = 0.0;
  for (double w : spec.weights) total += w;
  if (!(total > 0.0)) throw ConfigError("generator weights must have positive sum");
  truth.measure.weights.reserve(spec.weights.size());
  for (double w : spec.weights) truth.measure.weights.push_back(w / total);
  truth.mu = spec.mu;
  truth.tau2 = spec.tau2;
  truth.sigma2 = spec.sigma2;
  return truth;
}

ExperimentConfig paper_replica_config(std::uint64_t seed,
                                      const std::filesystem::path& out_dir) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.seed_set = true;
  cfg.out_dir = out_dir;
  cfg.generator = GeneratorSpec{};
  return cfg;
}

std::string fnv1a64_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot hash " + path.string());
  std::uint64_t h = 1469598103934665603ull;
  char buf[8192];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

bool verify_manifest(const std::filesystem::path& dir) {
  const auto manifest = load_json_file(dir / "manifest.json");
  for (const auto& entry : manifest.at("files")) {
    const auto rel = entry.at("path").get<std::string>();
    const auto expected = entry.at("fnv1a64").get<std::string>();
    const auto full = dir / rel;
    if (!std::filesystem::exists(full) || fnv1a64_file(full) != expected) {
      return false;
    }
  }
  return true;
}

namespace {

class ExperimentRun {
 public:
  explicit ExperimentRun(const ExperimentConfig& cfg) : cfg_(cfg) {}

  ExperimentResult run() {
    cfg_.validate();
    std::filesystem::create_directories(cfg_.out_dir);
    try {
      prepare_data();
      fit_vb();
      fit_polya();
      fit_blocked();
      predict();
      compare();
      write_engine_benchmark();
    } catch (const ConfigError&) {
      write_manifest();
      throw;
    } catch (const IoError&) {
      write_manifest();
      throw;
    } catch (const std::exception& ex) {
      write_manifest();
      throw EngineError(ex.what());
    }
    write_manifest();
    return result_;
  }

 private:
  void track(const std::string& name, double secs) {
    result_.completed_stages.push_back({name, secs});
  }

  void add_file(const std::filesystem::path& p) { result_.files.push_back(p); }

  void prepare_data() {
    const auto t0 = std::chrono::steady_clock::now();
    GroupedDataset all;
    std::size_t train_groups = cfg_.train_groups;
    if (cfg_.generator) {
      const auto& spec = *cfg_.generator;
      GroundTruth truth = make_ground_truth(spec);
      Rng rng(stage_seed(cfg_.seed, "generate"));
      all = generate_dataset(rng, truth, spec.num_groups, spec.obs_per_group);
      write_dataset_csv(all, cfg_.out_dir / "dataset.csv");
      add_file(cfg_.out_dir / "dataset.csv");
      write_ground_truth_json(truth, cfg_.out_dir / "truth.json");
      add_file(cfg_.out_dir / "truth.json");
      train_groups = spec.train_groups;
    } else {
      all = read_dataset_csv(*cfg_.dataset_path);
    }
    auto split = split_dataset(all, train_groups);
    train_ = std::move(split.train);
    held_out_ = std::move(split.held_out);
    track("data", seconds_since(t0));
  }

  void fit_vb() {
    const auto t0 = std::chrono::steady_clock::now();
    auto [state, report] = run_vb(train_, cfg_.model, cfg_.vb_tol, cfg_.vb_max_iter);
    vb_state_ = std::move(state);
    vb_iterations_ = report.iterations;
    vb_seconds_ = report.wall_time_seconds;
    const auto dir = cfg_.out_dir / "vb";
    std::filesystem::create_directories(dir);
    write_vb_state_json(*vb_state_, dir / "state.json");
    add_file(dir / "state.json");
    write_vb_report_json(report, dir / "report.json");
    add_file(dir / "report.json");

    const double merge = cfg_.merge_tol ? *cfg_.merge_tol : default_merge_tol(train_);
    const auto summary = estimate_truncation(*vb_state_, merge, cfg_.prune_tol);
    json cj;
    cj["merge_tol"] = merge;
    cj["prune_tol"] = cfg_.prune_tol;
    cj["count"] = summary.count();
    auto& arr = cj["components"] = json::array();
    for (const auto& m : summary.components) {
      arr.push_back({{"location", m.location}, {"weight", m.weight},
                     {"variance", m.variance}});
    }
    write_json_file(cj, dir / "components.json");
    add_file(dir / "components.json");
    track("fit-vb", seconds_since(t0));
  }

  template <typename Trace>
  void write_gibbs_outputs(const Trace& trace, const std::string& name) {
    const auto dir = cfg_.out_dir / name;
    std::filesystem::create_directories(dir);
    write_trace_jsonl(trace, dir / "trace.jsonl");
    add_file(dir / "trace.jsonl");
    json hist;
    for (const auto& [count, freq] : count_components(trace)) {
      hist[std::to_string(count)] = freq;
    }
    write_json_file({{"component_count_posterior", hist}}, dir / "components.json");
    add_file(dir / "components.json");
  }

  void fit_polya() {
    const auto t0 = std::chrono::steady_clock::now();
    GibbsOptions opt;
    opt.aux_atoms = cfg_.aux_atoms;
    Rng rng(stage_seed(cfg_.seed, "polya"));
    polya_trace_ = run_polya_chain(train_, cfg_.model, opt, cfg_.polya_scans,
                                   cfg_.burnin_frac, cfg_.stride, rng);
    write_gibbs_outputs(*polya_trace_, "gibbs-polya");
    track("fit-gibbs-polya", seconds_since(t0));
  }

  void fit_blocked() {
    const auto t0 = std::chrono::steady_clock::now();
    GibbsOptions opt;
    Rng rng(stage_seed(cfg_.seed, "blocked"));
    blocked_trace_ = run_blocked_chain(train_, cfg_.model, opt, cfg_.blocked_scans,
                                       cfg_.burnin_frac, cfg_.stride, rng);
    write_gibbs_outputs(*blocked_trace_, "gibbs-blocked");
    track("fit-gibbs-blocked", seconds_since(t0));
  }

  void predict() {
    if (held_out_.empty()) return;
    const auto t0 = std::chrono::steady_clock::now();
    std::ofstream csv(cfg_.out_dir / "predictive.csv", std::ios::binary);
    if (!csv) throw IoError("cannot write predictive.csv");
    csv << "group_id,method,log_predictive,wall_time_seconds\n";
    char buf[64];
    Rng rng(stage_seed(cfg_.seed, "predict"));
    auto emit = [&](const std::string& id, const char* method, double value,
                    double secs) {
      std::snprintf(buf, sizeof(buf), "%.17g", value);
      csv << id << ',' << method << ',' << buf << ',';
      std::snprintf(buf, sizeof(buf), "%.6g", secs);
      csv << buf << '\n';
    };
    for (const auto& y : held_out_) {
      auto tp = std::chrono::steady_clock::now();
      const double lp_polya =
          predictive_mcmc(*polya_trace_, y, cfg_.model.alpha, train_.num_groups(),
                          cfg_.predictive, rng);
      emit(y.id, "polya", lp_polya, seconds_since(tp));
      log_pred_["polya"].push_back(lp_polya);

      tp = std::chrono::steady_clock::now();
      const double lp_blocked = predictive_mcmc(*blocked_trace_, y);
      emit(y.id, "blocked", lp_blocked, seconds_since(tp));
      log_pred_["blocked"].push_back(lp_blocked);

      tp = std::chrono::steady_clock::now();
      const double lp_vb = predictive_vb(*vb_state_, y, cfg_.predictive);
      emit(y.id, "vb", lp_vb, seconds_since(tp));
      log_pred_["vb"].push_back(lp_vb);
    }
    csv.close();
    add_file(cfg_.out_dir / "predictive.csv");
    track("predict", seconds_since(t0));
  }

  void compare() {
    if (held_out_.size() < 2) return;
    const auto t0 = std::chrono::steady_clock::now();
    json pairs = json::array();
    const std::vector<std::pair<std::string, std::string>> wanted{
        {"polya", "blocked"}, {"blocked", "vb"}, {"polya", "vb"}};
    for (const auto& [a, b] : wanted) {
      const auto res = compare_methods(log_pred_.at(a), log_pred_.at(b));
      pairs.push_back({{"a", a},
                       {"b", b},
                       {"mean_a", res.mean_a},
                       {"mean_b", res.mean_b},
                       {"t_pooled", res.t_pooled},
                       {"p_pooled", res.p_pooled},
                       {"dof_pooled", res.dof_pooled},
                       {"t_welch", res.t_welch},
                       {"p_welch", res.p_welch},
                       {"dof_welch", res.dof_welch},
                       {"degenerate", res.degenerate}});
    }
    write_json_file({{"pairs", pairs}}, cfg_.out_dir / "comparison.json");
    add_file(cfg_.out_dir / "comparison.json");
    track("compare", seconds_since(t0));
  }

  void write_engine_benchmark() {
    json engines = json::array();
    engines.push_back({{"engine", "vb"},
                       {"wall_time_seconds", vb_seconds_},
                       {"iterations", vb_iterations_}});
    engines.push_back({{"engine", "polya"},
                       {"wall_time_seconds", polya_trace_->meta.wall_time_seconds},
                       {"iterations", polya_trace_->meta.total_scans}});
    engines.push_back({{"engine", "blocked"},
                       {"wall_time_seconds", blocked_trace_->meta.wall_time_seconds},
                       {"iterations", blocked_trace_->meta.total_scans}});
    json j;
    j["seed"] = cfg_.seed;
    j["engines"] = engines;
    write_json_file(j, cfg_.out_dir / "benchmark.json");
    add_file(cfg_.out_dir / "benchmark.json");
    track("benchmark", 0.0);
  }

  void write_manifest() {
    json m;
    m["seed"] = cfg_.seed;
    auto& stages = m["completed_stages"] = json::array();
    for (const auto& s : result_.completed_stages) {
      stages.push_back({{"name", s.name}, {"wall_time_seconds", s.wall_time_seconds}});
    }
    auto& files = m["files"] = json::array();
    for (const auto& f : result_.files) {
      files.push_back({{"path", std::filesystem::relative(f, cfg_.out_dir).string()},
                       {"fnv1a64", fnv1a64_file(f)}});
    }
    write_json_file(m, cfg_.out_dir / "manifest.json");
  }

  ExperimentConfig cfg_;
  ExperimentResult result_;
  GroupedDataset train_;
  std::vector<HeldOutGroup> held_out_;
  std::optional<VBState> vb_state_;
  std::size_t vb_iterations_ = 0;
  double vb_seconds_ = 0.0;
  std::optional<PolyaTrace> polya_trace_;
  std::optional<BlockedTrace> blocked_trace_;
  std::map<std::string, std::vector<double>> log_pred_;
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  ExperimentRun run(config);
  return run.run();
}

BenchmarkResult benchmark(const ExperimentConfig& config) {
  config.validate();
  if (config.benchmark_engines.size() < 2) {
    throw ConfigError("benchmark requires at least two engines");
  }
  GroupedDataset all;
  std::size_t train_groups = config.train_groups;
  if (config.generator) {
    GroundTruth truth = make_ground_truth(*config.generator);
    Rng rng(stage_seed(config.seed, "generate"));
    all = generate_dataset(rng, truth, config.generator->num_groups,
                           config.generator->obs_per_group);
    train_groups = config.generator->train_groups;
  } else {
    all = read_dataset_csv(*config.dataset_path);
  }
  const auto split = split_dataset(all, train_groups);
  const auto& train = split.train;

  BenchmarkResult out;
  for (const auto& name : config.benchmark_engines) {
    BenchmarkEntry entry;
    entry.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    if (name == "vb") {
      auto [state, report] = run_vb(train, config.model, config.vb_tol, config.vb_max_iter);
      entry.iterations = report.iterations;
      entry.wall_time_seconds = seconds_since(t0);
    } else if (name == "blocked") {
      GibbsOptions opt;
      Rng rng(stage_seed(config.seed, "bench-blocked"));
      run_blocked_chain(train, config.model, opt, config.benchmark_scans,
                        config.burnin_frac, config.stride, rng);
      entry.iterations = config.benchmark_scans;
      entry.wall_time_seconds = seconds_since(t0);
      entry.seconds_per_scan =
          entry.wall_time_seconds / static_cast<double>(config.benchmark_scans);
    } else if (name == "polya") {
      GibbsOptions opt;
      opt.aux_atoms = config.aux_atoms;
      Rng rng(stage_seed(config.seed, "bench-polya"));
      run_polya_chain(train, config.model, opt, config.benchmark_scans,
                      config.burnin_frac, config.stride, rng);
      entry.iterations = config.benchmark_scans;
      entry.wall_time_seconds = seconds_since(t0);
      entry.seconds_per_scan =
          entry.wall_time_seconds / static_cast<double>(config.benchmark_scans);
    } else {
      throw ConfigError("unknown benchmark engine: " + name);
    }
    out.engines.push_back(entry);
  }

  double vb_time = 0.0, blocked_time = 0.0, blocked_per_scan = 0.0;
  for (const auto& e : out.engines) {
    if (e.name == "vb") vb_time = e.wall_time_seconds;
    if (e.name == "blocked") {
      blocked_time = e.wall_time_seconds;
      blocked_per_scan = e.seconds_per_scan;
    }
  }
  if (vb_time > 0.0 && blocked_time > 0.0) {
    out.blocked_over_vb = blocked_time / vb_time;
    out.blocked_seconds_paper_scale = blocked_per_scan * 2.5e6;
    out.ratio_paper_scale = out.blocked_seconds_paper_scale / vb_time;
  }

  std::filesystem::create_directories(config.out_dir);
  json j;
  j["seed"] = config.seed;
  auto& engines = j["engines"] = json::array();
  for (const auto& e : out.engines) {
    engines.push_back({{"name", e.name},
                       {"wall_time_seconds", e.wall_time_seconds},
                       {"iterations", e.iterations},
                       {"seconds_per_scan", e.seconds_per_scan}});
  }
  j["ratios"] = {{"blocked_over_vb", out.blocked_over_vb}};
  j["extrapolated"] = {{"blocked_scans_paper_scale", 2500000},
                       {"blocked_seconds_paper_scale", out.blocked_seconds_paper_scale},
                       {"ratio_paper_scale", out.ratio_paper_scale}};
  write_json_file(j, config.out_dir / "benchmark.json");
  return out;
}

}  // namespace dpvb
