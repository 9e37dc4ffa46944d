#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpvb/dataset.hpp"
#include "dpvb/gibbs.hpp"
#include "dpvb/model.hpp"
#include "dpvb/predictive.hpp"
#include "dpvb/truncation.hpp"
#include "dpvb/vb.hpp"

namespace dpvb {

// Exit-code mapping used by the CLI: 2 config, 3 engine, 4 I/O.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EngineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Synthetic-data recipe (the paper's simulation shape by default).
/// Weights are relative and get normalized when the truth is built.
struct GeneratorSpec {
  std::vector<double> atoms{-2.22, -0.54, 1.01, 4.28, 7.10};
  std::vector<double> weights{0.35, 0.14, 0.13, 0.13, 0.26};
  double mu = 0.0;
  double tau2 = 16.0;
  double sigma2 = 0.64;
  std::size_t num_groups = 60;
  std::size_t obs_per_group = 80;
  std::size_t train_groups = 50;  // first train_groups train, rest held out
};

GroundTruth make_ground_truth(const GeneratorSpec& spec);

struct ExperimentConfig {
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> dataset_path;
  std::optional<std::filesystem::path> truth_path;
  std::optional<GeneratorSpec> generator;
  std::size_t train_groups = 0;  // 0: all groups train (no held-out block)

  ModelConfig model{10, 1.0};
  double vb_tol = 1e-6;
  std::size_t vb_max_iter = 500;

  std::size_t polya_scans = 20000;
  std::size_t blocked_scans = 10000;
  double burnin_frac = 0.8;
  std::size_t stride = 25;
  std::size_t aux_atoms = 3;

  PredictiveOptions predictive;
  std::optional<double> merge_tol;  // empty: 5% of group-mean range
  double prune_tol = kDefaultPruneTol;

  std::size_t benchmark_scans = 100000;
  std::vector<std::string> benchmark_engines{"vb", "blocked"};

  /// Sanity checks; throws ConfigError.
  void validate() const;
};

/// Parses JSON config; unknown keys are rejected. Throws ConfigError.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config_json(const std::string& text);

/// Paper-shaped defaults with everything generated (used by the
/// reproduce subcommand when no config file is given).
ExperimentConfig paper_replica_config(std::uint64_t seed,
                                      const std::filesystem::path& out_dir);

struct StageResult {
  std::string name;
  double wall_time_seconds = 0.0;
};

struct ExperimentResult {
  std::vector<StageResult> completed_stages;
  std::vector<std::filesystem::path> files;
};

/// Full pipeline: dataset (generated or loaded), VB fit + truncation
/// estimate, both Gibbs fits with component-count histograms, predictive
/// report for the held-out block, pairwise t tests, manifest. On engine
/// failure the manifest of completed stages is still written before the
/// EngineError propagates.
ExperimentResult run_experiment(const ExperimentConfig& config);

struct BenchmarkEntry {
  std::string name;
  double wall_time_seconds = 0.0;
  std::size_t iterations = 0;        // VB iterations or MCMC scans
  double seconds_per_scan = 0.0;     // MCMC engines only
};

struct BenchmarkResult {
  std::vector<BenchmarkEntry> engines;
  double blocked_over_vb = 0.0;
  double blocked_seconds_paper_scale = 0.0;  // seconds_per_scan * 2.5e6
  double ratio_paper_scale = 0.0;
};

/// Times the selected engines on the configured dataset; requires at least
/// two engines. Writes benchmark.json into the output directory.
BenchmarkResult benchmark(const ExperimentConfig& config);

/// FNV-1a 64 content hash, hex encoded (manifest entries).
std::string fnv1a64_file(const std::filesystem::path& path);

/// Re-hashes every file listed in <dir>/manifest.json.
bool verify_manifest(const std::filesystem::path& dir);

}  // namespace dpvb
