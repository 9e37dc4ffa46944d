#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <vector>

#include "dpvb/dataset.hpp"
#include "dpvb/model.hpp"
#include "dpvb/special_math.hpp"

namespace dpvb {

/// Per-run sampler knobs. The update_* switches exist so oracle tests can
/// hold hyperparameters fixed; production runs leave them on.
struct GibbsOptions {
  double alpha = 1.0;
  std::size_t aux_atoms = 3;  // auxiliary slots per label update
  bool update_mu = true;
  bool update_tau2 = true;
  bool update_sigma2 = true;
};

/// State of the marginal (urn-type) chain: contiguous labels 0..K-1, one
/// atom per occupied cluster.
struct PolyaState {
  std::vector<int> labels;    // one per group
  std::vector<double> atoms;  // K distinct values
  double mu = 0.0;
  double tau2 = 1.0;
  double sigma2 = 1.0;
  long tau2_skips = 0;  // scans where K < 3 left tau2 untouched

  std::size_t num_clusters() const { return atoms.size(); }
  /// Contiguity: every cluster 0..K-1 has at least one member.
  void validate(std::size_t num_groups) const;
};

/// State of the truncated stick-breaking chain.
struct BlockedState {
  std::vector<int> labels;       // one per group, in 0..B-1
  std::vector<double> atoms;     // B values
  std::vector<double> sticks;    // w, sticks.back() == 1
  std::vector<double> weights;   // v = stick_break(sticks)
  double mu = 0.0;
  double tau2 = 1.0;
  double sigma2 = 1.0;

  std::size_t truncation() const { return atoms.size(); }
  void validate(std::size_t num_groups) const;
};

struct TraceMeta {
  std::size_t total_scans = 0;
  double burnin_frac = 0.0;
  std::size_t stride = 1;
  double wall_time_seconds = 0.0;
  long tau2_skips = 0;
  std::uint64_t seed = 0;
};

struct PolyaTrace {
  std::vector<PolyaState> states;
  TraceMeta meta;
};

struct BlockedTrace {
  std::vector<BlockedState> states;
  TraceMeta meta;
};

/// One full scan of the urn-type sampler: label updates with aux_atoms
/// auxiliary draws (a singleton's atom is reused as the first auxiliary),
/// atom conditionals, then (sigma2, mu, tau2). The tau2 draw is skipped
/// when K < 3 would make its conditional improper.
void polya_scan(PolyaState& state, const GroupedDataset& data,
                const GibbsOptions& opt, Rng& rng);

/// One full scan of the blocked sampler: labels, atoms (unoccupied ones
/// refreshed from the base), sticks w_b ~ Beta(M_b+1, alpha+sum_{l>b} M_l),
/// then (sigma2, mu, tau2). tau2 updates require truncation >= 3.
void blocked_scan(BlockedState& state, const GroupedDataset& data,
                  const GibbsOptions& opt, Rng& rng);

/// Unnormalized log label probabilities ln v_b + ln f(y_j | zeta_b, sigma2)
/// for group j (the blocked Step 1 kernel, exposed for direct testing).
std::vector<double> blocked_label_log_probs(const BlockedState& state,
                                            const GroupedDataset& data, std::size_t j);

/// Stick conditional of the blocked Step 3 for given occupancies.
std::vector<double> sample_stick_posterior(std::span<const std::size_t> occupancy,
                                           double alpha, Rng& rng);

/// Data-driven starts: group means assigned to quantile-spaced seeds
/// (ceil(J/4) seeds for the urn chain, B for the blocked chain), grand mean
/// for mu, group-mean variance for tau2, pooled within-group variance for
/// sigma2.
PolyaState init_polya_state(const GroupedDataset& data);
BlockedState init_blocked_state(const GroupedDataset& data, std::size_t truncation,
                                double alpha);

/// Runs `total` scans from the data-driven start, retaining every stride-th
/// state after floor(total * burnin_frac) burn-in scans.
PolyaTrace run_polya_chain(const GroupedDataset& data, const ModelConfig& model,
                           const GibbsOptions& opt, std::size_t total,
                           double burnin_frac, std::size_t stride, Rng& rng);
BlockedTrace run_blocked_chain(const GroupedDataset& data, const ModelConfig& model,
                               const GibbsOptions& opt, std::size_t total,
                               double burnin_frac, std::size_t stride, Rng& rng);

std::size_t occupied_components(const BlockedState& state);

/// Distribution (relative frequencies) of the distinct-component count
/// over retained states: K for urn traces, occupied components for blocked.
std::map<std::size_t, double> count_components(const PolyaTrace& trace);
std::map<std::size_t, double> count_components(const BlockedTrace& trace);

/// JSON-lines export: one state per line (1-based labels), then a footer
/// record carrying wall time and the retention policy.
void write_trace_jsonl(const PolyaTrace& trace, const std::filesystem::path& path);
void write_trace_jsonl(const BlockedTrace& trace, const std::filesystem::path& path);
PolyaTrace read_polya_trace_jsonl(const std::filesystem::path& path);
BlockedTrace read_blocked_trace_jsonl(const std::filesystem::path& path);

}  // namespace dpvb
