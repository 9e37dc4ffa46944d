#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "dpvb/dataset.hpp"
#include "dpvb/special_math.hpp"

namespace dpvb {

/// Atoms and weights of a truncated random measure.
struct StickBreakingMeasure {
  std::vector<double> atoms;
  std::vector<double> weights;

  std::size_t size() const { return atoms.size(); }
  /// Enforces matching sizes, nonnegative weights summing to 1 (1e-10).
  void validate() const;
};

/// Model-level knobs shared by every engine. The hyper treatment is fixed:
/// the base distribution is normal with random (mu, tau2) and the prior on
/// (sigma2, mu, tau2) is flat except for 1/sigma2.
struct ModelConfig {
  std::size_t truncation = 10;  // B
  double alpha = 1.0;

  /// B >= 4 (keeps the tau2 factor proper downstream) and alpha > 0.
  void validate() const;
};

/// Simulation parameters behind a generated dataset.
struct GroundTruth {
  StickBreakingMeasure measure;
  double mu = 0.0;
  double tau2 = 1.0;
  double sigma2 = 1.0;
  std::vector<int> assignments;  // filled by generate_dataset, 0-based
};

/// v_1 = w_1, v_b = w_b * prod_{l<b}(1 - w_l). Requires every w in (0,1]
/// and w.back() == 1 (truncation convention); throws std::invalid_argument
/// otherwise.
std::vector<double> stick_break(std::span<const double> fractions);

/// Draws a truncated measure: atoms iid normal(mu, tau2), stick fractions
/// Beta(1, alpha) with the last forced to 1.
StickBreakingMeasure sample_truncated_dp(Rng& rng, double alpha, std::size_t truncation,
                                         double base_mean, double base_var);

/// Draws J groups of n observations each: a component per group from the
/// truth weights, then normal noise around that atom. Component choices are
/// recorded in truth.assignments.
GroupedDataset generate_dataset(Rng& rng, GroundTruth& truth, std::size_t num_groups,
                                std::size_t obs_per_group);

/// E[v_b] under independent Beta(c_b, d_b) stick fractions:
/// (c_b/(c_b+d_b)) * prod_{l<b} d_l/(c_l+d_l), except the last component,
/// which takes only the survival product because w_B == 1.
std::vector<double> expected_weights(std::span<const double> c, std::span<const double> d);

/// Log likelihood of a group summarized by (n, sum, sumsq) under
/// observation model normal(mean, variance).
double normal_group_loglik(std::size_t n, double sum, double sumsq,
                           double mean, double variance);

GroundTruth read_ground_truth_json(const std::filesystem::path& path);
void write_ground_truth_json(const GroundTruth& truth, const std::filesystem::path& path);

}  // namespace dpvb
