#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dpvb/dataset.hpp"
#include "dpvb/vb.hpp"

namespace dpvb {

struct MergedComponent {
  double location = 0.0;
  double weight = 0.0;
  double variance = 0.0;
};

/// Surviving components after merge/prune, weights renormalized to 1.
struct ComponentSummary {
  std::vector<MergedComponent> components;
  std::size_t count() const { return components.size(); }
};

/// Rules out components with weight below prune_tol, then single-linkage
/// merges survivors whose locations are within merge_tol (location and
/// variance become the weight-averaged values, weights sum), then
/// renormalizes. Throws std::invalid_argument if everything is pruned.
ComponentSummary estimate_truncation(std::span<const double> locations,
                                     std::span<const double> weights,
                                     std::span<const double> variances,
                                     double merge_tol, double prune_tol);

/// Same, reading locations a_b, expected weights E[v_b], variances b2_b
/// from a converged VB state.
ComponentSummary estimate_truncation(const VBState& state, double merge_tol,
                                     double prune_tol);

/// Default merge tolerance: 5% of the group-mean range.
double default_merge_tol(const GroupedDataset& data);

inline constexpr double kDefaultPruneTol = 0.02;

}  // namespace dpvb
