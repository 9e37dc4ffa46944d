#include "dpvb/truncation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dpvb/model.hpp"

namespace dpvb {

ComponentSummary estimate_truncation(std::span<const double> locations,
                                     std::span<const double> weights,
                                     std::span<const double> variances,
                                     double merge_tol, double prune_tol) {
  const std::size_t B = locations.size();
  if (B == 0 || weights.size() != B || variances.size() != B) {
    throw std::invalid_argument("estimate_truncation: input size mismatch");
  }
  if (!(merge_tol >= 0.0) || !(prune_tol >= 0.0) || prune_tol >= 1.0) {
    throw std::invalid_argument("estimate_truncation: bad tolerances");
  }

  // Empty components are ruled out individually before combining, so a
  // cloud of near-zero components cannot pool into a phantom survivor.
  std::vector<std::size_t> order;
  for (std::size_t b = 0; b < B; ++b) {
    if (weights[b] >= prune_tol) order.push_back(b);
  }
  if (order.empty()) {
    throw std::invalid_argument("estimate_truncation: prune tolerance removed everything");
  }
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return locations[i] < locations[j]; });

  // On a line, single linkage reduces to chaining over sorted gaps.
  struct Cluster {
    double weight = 0.0, weighted_loc = 0.0, weighted_var = 0.0;
    double plain_loc = 0.0, plain_var = 0.0;
    std::size_t size = 0;
  };
  ComponentSummary summary;
  Cluster current;
  double last_location = 0.0;
  auto close = [&]() {
    if (current.size == 0) return;
    MergedComponent m;
    m.weight = current.weight;
    if (current.weight > 0.0) {
      m.location = current.weighted_loc / current.weight;
      m.variance = current.weighted_var / current.weight;
    } else {  // zero-weight chain: fall back to plain averages
      m.location = current.plain_loc / static_cast<double>(current.size);
      m.variance = current.plain_var / static_cast<double>(current.size);
    }
    summary.components.push_back(m);
  };
  for (std::size_t idx : order) {
    if (current.size > 0 && locations[idx] - last_location > merge_tol) {
      close();
      current = {};
    }
    current.weight += weights[idx];
    current.weighted_loc += weights[idx] * locations[idx];
    current.weighted_var += weights[idx] * variances[idx];
    current.plain_loc += locations[idx];
    current.plain_var += variances[idx];
    ++current.size;
    last_location = locations[idx];
  }
  close();

  double total = 0.0;
  for (const auto& m : summary.components) total += m.weight;
  for (auto& m : summary.components) m.weight /= total;
  return summary;
}

ComponentSummary estimate_truncation(const VBState& state, double merge_tol,
                                     double prune_tol) {
  state.validate();
  const auto ev = expected_weights(state.c, state.d);
  return estimate_truncation(state.a, ev, state.b2, merge_tol, prune_tol);
}

double default_merge_tol(const GroupedDataset& data) {
  const auto means = data.group_means();
  const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
  return 0.05 * (*hi - *lo);
}

}  // namespace dpvb
