#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dpvb {

// Grouped real observations, stored contiguously with per-group offsets.
// Count, sum and sum-of-squares are cached per group at insertion time;
// every engine's inner loop works from those three numbers.
// Immutable once built (add_group is the only mutator) and safe to share
// across concurrent engine runs.
class GroupedDataset {
 public:
  GroupedDataset() { offsets_.push_back(0); }

  /// Appends a group. Throws std::invalid_argument on an empty group or a
  /// non-finite observation.
  void add_group(std::string id, std::span<const double> values);

  std::size_t num_groups() const { return ids_.size(); }
  std::size_t total_count() const { return values_.size(); }

  const std::string& group_id(std::size_t j) const { return ids_[j]; }
  std::size_t count(std::size_t j) const { return offsets_[j + 1] - offsets_[j]; }
  double sum(std::size_t j) const { return sums_[j]; }
  double sumsq(std::size_t j) const { return sumsqs_[j]; }
  double mean(std::size_t j) const { return sums_[j] / static_cast<double>(count(j)); }

  std::span<const double> observations(std::size_t j) const {
    return {values_.data() + offsets_[j], count(j)};
  }

  /// Contiguous sub-dataset [first, first+n).
  GroupedDataset slice(std::size_t first, std::size_t n) const;

  std::vector<double> group_means() const;
  double grand_mean() const;
  /// sum_j sum_i (y_ij - mean_j)^2 / (N - J); falls back to 1 when N == J.
  double pooled_within_variance() const;
  /// Sample variance of the group means; falls back to 1 when J < 2.
  double group_mean_variance() const;

 private:
  std::vector<std::string> ids_;
  std::vector<double> values_;
  std::vector<std::size_t> offsets_;
  std::vector<double> sums_;
  std::vector<double> sumsqs_;
};

/// Reads `group_id,value` CSV (header required). Groups are ordered by
/// first appearance. Throws std::invalid_argument on malformed content.
GroupedDataset read_dataset_csv(const std::filesystem::path& path);

/// Writes `group_id,value` CSV, UTF-8, LF line endings, one row per
/// observation, full round-trip precision.
void write_dataset_csv(const GroupedDataset& data, const std::filesystem::path& path);

}  // namespace dpvb
