#include "dpvb/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace dpvb {

void GroupedDataset::add_group(std::string id, std::span<const double> values) {
  if (values.empty()) {
    throw std::invalid_argument("group '" + id + "' has no observations");
  }
  double s = 0.0, ss = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("group '" + id + "' contains a non-finite observation");
    }
    s += v;
    ss += v * v;
  }
  ids_.push_back(std::move(id));
  values_.insert(values_.end(), values.begin(), values.end());
  offsets_.push_back(values_.size());
  sums_.push_back(s);
  sumsqs_.push_back(ss);
}

GroupedDataset GroupedDataset::slice(std::size_t first, std::size_t n) const {
  if (first + n > num_groups()) {
    throw std::invalid_argument("dataset slice out of range");
  }
  GroupedDataset out;
  for (std::size_t j = first; j < first + n; ++j) {
    out.add_group(ids_[j], observations(j));
  }
  return out;
}

std::vector<double> GroupedDataset::group_means() const {
  std::vector<double> m(num_groups());
  for (std::size_t j = 0; j < m.size(); ++j) m[j] = mean(j);
  return m;
}

double GroupedDataset::grand_mean() const {
  double s = 0.0;
  for (double v : sums_) s += v;
  return s / static_cast<double>(total_count());
}

double GroupedDataset::pooled_within_variance() const {
  const std::size_t n = total_count();
  const std::size_t j = num_groups();
  if (n <= j) return 1.0;
  double ss = 0.0;
  for (std::size_t g = 0; g < j; ++g) {
    ss += sumsqs_[g] - sums_[g] * sums_[g] / static_cast<double>(count(g));
  }
  return ss / static_cast<double>(n - j);
}

double GroupedDataset::group_mean_variance() const {
  const std::size_t j = num_groups();
  if (j < 2) return 1.0;
  const auto means = group_means();
  double m = 0.0;
  for (double v : means) m += v;
  m /= static_cast<double>(j);
  double ss = 0.0;
  for (double v : means) ss += (v - m) * (v - m);
  return ss / static_cast<double>(j - 1);
}

GroupedDataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open dataset file: " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw std::invalid_argument("empty dataset file: " + path.string());
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "group_id,value") {
    throw std::invalid_argument("dataset CSV must start with header 'group_id,value'");
  }
  // Accumulate per group id in order of first appearance.
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> groups;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw std::invalid_argument("malformed dataset row at line " + std::to_string(lineno));
    }
    std::string id = line.substr(0, comma);
    const std::string value_str = line.substr(comma + 1);
    double value = 0.0;
    const auto* begin = value_str.data();
    const auto* end = begin + value_str.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end) {
      throw std::invalid_argument("bad numeric value at line " + std::to_string(lineno));
    }
    auto it = groups.find(id);
    if (it == groups.end()) {
      order.push_back(id);
      it = groups.emplace(std::move(id), std::vector<double>{}).first;
    }
    it->second.push_back(value);
  }
  GroupedDataset data;
  for (const auto& id : order) {
    data.add_group(id, groups.at(id));
  }
  if (data.num_groups() == 0) {
    throw std::invalid_argument("dataset has no observations: " + path.string());
  }
  return data;
}

void write_dataset_csv(const GroupedDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);  // binary: keep LF on all platforms
  if (!out) {
    throw std::invalid_argument("cannot write dataset file: " + path.string());
  }
  out << "group_id,value\n";
  char buf[32];
  for (std::size_t j = 0; j < data.num_groups(); ++j) {
    for (double v : data.observations(j)) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << data.group_id(j) << ',' << buf << '\n';
    }
  }
}

}  // namespace dpvb
