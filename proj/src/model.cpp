#include "dpvb/model.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace dpvb {

void StickBreakingMeasure::validate() const {
  if (atoms.size() != weights.size() || atoms.empty()) {
    throw std::invalid_argument("measure atoms/weights size mismatch");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("measure weights must be nonnegative");
    }
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-10) {
    throw std::invalid_argument("measure weights must sum to 1");
  }
}

void ModelConfig::validate() const {
  if (truncation < 4) {
    throw std::invalid_argument("truncation level must be at least 4");
  }
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("concentration alpha must be positive");
  }
}

std::vector<double> stick_break(std::span<const double> fractions) {
  if (fractions.empty()) {
    throw std::invalid_argument("stick_break: empty fraction vector");
  }
  for (double w : fractions) {
    if (!(w > 0.0 && w <= 1.0)) {
      throw std::invalid_argument("stick_break: fractions must lie in (0,1]");
    }
  }
  if (fractions.back() != 1.0) {
    throw std::invalid_argument("stick_break: last fraction must equal 1");
  }
  std::vector<double> v(fractions.size());
  double remaining = 1.0;
  for (std::size_t b = 0; b < fractions.size(); ++b) {
    v[b] = fractions[b] * remaining;
    remaining *= 1.0 - fractions[b];
  }
  return v;
}

StickBreakingMeasure sample_truncated_dp(Rng& rng, double alpha, std::size_t truncation,
                                         double base_mean, double base_var) {
  if (truncation < 1) throw std::invalid_argument("truncation must be at least 1");
  if (!(alpha > 0.0)) throw std::domain_error("alpha must be positive");
  StickBreakingMeasure m;
  m.atoms.resize(truncation);
  std::vector<double> w(truncation);
  for (std::size_t b = 0; b < truncation; ++b) {
    m.atoms[b] = sample_normal(rng, base_mean, base_var);
    w[b] = (b + 1 == truncation) ? 1.0 : sample_beta(rng, 1.0, alpha);
  }
  m.weights = stick_break(w);
  return m;
}

GroupedDataset generate_dataset(Rng& rng, GroundTruth& truth, std::size_t num_groups,
                                std::size_t obs_per_group) {
  truth.measure.validate();
  if (!(truth.sigma2 > 0.0) || !(truth.tau2 > 0.0)) {
    throw std::invalid_argument("ground truth variances must be positive");
  }
  if (num_groups == 0 || obs_per_group == 0) {
    throw std::invalid_argument("need at least one group and one observation");
  }
  truth.assignments.resize(num_groups);
  GroupedDataset data;
  std::vector<double> obs(obs_per_group);
  for (std::size_t j = 0; j < num_groups; ++j) {
    const auto b = sample_categorical(rng, truth.measure.weights);
    truth.assignments[j] = static_cast<int>(b);
    const double theta = truth.measure.atoms[b];
    for (auto& y : obs) {
      y = sample_normal(rng, theta, truth.sigma2);
    }
    data.add_group("g" + std::to_string(j + 1), obs);
  }
  return data;
}

std::vector<double> expected_weights(std::span<const double> c, std::span<const double> d) {
  if (c.size() != d.size() || c.empty()) {
    throw std::invalid_argument("expected_weights: parameter length mismatch");
  }
  for (std::size_t b = 0; b < c.size(); ++b) {
    if (!(c[b] > 0.0) || !(d[b] > 0.0)) {
      throw std::invalid_argument("expected_weights: parameters must be positive");
    }
  }
  const std::size_t B = c.size();
  std::vector<double> v(B);
  double survival = 1.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (b + 1 == B) {
      v[b] = survival;  // w_B == 1
    } else {
      v[b] = survival * c[b] / (c[b] + d[b]);
      survival *= d[b] / (c[b] + d[b]);
    }
  }
  return v;
}

double normal_group_loglik(std::size_t n, double sum, double sumsq,
                           double mean, double variance) {
  const double nn = static_cast<double>(n);
  const double ss = sumsq - 2.0 * mean * sum + nn * mean * mean;
  return -0.5 * nn * std::log(2.0 * std::numbers::pi * variance) - ss / (2.0 * variance);
}

GroundTruth read_ground_truth_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open ground truth file: " + path.string());
  nlohmann::json j;
  in >> j;
  GroundTruth t;
  t.measure.atoms = j.at("atoms").get<std::vector<double>>();
  t.measure.weights = j.at("weights").get<std::vector<double>>();
  t.mu = j.at("mu").get<double>();
  t.tau2 = j.at("tau2").get<double>();
  t.sigma2 = j.at("sigma2").get<double>();
  if (j.contains("assignments")) {
    for (int a : j.at("assignments").get<std::vector<int>>()) {
      t.assignments.push_back(a - 1);  // stored 1-based
    }
  }
  t.measure.validate();
  return t;
}

void write_ground_truth_json(const GroundTruth& truth, const std::filesystem::path& path) {
  nlohmann::json j;
  j["atoms"] = truth.measure.atoms;
  j["weights"] = truth.measure.weights;
  j["mu"] = truth.mu;
  j["tau2"] = truth.tau2;
  j["sigma2"] = truth.sigma2;
  std::vector<int> assignments;
  assignments.reserve(truth.assignments.size());
  for (int a : truth.assignments) assignments.push_back(a + 1);
  j["assignments"] = assignments;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write ground truth file: " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace dpvb
