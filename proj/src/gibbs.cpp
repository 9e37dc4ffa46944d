#include "dpvb/gibbs.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace dpvb {

namespace {

std::vector<double> quantile_seeds(std::vector<double> sorted_means, std::size_t count) {
  std::sort(sorted_means.begin(), sorted_means.end());
  std::vector<double> seeds(count);
  const std::size_t n = sorted_means.size();
  for (std::size_t i = 0; i < count; ++i) {
    const double pos = (static_cast<double>(i) + 0.5) / static_cast<double>(count) *
                       static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    const std::size_t hi = std::min(lo + 1, n - 1);
    seeds[i] = sorted_means[lo] * (1.0 - frac) + sorted_means[hi] * frac;
  }
  return seeds;
}

std::size_t nearest_seed(double value, const std::vector<double>& seeds) {
  std::size_t best = 0;
  double best_d = std::abs(value - seeds[0]);
  for (std::size_t i = 1; i < seeds.size(); ++i) {
    const double d = std::abs(value - seeds[i]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

void draw_hyperparameters(std::span<const double> atoms, const GroupedDataset& data,
                          std::span<const int> labels, const GibbsOptions& opt,
                          double& mu, double& tau2, double& sigma2, long* tau2_skips,
                          Rng& rng) {
  const std::size_t K = atoms.size();
  if (opt.update_sigma2) {
    double ss = 0.0;
    for (std::size_t j = 0; j < data.num_groups(); ++j) {
      const double z = atoms[labels[j]];
      ss += data.sumsq(j) - 2.0 * z * data.sum(j) +
            static_cast<double>(data.count(j)) * z * z;
    }
    sigma2 = sample_inverse_gamma(rng, 0.5 * static_cast<double>(data.total_count()),
                                  std::max(0.5 * ss, 1e-300));
  }
  if (opt.update_mu) {
    double zbar = 0.0;
    for (double z : atoms) zbar += z;
    zbar /= static_cast<double>(K);
    mu = sample_normal(rng, zbar, tau2 / static_cast<double>(K));
  }
  if (opt.update_tau2) {
    if (K >= 3) {
      double ss = 0.0;
      for (double z : atoms) ss += (z - mu) * (z - mu);
      tau2 = sample_inverse_gamma(rng, 0.5 * static_cast<double>(K) - 1.0,
                                  std::max(0.5 * ss, 1e-300));
    } else if (tau2_skips != nullptr) {
      ++*tau2_skips;  // conditional improper; keep the previous value
    }
  }
}

double sample_atom_conditional(double n_k, double sum_k, double mu, double tau2,
                               double sigma2, Rng& rng) {
  const double precision = n_k / sigma2 + 1.0 / tau2;
  const double mean = (sum_k / sigma2 + mu / tau2) / precision;
  return sample_normal(rng, mean, 1.0 / precision);
}

template <typename State, typename Trace, typename ScanFn>
Trace run_chain(State state, const GroupedDataset& data, const GibbsOptions& opt,
                std::size_t total, double burnin_frac, std::size_t stride, Rng& rng,
                ScanFn scan) {
  if (stride == 0 || total < stride) {
    throw std::invalid_argument("run_chain: need total >= stride >= 1");
  }
  if (!(burnin_frac >= 0.0 && burnin_frac < 1.0)) {
    throw std::invalid_argument("run_chain: burnin fraction must lie in [0,1)");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto burnin = static_cast<std::size_t>(static_cast<double>(total) * burnin_frac);
  Trace trace;
  trace.meta.total_scans = total;
  trace.meta.burnin_frac = burnin_frac;
  trace.meta.stride = stride;
  trace.meta.seed = rng.seed();
  trace.states.reserve((total - burnin) / stride + 1);
  for (std::size_t t = 1; t <= total; ++t) {
    scan(state, data, opt, rng);
    if (t > burnin && (t - burnin) % stride == 0) {
      trace.states.push_back(state);
    }
  }
  trace.meta.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return trace;
}

}  // namespace

void PolyaState::validate(std::size_t num_groups) const {
  if (labels.size() != num_groups || atoms.empty()) {
    throw std::invalid_argument("Polya state shape mismatch");
  }
  std::vector<bool> used(atoms.size(), false);
  for (int c : labels) {
    if (c < 0 || static_cast<std::size_t>(c) >= atoms.size()) {
      throw std::invalid_argument("Polya state has an out-of-range label");
    }
    used[c] = true;
  }
  for (bool u : used) {
    if (!u) throw std::invalid_argument("Polya state has an unoccupied atom");
  }
  if (!(tau2 > 0.0) || !(sigma2 > 0.0)) {
    throw std::invalid_argument("Polya state variances must be positive");
  }
}

void BlockedState::validate(std::size_t num_groups) const {
  const std::size_t B = atoms.size();
  if (labels.size() != num_groups || B == 0 || sticks.size() != B ||
      weights.size() != B) {
    throw std::invalid_argument("blocked state shape mismatch");
  }
  for (int c : labels) {
    if (c < 0 || static_cast<std::size_t>(c) >= B) {
      throw std::invalid_argument("blocked state has an out-of-range label");
    }
  }
  if (sticks.back() != 1.0) {
    throw std::invalid_argument("blocked state must have w_B == 1");
  }
  const auto v = stick_break(sticks);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (std::abs(v[b] - weights[b]) > 1e-10) {
      throw std::invalid_argument("blocked state weights are out of sync with sticks");
    }
    total += weights[b];
  }
  if (std::abs(total - 1.0) > 1e-10) {
    throw std::invalid_argument("blocked state weights must sum to 1");
  }
  if (!(tau2 > 0.0) || !(sigma2 > 0.0)) {
    throw std::invalid_argument("blocked state variances must be positive");
  }
}

void polya_scan(PolyaState& state, const GroupedDataset& data,
                const GibbsOptions& opt, Rng& rng) {
  const std::size_t J = data.num_groups();
  state.validate(J);
  if (opt.aux_atoms < 1) throw std::invalid_argument("need at least one auxiliary atom");
  if (!(opt.alpha > 0.0)) throw std::invalid_argument("alpha must be positive");

  std::vector<int> counts(state.atoms.size(), 0);
  for (int c : state.labels) ++counts[c];

  // Step 1: label updates with auxiliary atoms.
  std::vector<double> candidates;
  std::vector<double> logp;
  const double log_alpha_s =
      std::log(opt.alpha) - std::log(static_cast<double>(opt.aux_atoms));
  for (std::size_t j = 0; j < J; ++j) {
    const int old = state.labels[j];
    --counts[old];
    bool was_singleton = counts[old] == 0;
    double singleton_atom = 0.0;
    if (was_singleton) {
      singleton_atom = state.atoms[old];
      state.atoms.erase(state.atoms.begin() + old);
      counts.erase(counts.begin() + old);
      for (auto& c : state.labels) {
        if (c > old) --c;
      }
    }
    const std::size_t k_minus = state.atoms.size();
    candidates.assign(state.atoms.begin(), state.atoms.end());
    for (std::size_t t = 0; t < opt.aux_atoms; ++t) {
      if (t == 0 && was_singleton) {
        candidates.push_back(singleton_atom);
      } else {
        candidates.push_back(sample_normal(rng, state.mu, state.tau2));
      }
    }
    logp.resize(candidates.size());
    for (std::size_t a = 0; a < candidates.size(); ++a) {
      const double ll = normal_group_loglik(data.count(j), data.sum(j), data.sumsq(j),
                                            candidates[a], state.sigma2);
      logp[a] = (a < k_minus ? std::log(static_cast<double>(counts[a])) : log_alpha_s) + ll;
    }
    const std::size_t pick = sample_categorical_log(rng, logp);
    if (pick < k_minus) {
      state.labels[j] = static_cast<int>(pick);
      ++counts[pick];
    } else {
      state.atoms.push_back(candidates[pick]);
      counts.push_back(1);
      state.labels[j] = static_cast<int>(k_minus);
    }
  }

  // Step 2: occupied-atom conditionals.
  const std::size_t K = state.atoms.size();
  std::vector<double> n_k(K, 0.0), sum_k(K, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    n_k[state.labels[j]] += static_cast<double>(data.count(j));
    sum_k[state.labels[j]] += data.sum(j);
  }
  for (std::size_t k = 0; k < K; ++k) {
    state.atoms[k] =
        sample_atom_conditional(n_k[k], sum_k[k], state.mu, state.tau2, state.sigma2, rng);
  }

  // Step 3.
  draw_hyperparameters(state.atoms, data, state.labels, opt, state.mu, state.tau2,
                       state.sigma2, &state.tau2_skips, rng);
}

std::vector<double> blocked_label_log_probs(const BlockedState& state,
                                            const GroupedDataset& data, std::size_t j) {
  const std::size_t B = state.truncation();
  std::vector<double> logp(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double lw = state.weights[b] > 0.0
                          ? std::log(state.weights[b])
                          : -std::numeric_limits<double>::infinity();
    logp[b] = lw + normal_group_loglik(data.count(j), data.sum(j), data.sumsq(j),
                                       state.atoms[b], state.sigma2);
  }
  return logp;
}

std::vector<double> sample_stick_posterior(std::span<const std::size_t> occupancy,
                                           double alpha, Rng& rng) {
  if (occupancy.empty()) throw std::invalid_argument("empty occupancy vector");
  const std::size_t B = occupancy.size();
  std::size_t remaining = 0;
  for (std::size_t m : occupancy) remaining += m;
  std::vector<double> w(B);
  for (std::size_t b = 0; b + 1 < B; ++b) {
    remaining -= occupancy[b];
    w[b] = sample_beta(rng, static_cast<double>(occupancy[b]) + 1.0,
                       alpha + static_cast<double>(remaining));
  }
  w[B - 1] = 1.0;
  return w;
}

void blocked_scan(BlockedState& state, const GroupedDataset& data,
                  const GibbsOptions& opt, Rng& rng) {
  const std::size_t J = data.num_groups();
  state.validate(J);
  if (!(opt.alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  const std::size_t B = state.truncation();
  if (opt.update_tau2 && B < 3) {
    throw std::invalid_argument("tau2 updates need truncation >= 3");
  }

  // Step 1: labels.
  for (std::size_t j = 0; j < J; ++j) {
    const auto logp = blocked_label_log_probs(state, data, j);
    state.labels[j] = static_cast<int>(sample_categorical_log(rng, logp));
  }

  // Step 2: atoms; unoccupied components are refreshed from the base.
  std::vector<std::size_t> occupancy(B, 0);
  std::vector<double> n_b(B, 0.0), sum_b(B, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    ++occupancy[state.labels[j]];
    n_b[state.labels[j]] += static_cast<double>(data.count(j));
    sum_b[state.labels[j]] += data.sum(j);
  }
  for (std::size_t b = 0; b < B; ++b) {
    if (occupancy[b] == 0) {
      state.atoms[b] = sample_normal(rng, state.mu, state.tau2);
    } else {
      state.atoms[b] =
          sample_atom_conditional(n_b[b], sum_b[b], state.mu, state.tau2, state.sigma2, rng);
    }
  }

  // Step 3: sticks.
  state.sticks = sample_stick_posterior(occupancy, opt.alpha, rng);
  state.weights = stick_break(state.sticks);

  // Step 4.
  draw_hyperparameters(state.atoms, data, state.labels, opt, state.mu, state.tau2,
                       state.sigma2, nullptr, rng);
}

PolyaState init_polya_state(const GroupedDataset& data) {
  const std::size_t J = data.num_groups();
  const std::size_t num_seeds = (J + 3) / 4;
  const auto means = data.group_means();
  const auto seeds = quantile_seeds(means, std::max<std::size_t>(num_seeds, 1));

  std::vector<int> assignment(J);
  for (std::size_t j = 0; j < J; ++j) {
    assignment[j] = static_cast<int>(nearest_seed(means[j], seeds));
  }
  // Drop empty seeds, relabel contiguously, center atoms on their members.
  std::vector<int> remap(seeds.size(), -1);
  PolyaState state;
  std::vector<double> acc;
  std::vector<int> cnt;
  state.labels.resize(J);
  for (std::size_t j = 0; j < J; ++j) {
    int& slot = remap[assignment[j]];
    if (slot < 0) {
      slot = static_cast<int>(state.atoms.size());
      state.atoms.push_back(0.0);
      acc.push_back(0.0);
      cnt.push_back(0);
    }
    state.labels[j] = slot;
    acc[slot] += means[j];
    ++cnt[slot];
  }
  for (std::size_t k = 0; k < state.atoms.size(); ++k) {
    state.atoms[k] = acc[k] / static_cast<double>(cnt[k]);
  }
  state.mu = data.grand_mean();
  state.tau2 = std::max(data.group_mean_variance(), 1e-8);
  state.sigma2 = std::max(data.pooled_within_variance(), 1e-8);
  return state;
}

BlockedState init_blocked_state(const GroupedDataset& data, std::size_t truncation,
                                double alpha) {
  if (truncation == 0) throw std::invalid_argument("truncation must be at least 1");
  const std::size_t J = data.num_groups();
  const auto means = data.group_means();
  BlockedState state;
  state.atoms = quantile_seeds(means, truncation);
  state.labels.resize(J);
  std::vector<std::size_t> occupancy(truncation, 0);
  for (std::size_t j = 0; j < J; ++j) {
    state.labels[j] = static_cast<int>(nearest_seed(means[j], state.atoms));
    ++occupancy[state.labels[j]];
  }
  // Deterministic sticks at the mean of their conditional.
  state.sticks.resize(truncation);
  std::size_t remaining = J;
  for (std::size_t b = 0; b + 1 < truncation; ++b) {
    remaining -= occupancy[b];
    const double shape1 = static_cast<double>(occupancy[b]) + 1.0;
    const double shape2 = alpha + static_cast<double>(remaining);
    state.sticks[b] = shape1 / (shape1 + shape2);
  }
  state.sticks[truncation - 1] = 1.0;
  state.weights = stick_break(state.sticks);
  state.mu = data.grand_mean();
  state.tau2 = std::max(data.group_mean_variance(), 1e-8);
  state.sigma2 = std::max(data.pooled_within_variance(), 1e-8);
  return state;
}

PolyaTrace run_polya_chain(const GroupedDataset& data, const ModelConfig& model,
                           const GibbsOptions& opt, std::size_t total,
                           double burnin_frac, std::size_t stride, Rng& rng) {
  model.validate();
  GibbsOptions o = opt;
  o.alpha = model.alpha;
  auto trace = run_chain<PolyaState, PolyaTrace>(
      init_polya_state(data), data, o, total, burnin_frac, stride, rng,
      [](PolyaState& s, const GroupedDataset& d, const GibbsOptions& go, Rng& r) {
        polya_scan(s, d, go, r);
      });
  if (!trace.states.empty()) {
    trace.meta.tau2_skips = trace.states.back().tau2_skips;
  }
  return trace;
}

BlockedTrace run_blocked_chain(const GroupedDataset& data, const ModelConfig& model,
                               const GibbsOptions& opt, std::size_t total,
                               double burnin_frac, std::size_t stride, Rng& rng) {
  model.validate();
  GibbsOptions o = opt;
  o.alpha = model.alpha;
  return run_chain<BlockedState, BlockedTrace>(
      init_blocked_state(data, model.truncation, model.alpha), data, o, total,
      burnin_frac, stride, rng,
      [](BlockedState& s, const GroupedDataset& d, const GibbsOptions& go, Rng& r) {
        blocked_scan(s, d, go, r);
      });
}

std::size_t occupied_components(const BlockedState& state) {
  std::vector<bool> seen(state.truncation(), false);
  for (int c : state.labels) seen[c] = true;
  return static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
}

namespace {

template <typename Trace, typename CountFn>
std::map<std::size_t, double> histogram(const Trace& trace, CountFn count) {
  if (trace.states.empty()) {
    throw std::invalid_argument("count_components: empty trace");
  }
  std::map<std::size_t, double> hist;
  for (const auto& s : trace.states) {
    hist[count(s)] += 1.0;
  }
  for (auto& [k, v] : hist) {
    v /= static_cast<double>(trace.states.size());
  }
  return hist;
}

nlohmann::json labels_1based(const std::vector<int>& labels) {
  std::vector<int> out;
  out.reserve(labels.size());
  for (int c : labels) out.push_back(c + 1);
  return out;
}

std::vector<int> labels_0based(const nlohmann::json& j) {
  std::vector<int> out;
  for (int c : j.get<std::vector<int>>()) out.push_back(c - 1);
  return out;
}

nlohmann::json footer_record(const TraceMeta& meta) {
  return {{"wall_time_seconds", meta.wall_time_seconds},
          {"total_scans", meta.total_scans},
          {"burnin_frac", meta.burnin_frac},
          {"stride", meta.stride},
          {"tau2_skips", meta.tau2_skips},
          {"seed", meta.seed}};
}

TraceMeta parse_footer(const nlohmann::json& j) {
  TraceMeta meta;
  meta.wall_time_seconds = j.at("wall_time_seconds").get<double>();
  meta.total_scans = j.at("total_scans").get<std::size_t>();
  meta.burnin_frac = j.at("burnin_frac").get<double>();
  meta.stride = j.at("stride").get<std::size_t>();
  meta.tau2_skips = j.value("tau2_skips", 0L);
  meta.seed = j.value("seed", std::uint64_t{0});
  return meta;
}

}  // namespace

std::map<std::size_t, double> count_components(const PolyaTrace& trace) {
  return histogram(trace, [](const PolyaState& s) { return s.num_clusters(); });
}

std::map<std::size_t, double> count_components(const BlockedTrace& trace) {
  return histogram(trace, [](const BlockedState& s) { return occupied_components(s); });
}

void write_trace_jsonl(const PolyaTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write trace file: " + path.string());
  for (const auto& s : trace.states) {
    nlohmann::json j{{"c", labels_1based(s.labels)}, {"zeta", s.atoms},
                     {"mu", s.mu},                   {"tau2", s.tau2},
                     {"sigma2", s.sigma2}};
    out << j.dump() << '\n';
  }
  out << footer_record(trace.meta).dump() << '\n';
}

void write_trace_jsonl(const BlockedTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write trace file: " + path.string());
  for (const auto& s : trace.states) {
    nlohmann::json j{{"c", labels_1based(s.labels)}, {"zeta", s.atoms},
                     {"w", s.sticks},                {"v", s.weights},
                     {"mu", s.mu},                   {"tau2", s.tau2},
                     {"sigma2", s.sigma2}};
    out << j.dump() << '\n';
  }
  out << footer_record(trace.meta).dump() << '\n';
}

PolyaTrace read_polya_trace_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open trace file: " + path.string());
  PolyaTrace trace;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.contains("wall_time_seconds")) {
      trace.meta = parse_footer(j);
      break;
    }
    PolyaState s;
    s.labels = labels_0based(j.at("c"));
    s.atoms = j.at("zeta").get<std::vector<double>>();
    s.mu = j.at("mu").get<double>();
    s.tau2 = j.at("tau2").get<double>();
    s.sigma2 = j.at("sigma2").get<double>();
    trace.states.push_back(std::move(s));
  }
  return trace;
}

BlockedTrace read_blocked_trace_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open trace file: " + path.string());
  BlockedTrace trace;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.contains("wall_time_seconds")) {
      trace.meta = parse_footer(j);
      break;
    }
    BlockedState s;
    s.labels = labels_0based(j.at("c"));
    s.atoms = j.at("zeta").get<std::vector<double>>();
    s.sticks = j.at("w").get<std::vector<double>>();
    s.weights = j.at("v").get<std::vector<double>>();
    s.mu = j.at("mu").get<double>();
    s.tau2 = j.at("tau2").get<double>();
    s.sigma2 = j.at("sigma2").get<double>();
    trace.states.push_back(std::move(s));
  }
  return trace;
}

}  // namespace dpvb
