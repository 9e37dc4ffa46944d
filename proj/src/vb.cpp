#include "dpvb/vb.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "dpvb/special_math.hpp"

namespace dpvb {

namespace {

constexpr double kSFloor = 1e-30;

// E[ln w_b] (zero for the last component, whose stick is pinned at 1) and
// cumulative E[ln(1-w_l)] prefixes, under the corrected or printed stick term.
void stick_log_expectations(const VBState& st, const VBOptions& opt,
                            std::vector<double>& log_w, std::vector<double>& prefix) {
  const std::size_t B = st.truncation();
  log_w.resize(B);
  prefix.resize(B);
  double acc = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double psi_cd = digamma(st.c[b] + st.d[b]);
    log_w[b] = (b + 1 == B) ? 0.0 : digamma(st.c[b]) - psi_cd;
    prefix[b] = acc;
    acc += (opt.stick_term_digamma_d ? digamma(st.d[b]) : digamma(st.c[b])) - psi_cd;
  }
}

double expected_group_ss(const GroupedDataset& data, std::size_t j, double a, double b2,
                         bool scale_by_n) {
  const double n = static_cast<double>(data.count(j));
  return data.sumsq(j) - 2.0 * a * data.sum(j) + n * a * a + (scale_by_n ? n : 1.0) * b2;
}

double inverse_gamma_entropy(double shape, double scale) {
  return std::log(scale) + ln_gamma(shape) - (shape + 1.0) * digamma(shape) + shape;
}

double beta_entropy(double a, double b) {
  return ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b) - (a - 1.0) * digamma(a) -
         (b - 1.0) * digamma(b) + (a + b - 2.0) * digamma(a + b);
}

std::vector<double> quantiles(std::vector<double> values, std::size_t count) {
  std::sort(values.begin(), values.end());
  std::vector<double> out(count);
  const std::size_t n = values.size();
  for (std::size_t i = 0; i < count; ++i) {
    const double pos = (static_cast<double>(i) + 0.5) / static_cast<double>(count) *
                       static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    const std::size_t hi = std::min(lo + 1, n - 1);
    out[i] = values[lo] * (1.0 - frac) + values[hi] * frac;
  }
  return out;
}

double rel_change(double before, double after) {
  return std::abs(after - before) / (std::abs(before) + 1e-10);
}

}  // namespace

void VBState::validate() const {
  const std::size_t B = truncation();
  if (B == 0 || b2.size() != B || c.size() != B || d.size() != B) {
    throw std::invalid_argument("VB state shape mismatch");
  }
  for (const auto& row : r) {
    if (row.size() != B) throw std::invalid_argument("VB responsibility row size mismatch");
    double total = 0.0;
    for (double p : row) {
      if (!(p >= 0.0) || !std::isfinite(p)) {
        throw std::invalid_argument("VB responsibilities must be nonnegative");
      }
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw std::invalid_argument("VB responsibility rows must sum to 1");
    }
  }
  for (std::size_t b = 0; b < B; ++b) {
    if (!(b2[b] > 0.0) || !(c[b] > 0.0) || !(d[b] > 0.0)) {
      throw std::invalid_argument("VB per-component parameters must be positive");
    }
  }
  if (!(f2 > 0.0) || !(k > 0.0) || !(s > 0.0) || !(g > 0.0) || !(h > 0.0)) {
    throw std::invalid_argument("VB scale parameters must be positive");
  }
}

VBState init_vb_state(const GroupedDataset& data, const ModelConfig& model) {
  model.validate();
  const std::size_t J = data.num_groups();
  const std::size_t B = model.truncation;
  const double pooled = std::max(data.pooled_within_variance(), 1e-8);
  const double spread = std::max(data.group_mean_variance(), 1e-8);

  VBState st;
  // Quantile seeds over the group means, with near-duplicate seeds
  // collapsed (gap within 5% of the range) so each apparent cluster gets
  // one atom. Leftover atoms start at the grand mean of the group means,
  // i.e. as prior-only components; this avoids the slow migration of
  // redundant atoms out of occupied clusters.
  const auto means = data.group_means();
  const auto seeds = quantiles(means, B);
  const double collapse_gap = 0.05 * (seeds.back() - seeds.front());
  std::vector<double> atoms;
  double acc = seeds[0];
  std::size_t run = 1;
  for (std::size_t i = 1; i < B; ++i) {
    if (seeds[i] - seeds[i - 1] <= collapse_gap) {
      acc += seeds[i];
      ++run;
    } else {
      atoms.push_back(acc / static_cast<double>(run));
      acc = seeds[i];
      run = 1;
    }
  }
  atoms.push_back(acc / static_cast<double>(run));
  double grand = 0.0;
  for (double m : means) grand += m;
  grand /= static_cast<double>(J);
  st.a = atoms;
  st.a.resize(B, grand);
  st.b2.assign(B, pooled);
  st.r.assign(J, std::vector<double>(B, 1.0 / static_cast<double>(B)));
  st.c.resize(B);
  st.d.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    st.c[b] = 1.0 + static_cast<double>(J) / static_cast<double>(B);
    st.d[b] = model.alpha +
              static_cast<double>(J) * static_cast<double>(B - 1 - b) / static_cast<double>(B);
  }
  st.d[B - 1] = model.alpha;
  double mean_a = 0.0;
  for (double v : st.a) mean_a += v;
  st.e = mean_a / static_cast<double>(B);
  st.f2 = static_cast<double>(B);
  st.k = 0.5 * static_cast<double>(B) - 1.5;
  st.s = st.k * spread;
  st.g = 0.5 * static_cast<double>(data.total_count());
  st.h = st.g * pooled;
  return st;
}

void update_responsibilities(VBState& st, const GroupedDataset& data, const VBOptions& opt) {
  const std::size_t J = data.num_groups();
  const std::size_t B = st.truncation();
  std::vector<double> log_w, prefix;
  stick_log_expectations(st, opt, log_w, prefix);
  const double precision = st.g / st.h;
  std::vector<double> logp(B);
  for (std::size_t j = 0; j < J; ++j) {
    for (std::size_t b = 0; b < B; ++b) {
      logp[b] = -0.5 * precision * expected_group_ss(data, j, st.a[b], st.b2[b], true) +
                log_w[b] + prefix[b];
    }
    const double lse = log_sum_exp(logp);
    for (std::size_t b = 0; b < B; ++b) {
      st.r[j][b] = std::exp(logp[b] - lse);
    }
  }
}

void update_atoms(VBState& st, const GroupedDataset& data) {
  const std::size_t B = st.truncation();
  const double noise_prec = st.g / st.h;
  const double base_prec = st.k / st.s;
  for (std::size_t b = 0; b < B; ++b) {
    double weighted_sum = 0.0;
    double weighted_n = 0.0;
    for (std::size_t j = 0; j < data.num_groups(); ++j) {
      weighted_sum += st.r[j][b] * data.sum(j);
      weighted_n += st.r[j][b] * static_cast<double>(data.count(j));
    }
    const double denom = noise_prec * weighted_n + base_prec;
    st.a[b] = (noise_prec * weighted_sum + base_prec * st.e) / denom;
    st.b2[b] = 1.0 / denom;
  }
}

void update_sticks(VBState& st, double alpha, const VBOptions& opt) {
  const std::size_t B = st.truncation();
  std::vector<double> col(B, 0.0);
  for (const auto& row : st.r) {
    for (std::size_t b = 0; b < B; ++b) col[b] += row[b];
  }
  for (std::size_t b = 0; b < B; ++b) st.c[b] = col[b] + 1.0;
  if (opt.stick_counts_later_components) {
    double tail = 0.0;
    for (std::size_t b = B; b-- > 0;) {
      st.d[b] = alpha + tail;
      tail += col[b];
    }
  } else {
    // As printed: the inner summand stays r_jb, so the l-sum degenerates to
    // a (B - b) multiplier on the component's own column sum.
    for (std::size_t b = 0; b < B; ++b) {
      st.d[b] = alpha + static_cast<double>(B - 1 - b) * col[b];
    }
  }
  st.d[B - 1] = alpha;
}

void update_mu_tau(VBState& st, int* s_floor_hits) {
  const std::size_t B = st.truncation();
  if (B <= 3) {
    throw std::invalid_argument("update_mu_tau requires truncation >= 4");
  }
  double mean_a = 0.0;
  for (double v : st.a) mean_a += v;
  st.e = mean_a / static_cast<double>(B);
  st.f2 = static_cast<double>(B);
  st.k = 0.5 * static_cast<double>(B) - 1.5;
  double acc = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    acc += (st.a[b] - st.e) * (st.a[b] - st.e) + st.b2[b];
  }
  st.s = 0.5 * acc;
  if (st.s < kSFloor) {
    st.s = kSFloor;
    if (s_floor_hits != nullptr) ++*s_floor_hits;
  }
}

void update_sigma(VBState& st, const GroupedDataset& data, const VBOptions& opt) {
  const std::size_t B = st.truncation();
  st.g = 0.5 * static_cast<double>(data.total_count());
  double acc = 0.0;
  for (std::size_t j = 0; j < data.num_groups(); ++j) {
    for (std::size_t b = 0; b < B; ++b) {
      if (st.r[j][b] > 0.0) {
        acc += st.r[j][b] *
               expected_group_ss(data, j, st.a[b], st.b2[b], opt.noise_scale_group_size);
      }
    }
  }
  st.h = 0.5 * acc;
}

std::pair<VBState, VBReport> run_vb(const GroupedDataset& data, const ModelConfig& model,
                                    double tol, std::size_t max_iter, const VBOptions& opt,
                                    bool track_elbo) {
  return run_vb_from(init_vb_state(data, model), data, model.alpha, tol, max_iter, opt,
                     track_elbo);
}

std::pair<VBState, VBReport> run_vb_from(VBState init, const GroupedDataset& data,
                                         double alpha, double tol, std::size_t max_iter,
                                         const VBOptions& opt, bool track_elbo) {
  if (!(tol > 0.0)) throw std::invalid_argument("run_vb: tol must be positive");
  if (max_iter == 0) throw std::invalid_argument("run_vb: max_iter must be positive");
  if (!(alpha > 0.0)) throw std::invalid_argument("run_vb: alpha must be positive");
  const auto t0 = std::chrono::steady_clock::now();

  VBState st = std::move(init);
  VBReport report;

  // The scalar convergence metric watches everything except r.
  std::vector<double> before, after;
  auto snapshot = [&](std::vector<double>& buf) {
    buf.clear();
    buf.insert(buf.end(), st.a.begin(), st.a.end());
    buf.insert(buf.end(), st.b2.begin(), st.b2.end());
    buf.insert(buf.end(), st.c.begin(), st.c.end());
    buf.insert(buf.end(), st.d.begin(), st.d.end());
    buf.push_back(st.e);
    buf.push_back(st.f2);
    buf.push_back(st.k);
    buf.push_back(st.s);
    buf.push_back(st.g);
    buf.push_back(st.h);
  };

  for (std::size_t iter = 1; iter <= max_iter; ++iter) {
    snapshot(before);
    update_responsibilities(st, data, opt);
    update_atoms(st, data);
    update_sticks(st, alpha, opt);
    update_mu_tau(st, &report.s_floor_hits);
    update_sigma(st, data, opt);
    snapshot(after);

    double max_change = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) {
      max_change = std::max(max_change, rel_change(before[i], after[i]));
    }
    report.iterations = iter;
    report.final_max_rel_change = max_change;
    if (track_elbo) {
      report.elbo_history.push_back(elbo(st, data, alpha));
    }
    if (max_change < tol) {
      report.converged = true;
      break;
    }
  }

  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report.expected_weights = expected_weights(st.c, st.d);
  report.atom_means = st.a;
  report.atom_vars = st.b2;
  report.sigma2_shape = st.g;
  report.sigma2_scale = st.h;
  report.tau2_shape = st.k;
  report.tau2_scale = st.s;
  return {std::move(st), std::move(report)};
}

ElboBreakdown elbo_breakdown(const VBState& st, const GroupedDataset& data, double alpha) {
  st.validate();
  const std::size_t J = data.num_groups();
  const std::size_t B = st.truncation();
  constexpr double ln2pi = 1.8378770664093454836;

  ElboBreakdown out;
  const VBOptions corrected{};  // the bound is defined for the truncated model
  std::vector<double> log_w, prefix;
  stick_log_expectations(st, corrected, log_w, prefix);

  const double e_ln_sigma2 = std::log(st.h) - digamma(st.g);
  const double e_inv_sigma2 = st.g / st.h;
  const double e_ln_tau2 = std::log(st.s) - digamma(st.k);
  const double e_inv_tau2 = st.k / st.s;

  for (std::size_t j = 0; j < J; ++j) {
    const double n = static_cast<double>(data.count(j));
    for (std::size_t b = 0; b < B; ++b) {
      const double r = st.r[j][b];
      if (r <= 0.0) continue;
      const double e_ln_v = log_w[b] + prefix[b];
      const double ss = expected_group_ss(data, j, st.a[b], st.b2[b], true);
      out.likelihood +=
          r * (e_ln_v - 0.5 * n * (ln2pi + e_ln_sigma2) - 0.5 * e_inv_sigma2 * ss);
      out.entropy_labels -= r * std::log(r);
    }
  }

  for (std::size_t b = 0; b < B; ++b) {
    const double dev = (st.a[b] - st.e) * (st.a[b] - st.e) + st.b2[b];
    out.atom_prior += -0.5 * (ln2pi + e_ln_tau2) - 0.5 * e_inv_tau2 * dev - 0.5 / st.f2;
    out.entropy_atoms += 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * st.b2[b]);
  }

  for (std::size_t b = 0; b + 1 < B; ++b) {
    const double e_ln_1mw = digamma(st.d[b]) - digamma(st.c[b] + st.d[b]);
    out.stick_prior += std::log(alpha) + (alpha - 1.0) * e_ln_1mw;
    out.entropy_sticks += beta_entropy(st.c[b], st.d[b]);
  }

  out.hyper_prior = -e_ln_sigma2;  // pi proportional to 1/sigma2, unnormalized
  out.entropy_sigma2 = inverse_gamma_entropy(st.g, st.h);
  out.entropy_mu = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e / st.f2) +
                   0.5 * e_ln_tau2;
  out.entropy_tau2 = inverse_gamma_entropy(st.k, st.s);
  return out;
}

double elbo(const VBState& st, const GroupedDataset& data, double alpha) {
  return elbo_breakdown(st, data, alpha).total();
}

void write_vb_state_json(const VBState& st, const std::filesystem::path& path) {
  nlohmann::json j;
  j["r"] = st.r;
  j["a"] = st.a;
  j["b2"] = st.b2;
  j["c"] = st.c;
  j["d"] = st.d;
  j["e"] = st.e;
  j["f2"] = st.f2;
  j["k"] = st.k;
  j["s"] = st.s;
  j["g"] = st.g;
  j["h"] = st.h;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write VB state file: " + path.string());
  out << j.dump(2) << '\n';
}

VBState read_vb_state_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open VB state file: " + path.string());
  nlohmann::json j;
  in >> j;
  VBState st;
  st.r = j.at("r").get<std::vector<std::vector<double>>>();
  st.a = j.at("a").get<std::vector<double>>();
  st.b2 = j.at("b2").get<std::vector<double>>();
  st.c = j.at("c").get<std::vector<double>>();
  st.d = j.at("d").get<std::vector<double>>();
  st.e = j.at("e").get<double>();
  st.f2 = j.at("f2").get<double>();
  st.k = j.at("k").get<double>();
  st.s = j.at("s").get<double>();
  st.g = j.at("g").get<double>();
  st.h = j.at("h").get<double>();
  return st;
}

void write_vb_report_json(const VBReport& report, const std::filesystem::path& path) {
  nlohmann::json j;
  j["converged"] = report.converged;
  j["iterations"] = report.iterations;
  j["final_max_rel_change"] = report.final_max_rel_change;
  j["wall_time_seconds"] = report.wall_time_seconds;
  j["expected_weights"] = report.expected_weights;
  j["atom_means"] = report.atom_means;
  j["atom_vars"] = report.atom_vars;
  j["sigma2_shape"] = report.sigma2_shape;
  j["sigma2_scale"] = report.sigma2_scale;
  j["tau2_shape"] = report.tau2_shape;
  j["tau2_scale"] = report.tau2_scale;
  j["s_floor_hits"] = report.s_floor_hits;
  if (!report.elbo_history.empty()) j["elbo_history"] = report.elbo_history;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write VB report file: " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace dpvb
