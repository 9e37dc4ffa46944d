// Acceptance suite: every release gate in one binary, one PASS/FAIL line
// each, nonzero exit if anything fails. Scales follow the desk-size
// experiment shapes; every tolerance is pinned here.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "dpvb/experiment.hpp"
#include "oracles.hpp"

using namespace dpvb;

namespace {

constexpr std::uint64_t kDataSeed = 20260810;

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("criterion %d: %s — %s\n", criterion, pass ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double elapsed_s(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct PaperSetup {
  GroundTruth truth;
  GroupedDataset train;
  std::vector<HeldOutGroup> held_out;
};

PaperSetup make_paper_setup() {
  PaperSetup s;
  s.truth = oracle::paper_truth();
  Rng rng(kDataSeed);
  const auto all = generate_dataset(rng, s.truth, 60, 80);
  s.train = all.slice(0, 50);
  for (std::size_t j = 50; j < 60; ++j) {
    s.held_out.emplace_back(all.group_id(j), all.observations(j));
  }
  return s;
}

char buf[512];

}  // namespace

int main() {
  const auto setup = make_paper_setup();
  const ModelConfig model{10, 1.0};

  // ---- 1 & 2: component recovery and convergence speed -------------------
  VBState vb_state;
  {
    const auto t0 = std::chrono::steady_clock::now();
    auto [state, rep] = run_vb(setup.train, model, 1e-6, 500);
    const double fit_seconds = elapsed_s(t0);
    vb_state = std::move(state);

    const double merge = default_merge_tol(setup.train);
    bool pass = true;
    std::string detail;
    ComponentSummary summary;
    try {
      summary = estimate_truncation(vb_state, merge, kDefaultPruneTol);
    } catch (const std::exception& ex) {
      pass = false;
      detail = ex.what();
    }
    double max_loc_err = 0.0, max_w_err = 0.0;
    if (pass) {
      pass = summary.count() == 5;
      for (const auto& comp : summary.components) {
        double best = 1e9;
        std::size_t best_idx = 0;
        for (std::size_t i = 0; i < setup.truth.measure.atoms.size(); ++i) {
          const double d = std::abs(comp.location - setup.truth.measure.atoms[i]);
          if (d < best) {
            best = d;
            best_idx = i;
          }
        }
        max_loc_err = std::max(max_loc_err, best);
        max_w_err = std::max(max_w_err,
                             std::abs(comp.weight - setup.truth.measure.weights[best_idx]));
      }
      pass = pass && max_loc_err <= 0.3 && max_w_err <= 0.08 && fit_seconds < 10.0;
      std::snprintf(buf, sizeof(buf),
                    "recovered %zu components, max |location error| %.3f (<=0.3), "
                    "max |weight error| %.3f (<=0.08), fit %.2fs (<10s)",
                    summary.count(), max_loc_err, max_w_err, fit_seconds);
      detail = buf;
    }
    report(1, pass, detail);

    std::snprintf(buf, sizeof(buf), "VB converged=%d in %zu iterations (<=100)",
                  rep.converged ? 1 : 0, rep.iterations);
    report(2, rep.converged && rep.iterations <= 100, buf);
  }

  // ---- 3: predictive agreement (held-out groups) -------------------------
  {
    const auto t0 = std::chrono::steady_clock::now();
    GibbsOptions opt;
    Rng rng(77001);
    const auto blocked =
        run_blocked_chain(setup.train, model, opt, 10000, 0.8, 25, rng);
    std::vector<double> lp_blocked, lp_vb;
    PredictiveOptions popt;
    for (const auto& y : setup.held_out) {
      lp_blocked.push_back(predictive_mcmc(blocked, y));
      lp_vb.push_back(predictive_vb(vb_state, y, popt));
    }
    double mean_blocked = 0.0, mean_vb = 0.0;
    for (double v : lp_blocked) mean_blocked += v;
    mean_blocked /= 10.0;
    for (double v : lp_vb) mean_vb += v;
    mean_vb /= 10.0;
    const auto tt = compare_methods(lp_blocked, lp_vb);
    const double secs = elapsed_s(t0);
    const double rel = std::abs(mean_vb - mean_blocked) / std::abs(mean_blocked);
    const bool pass = rel <= 0.02 && tt.p_pooled > 0.05 && secs < 600.0;
    std::snprintf(buf, sizeof(buf),
                  "mean log-predictive blocked %.3f vs VB %.3f, rel gap %.4f (<=0.02), "
                  "t-test p %.4f (>0.05), %.1fs (<600s)",
                  mean_blocked, mean_vb, rel, tt.p_pooled, secs);
    report(3, pass, buf);
  }

  // ---- 4: published t tests from the literal table columns ----------------
  {
    const std::vector<double> polya{-96.19, -98.43, -89.45, -97.35, -104.31,
                                    -95.64, -90.36, -99.84, -92.86, -95.11};
    const std::vector<double> blocked{-97.40, -99.67, -90.59, -98.53, -105.84,
                                      -96.76, -91.50, -100.82, -95.53, -96.32};
    const std::vector<double> vb{-97.29, -99.88, -90.46, -98.74, -105.90,
                                 -96.88, -91.37, -100.62, -95.47, -96.54};
    const auto bv = compare_methods(blocked, vb);
    const auto pb = compare_methods(polya, blocked);
    // equal sample sizes make the pooled and Welch statistics coincide;
    // the pooled variant is the recorded match
    const bool pass =
        std::abs(bv.p_pooled - 0.9923) <= 0.01 && std::abs(pb.p_pooled - 0.5049) <= 0.01;
    std::snprintf(buf, sizeof(buf),
                  "blocked-vs-VB p %.4f (target 0.9923 +/- 0.01), "
                  "urn-vs-blocked p %.4f (target 0.5049 +/- 0.01), pooled variant",
                  bv.p_pooled, pb.p_pooled);
    report(4, pass, buf);
  }

  // ---- 5: component-count posterior (urn engine) --------------------------
  {
    GibbsOptions opt;
    Rng rng(77002);
    const auto trace = run_polya_chain(setup.train, model, opt, 20000, 0.8, 25, rng);
    const auto hist = count_components(trace);
    std::size_t modal = 0;
    double best = -1.0, mass567 = 0.0;
    for (const auto& [count, freq] : hist) {
      if (freq > best) {
        best = freq;
        modal = count;
      }
      if (count >= 5 && count <= 7) mass567 += freq;
    }
    const bool pass = modal >= 5 && modal <= 7 && mass567 >= 0.75;
    std::snprintf(buf, sizeof(buf),
                  "modal distinct-component count %zu (in {5,6,7}), "
                  "P(5)+P(6)+P(7) = %.3f (>=0.75)",
                  modal, mass567);
    report(5, pass, buf);
  }

  // ---- 6: speed claim ------------------------------------------------------
  {
    const auto t0 = std::chrono::steady_clock::now();
    auto [state, rep] = run_vb(setup.train, model, 1e-6, 500);
    const double vb_seconds = std::max(elapsed_s(t0), 1e-9);

    GibbsOptions opt;
    Rng rng(77003);
    const auto t1 = std::chrono::steady_clock::now();
    run_blocked_chain(setup.train, model, opt, 100000, 0.8, 25, rng);
    const double blocked_seconds = elapsed_s(t1);

    const double ratio = blocked_seconds / vb_seconds;
    const double per_scan = blocked_seconds / 100000.0;
    const double paper_ratio = per_scan * 2.5e6 / vb_seconds;
    const bool pass = ratio >= 100.0;
    std::snprintf(buf, sizeof(buf),
                  "VB %.4fs vs blocked(1e5 scans) %.2fs, ratio %.0f (>=100); "
                  "extrapolated 2.5e6-scan ratio %.0f",
                  vb_seconds, blocked_seconds, ratio, paper_ratio);
    report(6, pass, buf);
  }

  // ---- 7: the lower-bound property of the nested variational predictive ---
  {
    Rng rng(77004);
    bool pass = true;
    double worst = -1e9;
    for (int rep = 0; rep < 20; ++rep) {
      const double a = (rng.uniform() - 0.5) * 6.0;
      const double b2 = 0.05 + 2.0 * rng.uniform();
      const double g = 2.0 + 13.0 * rng.uniform();
      const double h = 0.5 + 4.5 * rng.uniform();
      const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform() * 4);
      std::vector<double> obs(n);
      for (auto& v : obs) v = a + (rng.uniform() - 0.5) * 4.0;
      const HeldOutGroup y("h", obs);
      const auto inner = inner_vb(y, a, b2, g, h);
      const double fb = component_bound(y, a, b2, g, h, inner);
      const double lnL = oracle::ln_Lb_quadrature(obs, a, b2, g, h, 801);
      worst = std::max(worst, fb - lnL);
      if (fb - lnL > 1e-4) pass = false;
    }
    std::snprintf(buf, sizeof(buf),
                  "F_b <= ln L_b on 20 randomized instances, worst excess %.2e "
                  "(tolerance 1e-4)",
                  worst);
    report(7, pass, buf);
  }

  // ---- 8: oracle equivalence -----------------------------------------------
  {
    oracle::TinyInstance tiny;
    tiny.y1 = {0.3, -0.2};
    tiny.y2 = {1.1, 0.8};
    tiny.ystar = {0.5, 0.1};
    tiny.mu0 = 0.4;
    tiny.tau20 = 2.0;
    tiny.sigma20 = 0.5;
    tiny.alpha = 1.0;
    const auto enumerated = oracle::tiny_enumeration(tiny);
    const auto grid = oracle::tiny_quadrature(tiny, 161);
    const double oracle_gap = std::abs(grid.log_predictive - enumerated.log_predictive);

    GroupedDataset data;
    data.add_group("g1", tiny.y1);
    data.add_group("g2", tiny.y2);
    BlockedState state;
    state.labels = {0, 1};
    state.atoms = {0.0, 1.0};
    state.sticks = {0.5, 1.0};
    state.weights = stick_break(state.sticks);
    state.mu = tiny.mu0;
    state.tau2 = tiny.tau20;
    state.sigma2 = tiny.sigma20;
    GibbsOptions opt;
    opt.alpha = tiny.alpha;
    opt.update_mu = opt.update_tau2 = opt.update_sigma2 = false;
    Rng rng(77005);
    const HeldOutGroup y("h", tiny.ystar);
    const int total = 1000000, stride = 10;
    std::vector<double> per_state;
    per_state.reserve(total / stride);
    for (int t = 1; t <= total; ++t) {
      blocked_scan(state, data, opt, rng);
      if (t % stride == 0) {
        double p = 0.0;
        for (std::size_t b = 0; b < 2; ++b) {
          p += state.weights[b] *
               std::exp(oracle::loglik_group(y.values, state.atoms[b], state.sigma2));
        }
        per_state.push_back(p);
      }
    }
    double mean = 0.0;
    for (double p : per_state) mean += p;
    mean /= static_cast<double>(per_state.size());
    double var = 0.0;
    for (double p : per_state) var += (p - mean) * (p - mean);
    var /= static_cast<double>(per_state.size() - 1);
    const double se = std::sqrt(var / static_cast<double>(per_state.size()));
    const double gap = std::abs(mean - std::exp(grid.log_predictive));
    bool pass = gap <= 3.0 * se && oracle_gap <= 1e-3;

    // second half: elbo monotonicity on randomized instances
    Rng drng(77006);
    double worst_step = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      const auto small = oracle::random_small_dataset(drng, 5, 5);
      const ModelConfig m4{4, 1.0};
      const auto [st, r] = run_vb(small, m4, 1e-10, 60, VBOptions{}, true);
      for (std::size_t i = 1; i < r.elbo_history.size(); ++i) {
        worst_step = std::min(worst_step, r.elbo_history[i] - r.elbo_history[i - 1]);
      }
    }
    pass = pass && worst_step >= -1e-8;
    std::snprintf(buf, sizeof(buf),
                  "blocked predictive vs quadrature gap %.2e (<= 3 MC se = %.2e, "
                  "enumeration-vs-grid %.1e); worst elbo step %+.1e (>=-1e-8)",
                  gap, 3.0 * se, oracle_gap, worst_step);
    report(8, pass, buf);
  }

  // ---- 9: invariant sweeps --------------------------------------------------
  {
    bool pass = true;
    std::string why = "simplex/normalization/positivity/identities/determinism OK";
    Rng rng(77007);

    // responsibility simplex + parameter positivity over randomized updates
    for (int rep = 0; rep < 250 && pass; ++rep) {
      const auto data = oracle::random_small_dataset(rng, 5, 5);
      const ModelConfig m4{4, 1.0};
      auto st = init_vb_state(data, m4);
      for (int it = 0; it < 4; ++it) {
        update_responsibilities(st, data);
        for (const auto& row : st.r) {
          double total = 0.0;
          for (double p : row) total += p;
          if (std::abs(total - 1.0) > 1e-12) pass = false;
        }
        update_atoms(st, data);
        update_sticks(st, m4.alpha);
        update_mu_tau(st);
        update_sigma(st, data);
        for (std::size_t b = 0; b < st.truncation(); ++b) {
          if (!(st.b2[b] > 0.0) || !(st.c[b] > 0.0) || !(st.d[b] > 0.0)) pass = false;
        }
        if (!(st.s > 0.0) || !(st.g > 0.0) || !(st.h > 0.0) || !(st.k > 0.0)) pass = false;
      }
      if (!pass) why = "VB invariant violated";
    }

    // stick-breaking + expected-weights normalization
    for (int rep = 0; rep < 1000 && pass; ++rep) {
      const std::size_t B = 1 + static_cast<std::size_t>(rng.uniform() * 11);
      std::vector<double> w(B), c(B), d(B);
      for (std::size_t b = 0; b < B; ++b) {
        w[b] = rng.uniform();
        c[b] = 0.2 + 5.0 * rng.uniform();
        d[b] = 0.2 + 5.0 * rng.uniform();
      }
      w[B - 1] = 1.0;
      double sv = 0.0, se_ = 0.0;
      for (double v : stick_break(w)) sv += v;
      for (double v : expected_weights(c, d)) se_ += v;
      if (std::abs(sv - 1.0) > 1e-10 || std::abs(se_ - 1.0) > 1e-10) {
        pass = false;
        why = "weight normalization violated";
      }
    }

    // digamma / ln_gamma identities; the ln_gamma grid stops where a 1e-12
    // absolute residual is still representable in double precision
    for (int i = 0; i < 1000 && pass; ++i) {
      const double x = std::pow(10.0, -3.0 + 9.0 * i / 999.0);
      if (std::abs(digamma(x + 1.0) - digamma(x) - 1.0 / x) > 1e-12) {
        pass = false;
        why = "digamma identity violated";
      }
      const double xg = std::pow(10.0, -3.0 + (std::log10(30.0) + 3.0) * i / 999.0);
      if (std::abs(ln_gamma(xg + 1.0) - ln_gamma(xg) - std::log(xg)) > 1e-12) {
        pass = false;
        why = "ln_gamma identity violated";
      }
    }

    // determinism: seeded streams and a full chain replay
    {
      Rng a(123), b(123);
      for (int i = 0; i < 1000 && pass; ++i) {
        if (sample_normal(a, 0.0, 1.0) != sample_normal(b, 0.0, 1.0)) {
          pass = false;
          why = "sampler stream not reproducible";
        }
      }
      const ModelConfig m4{4, 1.0};
      const auto small = oracle::random_small_dataset(rng, 4, 4);
      Rng c1(321), c2(321);
      const auto tr1 = run_blocked_chain(small, m4, GibbsOptions{}, 200, 0.5, 5, c1);
      const auto tr2 = run_blocked_chain(small, m4, GibbsOptions{}, 200, 0.5, 5, c2);
      for (std::size_t i = 0; i < tr1.states.size() && pass; ++i) {
        if (tr1.states[i].atoms != tr2.states[i].atoms ||
            tr1.states[i].labels != tr2.states[i].labels) {
          pass = false;
          why = "chain replay diverged";
        }
      }
      const auto [v1, q1] = run_vb(small, m4, 1e-8, 200);
      const auto [v2, q2] = run_vb(small, m4, 1e-8, 200);
      if (v1.a != v2.a || v1.h != v2.h) {
        pass = false;
        why = "VB replay diverged";
      }
    }
    report(9, pass, why);
  }

  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all acceptance criteria passed\n");
  return 0;
}
