#include "dpvb/predictive.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dpvb/model.hpp"

namespace dpvb {

namespace {
constexpr double ln2pi = 1.8378770664093454836;
}

HeldOutGroup::HeldOutGroup(std::string group_id, std::span<const double> obs)
    : id(std::move(group_id)), values(obs.begin(), obs.end()) {
  if (values.empty()) {
    throw std::invalid_argument("held-out group '" + id + "' has no observations");
  }
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("held-out group '" + id + "' contains a non-finite value");
    }
    sum += v;
    sumsq += v * v;
  }
  mean = sum / static_cast<double>(values.size());
  centered_ss = 0.0;
  for (double v : values) centered_ss += (v - mean) * (v - mean);
}

double predictive_mcmc(const BlockedTrace& trace, const HeldOutGroup& y) {
  if (trace.states.empty()) throw std::invalid_argument("predictive over an empty trace");
  std::vector<double> per_state;
  per_state.reserve(trace.states.size());
  std::vector<double> terms;
  for (const auto& st : trace.states) {
    terms.clear();
    for (std::size_t b = 0; b < st.truncation(); ++b) {
      if (st.weights[b] <= 0.0) continue;
      terms.push_back(std::log(st.weights[b]) +
                      normal_group_loglik(y.n(), y.sum, y.sumsq, st.atoms[b], st.sigma2));
    }
    per_state.push_back(log_sum_exp(terms));
  }
  return log_sum_exp(per_state) - std::log(static_cast<double>(per_state.size()));
}

double predictive_mcmc(const PolyaTrace& trace, const HeldOutGroup& y, double alpha,
                       std::size_t num_train_groups, const PredictiveOptions& opt,
                       Rng& rng) {
  if (trace.states.empty()) throw std::invalid_argument("predictive over an empty trace");
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (opt.fresh_atom_draws == 0) {
    throw std::invalid_argument("need at least one fresh atom draw");
  }
  const double log_norm = std::log(alpha + static_cast<double>(num_train_groups));
  std::vector<double> per_state;
  per_state.reserve(trace.states.size());
  std::vector<double> terms;
  const double log_new_mass =
      std::log(alpha) - std::log(static_cast<double>(opt.fresh_atom_draws));
  for (const auto& st : trace.states) {
    std::vector<double> counts(st.num_clusters(), 0.0);
    for (int c : st.labels) counts[c] += 1.0;
    terms.clear();
    for (std::size_t k = 0; k < st.num_clusters(); ++k) {
      terms.push_back(std::log(counts[k]) +
                      normal_group_loglik(y.n(), y.sum, y.sumsq, st.atoms[k], st.sigma2));
    }
    for (std::size_t i = 0; i < opt.fresh_atom_draws; ++i) {
      const double fresh = sample_normal(rng, st.mu, st.tau2);
      terms.push_back(log_new_mass +
                      normal_group_loglik(y.n(), y.sum, y.sumsq, fresh, st.sigma2));
    }
    per_state.push_back(log_sum_exp(terms) - log_norm);
  }
  return log_sum_exp(per_state) - std::log(static_cast<double>(per_state.size()));
}

InnerComponent inner_vb(const HeldOutGroup& y, double a_b, double b2_b, double g,
                        double h, const PredictiveOptions& opt) {
  if (!(b2_b > 0.0) || !(g > 0.0) || !(h > 0.0)) {
    throw std::invalid_argument("inner_vb requires positive outer scale parameters");
  }
  const double n = static_cast<double>(y.n());
  InnerComponent inner;
  inner.G = g + 0.5 * n;
  inner.A = a_b;
  inner.B2 = b2_b;
  inner.H = h + 0.5 * y.centered_ss +
            0.5 * n * ((inner.A - y.mean) * (inner.A - y.mean) + inner.B2);
  for (std::size_t it = 1; it <= opt.inner_max_iter; ++it) {
    const double ratio = inner.G / inner.H;
    const double denom = ratio * n + 1.0 / b2_b;
    const double A_new = (ratio * y.sum + a_b / b2_b) / denom;
    const double B2_new = 1.0 / denom;
    const double H_new = h + 0.5 * y.centered_ss +
                         0.5 * n * ((A_new - y.mean) * (A_new - y.mean) + B2_new);
    const double da = std::abs(A_new - inner.A) / (std::abs(inner.A) + 1e-10);
    const double dh = std::abs(H_new - inner.H) / (std::abs(inner.H) + 1e-10);
    inner.A = A_new;
    inner.B2 = B2_new;
    inner.H = H_new;
    inner.iterations = it;
    if (da < opt.inner_tol && dh < opt.inner_tol) {
      inner.converged = true;
      break;
    }
  }
  return inner;
}

namespace detail {

double component_bound_core(std::size_t n, double sum, double sumsq, double a_b,
                            double b2_b, double g, double h, const InnerComponent& in) {
  const double nn = static_cast<double>(n);
  const double e_ln_sigma2 = std::log(in.H) - digamma(in.G);
  const double e_inv_sigma2 = in.G / in.H;

  // E_v[ln q(zeta)] - E_v[ln v(zeta)]
  const double normal_term = 0.5 * std::log(in.B2 / b2_b) + 0.5 -
                             ((in.A - a_b) * (in.A - a_b) + in.B2) / (2.0 * b2_b);
  // E_v[ln q(sigma2)] - E_v[ln v(sigma2)]
  const double ig_term = (in.G - g) * e_ln_sigma2 + in.G * (1.0 - h / in.H) +
                         g * std::log(h) - in.G * std::log(in.H) - ln_gamma(g) +
                         ln_gamma(in.G);
  // E_v[ln f(y*|zeta, sigma2)]
  const double dev = sumsq - 2.0 * in.A * sum + nn * in.A * in.A + nn * in.B2;
  const double lik_term = -0.5 * nn * (ln2pi + e_ln_sigma2) - 0.5 * e_inv_sigma2 * dev;

  return normal_term + ig_term + lik_term;
}

}  // namespace detail

double component_bound(const HeldOutGroup& y, double a_b, double b2_b, double g,
                       double h, const InnerComponent& inner) {
  return detail::component_bound_core(y.n(), y.sum, y.sumsq, a_b, b2_b, g, h, inner);
}

double component_bound(const VBState& outer, std::size_t b, const HeldOutGroup& y,
                       const InnerComponent& inner) {
  return component_bound(y, outer.a[b], outer.b2[b], outer.g, outer.h, inner);
}

double component_bound_as_printed(const HeldOutGroup& y, double a_b, double b2_b,
                                  double g, double h, const InnerComponent& in) {
  const double n = static_cast<double>(y.n());
  const double e_ln_sigma2 = std::log(in.H) - digamma(in.G);
  const double normal_term = 0.5 * std::log(in.B2 / b2_b) -
                             ((in.A - a_b) * (in.A - a_b) + in.B2) / (2.0 * b2_b);
  const double ig_term = (in.G - g) * e_ln_sigma2 + in.G * (1.0 - h / in.H) +
                         g * std::log(h) - ln_gamma(g) + in.G * std::log(in.H) -
                         ln_gamma(in.G);
  const double dev = y.sumsq - 2.0 * in.A * y.sum + n * in.A * in.A - n * in.B2;
  const double lik_term = -0.5 * n * (ln2pi + e_ln_sigma2) - 0.5 * (in.G / in.H) * dev;
  return normal_term + ig_term + lik_term;
}

double predictive_vb(const VBState& outer, const HeldOutGroup& y,
                     const PredictiveOptions& opt) {
  outer.validate();
  const std::size_t B = outer.truncation();
  const auto ev = expected_weights(outer.c, outer.d);
  std::vector<double> terms(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto inner = inner_vb(y, outer.a[b], outer.b2[b], outer.g, outer.h, opt);
    terms[b] = std::log(ev[b]) + component_bound(outer, b, y, inner);
  }
  return log_sum_exp(terms);
}

TTestResult compare_methods(std::span<const double> values_a,
                            std::span<const double> values_b) {
  if (values_a.size() < 2 || values_b.size() < 2) {
    throw std::invalid_argument("compare_methods needs at least two values per sample");
  }
  const double na = static_cast<double>(values_a.size());
  const double nb = static_cast<double>(values_b.size());
  TTestResult out;
  for (double v : values_a) out.mean_a += v;
  out.mean_a /= na;
  for (double v : values_b) out.mean_b += v;
  out.mean_b /= nb;
  double va = 0.0, vb = 0.0;
  for (double v : values_a) va += (v - out.mean_a) * (v - out.mean_a);
  for (double v : values_b) vb += (v - out.mean_b) * (v - out.mean_b);
  va /= na - 1.0;
  vb /= nb - 1.0;

  out.dof_pooled = na + nb - 2.0;
  if (va == 0.0 && vb == 0.0) {
    out.degenerate = true;
    out.dof_welch = out.dof_pooled;
    return out;  // t = 0, p = 1 by convention
  }

  const double diff = out.mean_a - out.mean_b;
  const double pooled_var = ((na - 1.0) * va + (nb - 1.0) * vb) / out.dof_pooled;
  out.t_pooled = diff / std::sqrt(pooled_var * (1.0 / na + 1.0 / nb));
  out.p_pooled = student_t_two_sided_p(out.t_pooled, out.dof_pooled);

  const double se2 = va / na + vb / nb;
  out.t_welch = diff / std::sqrt(se2);
  out.dof_welch = se2 * se2 /
                  (va * va / (na * na * (na - 1.0)) + vb * vb / (nb * nb * (nb - 1.0)));
  out.p_welch = student_t_two_sided_p(out.t_welch, out.dof_welch);
  return out;
}

}  // namespace dpvb
