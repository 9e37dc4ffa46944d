#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dpvb/gibbs.hpp"
#include "dpvb/special_math.hpp"
#include "dpvb/vb.hpp"

namespace dpvb {

/// A future group y* with cached count, mean and centered sum of squares.
struct HeldOutGroup {
  std::string id;
  std::vector<double> values;
  double sum = 0.0;
  double sumsq = 0.0;
  double mean = 0.0;
  double centered_ss = 0.0;  // S* = sum (y_i - mean)^2

  HeldOutGroup(std::string group_id, std::span<const double> obs);
  std::size_t n() const { return values.size(); }
};

struct PredictiveOptions {
  /// Fresh base-distribution draws used to average the urn's new-component
  /// mass, per retained state.
  std::size_t fresh_atom_draws = 32;
  double inner_tol = 1e-8;
  std::size_t inner_max_iter = 500;
};

/// ln[(1/T) sum_t p(y*|Theta_t)] over a blocked trace, where
/// p(y*|Theta) = sum_b v_b f(y*|zeta_b, sigma2).
double predictive_mcmc(const BlockedTrace& trace, const HeldOutGroup& y);

/// Same average over an urn trace: occupied clusters weigh m_k/(alpha+J);
/// the remaining alpha/(alpha+J) mass is averaged over fresh_atom_draws
/// draws from N(mu_t, tau2_t).
double predictive_mcmc(const PolyaTrace& trace, const HeldOutGroup& y, double alpha,
                       std::size_t num_train_groups, const PredictiveOptions& opt,
                       Rng& rng);

/// Converged nested-variational factors for one component.
struct InnerComponent {
  double A = 0.0;   // v(zeta_b) mean
  double B2 = 1.0;  // v(zeta_b) variance
  double G = 1.0;   // v(sigma2) shape, g + n*/2
  double H = 1.0;   // v(sigma2) scale (per component)
  bool converged = false;
  std::size_t iterations = 0;
};

/// Alternates the (A, B2) and H updates to a fixed point.
InnerComponent inner_vb(const HeldOutGroup& y, double a_b, double b2_b, double g,
                        double h, const PredictiveOptions& opt = {});

/// F_b = E_v[ln q(zeta_b) - ln v(zeta_b)] + E_v[ln q(sigma2) - ln v(sigma2)]
///     + E_v[ln f(y*|zeta_b, sigma2)], each term in closed form.
double component_bound(const HeldOutGroup& y, double a_b, double b2_b, double g,
                       double h, const InnerComponent& inner);
double component_bound(const VBState& outer, std::size_t b, const HeldOutGroup& y,
                       const InnerComponent& inner);

/// The F_b expression exactly as printed (kept for comparison; the
/// corrected form above is what predictive_vb uses).
double component_bound_as_printed(const HeldOutGroup& y, double a_b, double b2_b,
                                  double g, double h, const InnerComponent& inner);

namespace detail {
/// Core of component_bound on raw statistics; n may be zero (used by the
/// degenerate-identity tests).
double component_bound_core(std::size_t n, double sum, double sumsq, double a_b,
                            double b2_b, double g, double h, const InnerComponent& inner);
}  // namespace detail

/// ln F = ln sum_b E[v_b] exp(F_b), assembled with log_sum_exp.
double predictive_vb(const VBState& outer, const HeldOutGroup& y,
                     const PredictiveOptions& opt = {});

/// Two-sample t test, pooled-variance and Welch variants side by side.
struct TTestResult {
  double mean_a = 0.0;
  double mean_b = 0.0;
  double t_pooled = 0.0;
  double p_pooled = 1.0;
  double dof_pooled = 0.0;
  double t_welch = 0.0;
  double p_welch = 1.0;
  double dof_welch = 0.0;
  bool degenerate = false;  // both samples had zero variance
};

TTestResult compare_methods(std::span<const double> values_a,
                            std::span<const double> values_b);

}  // namespace dpvb
