#pragma once

#include <cstddef>
#include <filesystem>
#include <utility>
#include <vector>

#include "dpvb/dataset.hpp"
#include "dpvb/model.hpp"

namespace dpvb {

/// Published-formula compatibility switches. The defaults are the
/// derivation-consistent forms; flipping a switch selects the variant as
/// printed, for side-by-side comparison.
struct VBOptions {
  /// E[ln(1-w_l)] uses psi(d_l) - psi(c_l+d_l); printed variant uses psi(c_l).
  bool stick_term_digamma_d = true;
  /// d_b accumulates sum_{l>b} sum_j r_jl; printed variant repeats r_jb.
  bool stick_counts_later_components = true;
  /// h scales the atom variance by the group size n_j; printed variant does not.
  bool noise_scale_group_size = true;
};

/// Variational parameters of the factorized posterior
/// q = prod_j q(c_j) prod_b q(w_b) prod_b q(zeta_b) q(sigma2) q(mu|tau2) q(tau2).
struct VBState {
  std::vector<std::vector<double>> r;  // J x B responsibilities
  std::vector<double> a;               // atom means
  std::vector<double> b2;              // atom variances
  std::vector<double> c;               // Beta first parameters
  std::vector<double> d;               // Beta second parameters
  double e = 0.0;   // mean of q(mu|tau2)
  double f2 = 1.0;  // precision scale of q(mu|tau2), equals B
  double k = 1.0;   // q(tau2) shape
  double s = 1.0;   // q(tau2) scale
  double g = 1.0;   // q(sigma2) shape
  double h = 1.0;   // q(sigma2) scale

  std::size_t truncation() const { return a.size(); }
  std::size_t num_groups() const { return r.size(); }
  /// Row-stochastic r (1e-12) and strictly positive scale parameters.
  void validate() const;
};

struct VBReport {
  bool converged = false;
  std::size_t iterations = 0;
  double final_max_rel_change = 0.0;
  double wall_time_seconds = 0.0;
  std::vector<double> expected_weights;
  std::vector<double> atom_means;
  std::vector<double> atom_vars;
  double sigma2_shape = 0.0, sigma2_scale = 0.0;
  double tau2_shape = 0.0, tau2_scale = 0.0;
  int s_floor_hits = 0;
  std::vector<double> elbo_history;  // filled only when tracking is on
};

/// Deterministic start: atom means at quantiles of the group means, pooled
/// within-group variance for b2 and (g,h), group-mean variance for (k,s),
/// uniform responsibilities, occupancy-shaped sticks.
VBState init_vb_state(const GroupedDataset& data, const ModelConfig& model);

/// log r_jb ~ -(g/2h)[sum_i (y_ij - a_b)^2 + n_j b2_b] + E[ln w_b]
///            + sum_{l<b} E[ln(1-w_l)], normalized per row. The last
/// component has no E[ln w] term because w_B == 1.
void update_responsibilities(VBState& state, const GroupedDataset& data,
                             const VBOptions& opt = {});

/// a_b = [(g/h) sum_j r_jb sum_j(y) + (k/s) e] / [(g/h) sum_j r_jb n_j + k/s],
/// b2_b the reciprocal of that denominator.
void update_atoms(VBState& state, const GroupedDataset& data);

/// c_b = sum_j r_jb + 1; d_b = alpha + sum_{l>b} sum_j r_jl (d_B = alpha).
void update_sticks(VBState& state, double alpha, const VBOptions& opt = {});

/// e = mean(a), f2 = B, k = B/2 - 3/2, s = (1/2) sum_b [(a_b - e)^2 + b2_b].
/// Throws for B <= 3 (k would not be positive). s is floored at 1e-30; the
/// counter reports how often that fired.
void update_mu_tau(VBState& state, int* s_floor_hits = nullptr);

/// g = N/2; h = (1/2) sum_j sum_b r_jb [sum_i (y_ij-a_b)^2 + n_j b2_b].
void update_sigma(VBState& state, const GroupedDataset& data, const VBOptions& opt = {});

/// Coordinate ascent: responsibilities -> atoms -> sticks -> (mu,tau)
/// -> sigma, stopping when the max relative change over all scalar
/// parameters drops below tol. Non-convergence at max_iter is reported,
/// not fatal.
std::pair<VBState, VBReport> run_vb(const GroupedDataset& data, const ModelConfig& model,
                                    double tol, std::size_t max_iter,
                                    const VBOptions& opt = {}, bool track_elbo = false);

/// Same loop from a caller-supplied starting state.
std::pair<VBState, VBReport> run_vb_from(VBState init, const GroupedDataset& data,
                                         double alpha, double tol, std::size_t max_iter,
                                         const VBOptions& opt = {},
                                         bool track_elbo = false);

/// Term-by-term evidence lower bound for the truncated model; the improper
/// 1/sigma2 prior enters unnormalized, so the total is meaningful up to the
/// corresponding additive constant.
struct ElboBreakdown {
  double likelihood = 0.0;
  double atom_prior = 0.0;
  double stick_prior = 0.0;
  double hyper_prior = 0.0;
  double entropy_labels = 0.0;
  double entropy_sticks = 0.0;
  double entropy_atoms = 0.0;
  double entropy_sigma2 = 0.0;
  double entropy_mu = 0.0;
  double entropy_tau2 = 0.0;

  double total() const {
    return likelihood + atom_prior + stick_prior + hyper_prior + entropy_labels +
           entropy_sticks + entropy_atoms + entropy_sigma2 + entropy_mu + entropy_tau2;
  }
};

ElboBreakdown elbo_breakdown(const VBState& state, const GroupedDataset& data,
                             double alpha);
double elbo(const VBState& state, const GroupedDataset& data, double alpha);

void write_vb_state_json(const VBState& state, const std::filesystem::path& path);
VBState read_vb_state_json(const std::filesystem::path& path);
void write_vb_report_json(const VBReport& report, const std::filesystem::path& path);

}  // namespace dpvb
