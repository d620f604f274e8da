#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "retropanel/panel.hpp"
#include "retropanel/types.hpp"

namespace retropanel {

// Weighted nuclear-norm-regularized matrix completion with two-way fixed
// effects and optional per-period covariate coefficients:
//
//   min over L, beta, gamma, delta of
//     (1/|O|) * sum over observed (i,t) of
//         w_it * (Y_it - L_it - X_it beta_t - gamma_i - delta_t)^2
//     + lambda_l * ||L||_*  + lambda_beta * ||beta||_1
//
// solved by block coordinate descent:
//   (a) closed-form weighted means for gamma and delta,
//   (b) per-period soft-thresholded weighted least squares for beta_t,
//   (c) a singular value thresholding step for L.
//
// Step (c) majorizes the weighted loss at the current L: observed cells of
// the working matrix take the convex blend
//     (w_it / w_max) * target + (1 - w_it / w_max) * L_it,
// unobserved cells keep L_it, and the SVD shrinkage threshold is
// lambda_l * |O| / (2 * w_max). At unit weights this is the classic
// soft-impute step (fill with targets, threshold at lambda_l * |O| / 2);
// in general it guarantees the objective never increases.

struct SvdShrinkage {
  Matrix low_rank;         // sum over components of max(sigma - lambda, 0) u v^T
  Vector singular_values;  // of low_rank, i.e. already shrunk, descending
};

// Soft-thresholds the singular values of m by lambda. lambda = 0 reproduces
// m up to SVD round-off.
SvdShrinkage soft_threshold_svd(const Matrix& m, double lambda);

struct SolverOptions {
  double rel_tol = 1e-5;         // on relative objective change
  int max_iter = 500;
  double rank_tol_factor = 1e-7; // rank counts sigma > factor * sigma_1
  int fe_max_iter = 1000;        // inner alternation for the FE-only fit
  double fe_rel_tol = 1e-10;
  bool warn_no_missing = true;   // callers that fit full panels on purpose turn this off
};

struct McFit {
  Matrix l_hat;   // N x T low-rank component
  Vector gamma;   // N unit effects, mean zero
  Vector delta;   // T period effects, absorbs the global level
  Vector beta;    // T per-period covariate coefficients (empty without covariates)
  bool used_covariates = false;
  double lambda_l = 0.0;
  double lambda_beta = 0.0;
  Vector singular_values;  // of l_hat, descending
  int rank = 0;            // singular values above rank_tol_factor * sigma_1
  bool converged = false;
  int iterations = 0;
  std::vector<double> objective_trace;  // trace[0] is the starting objective

  double objective() const { return objective_trace.back(); }
};

// weights must be strictly positive on observed cells. y must be finite on
// observed cells; values at unobserved cells are never read. A mask without
// missing cells is allowed (plain penalized regression) and only logged.
McFit fit_matrix_completion(const Matrix& y, const ObservationMask& mask,
                            const Matrix& weights, const std::optional<Matrix>& x,
                            double lambda_l, double lambda_beta,
                            const SolverOptions& opts = {}, const McFit* warm_start = nullptr);

// Weighted two-way fixed effects only (L and beta pinned at zero).
// Alternates exact gamma and delta sweeps. Returned gamma has mean zero.
struct FixedEffects {
  Vector gamma;
  Vector delta;
  int iterations = 0;
};
FixedEffects fit_fixed_effects(const Matrix& y, const ObservationMask& mask,
                               const Matrix& weights, const SolverOptions& opts = {});

// Smallest lambda_l for which the low-rank component stays exactly zero
// after the fixed-effects-only fit: 2 * sigma_1(weighted residual) / |O|.
double critical_lambda_l(const Matrix& y, const ObservationMask& mask, const Matrix& weights,
                         const SolverOptions& opts = {});

struct PenaltyConfig {
  // Descending grids. Empty grids are filled in from the data: lambda_l
  // gets grid_size_l log-spaced values spanning grid_decades below the
  // critical lambda, lambda_beta gets {0} plus grid_size_beta log-spaced
  // values (collapsing to {0} without covariates).
  std::vector<double> lambda_l_grid;
  std::vector<double> lambda_beta_grid;
  int grid_size_l = 10;
  int grid_size_beta = 5;
  double grid_decades = 3.0;
  int n_folds = 5;
  double holdout_fraction = 0.1;
  std::uint64_t cv_seed = 0;
};

struct CvEntry {
  double lambda_l = 0.0;
  double lambda_beta = 0.0;
  double mean_error = 0.0;            // mean weighted squared holdout error
  std::vector<double> fold_errors;
};

struct CvResult {
  double lambda_l = 0.0;
  double lambda_beta = 0.0;
  std::vector<CvEntry> table;  // grid order: lambda_beta outer, lambda_l inner, both descending
};

// Each fold hides a fresh uniform holdout_fraction of the observed cells,
// refits along the descending lambda_l grid with warm starts, and scores
// the held-out cells by weighted squared error. The winning pair minimizes
// the mean across folds (ties keep the more heavily penalized pair).
CvResult cross_validate_penalties(const Matrix& y, const ObservationMask& mask,
                                  const Matrix& weights, const std::optional<Matrix>& x,
                                  const PenaltyConfig& config, const SolverOptions& opts = {});

// Model value L + X beta + gamma + delta on every cell. Meaningful at the
// unobserved cells; callers keep observed outcomes where they want a
// full-panel view. x_hat must be supplied iff the fit used covariates.
Matrix predict_counterfactual(const McFit& fit, const std::optional<Matrix>& x_hat);

struct LatentTrends {
  Matrix factors;   // k x T, row j is sigma_j * v_j^T
  Matrix loadings;  // N x k, column j is u_j
  struct GroupSummary {
    double mean_abs_always_treated = 0.0;
    double mean_abs_later_treated = 0.0;
    double ratio = 0.0;  // later / always, 0 when the denominator vanishes
  };
  std::vector<GroupSummary> summary;  // one per factor
};

// Top-k singular components of l_hat. k may not exceed the fitted rank.
LatentTrends extract_latent_trends(const McFit& fit, const std::vector<Group>& group, int k);

}  // namespace retropanel
