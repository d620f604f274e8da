#pragma once

#include <optional>
#include <vector>

#include "retropanel/panel.hpp"
#include "retropanel/solver.hpp"
#include "retropanel/types.hpp"

namespace retropanel {

// Treatment propensity model: the completion engine run on the 0/1
// treatment matrix over all cells (nothing is missing for this fit), with
// the covariate blended from its observed and imputed versions. Fitted
// values are clamped away from 0 and 1 before they are turned into
// balancing weights.
struct PropensityFit {
  McFit model;
  Matrix w_hat;  // clamped fitted treatment probabilities, N x T
  double eps_w = 0.05;
  int n_clamped_low = 0;   // fitted below eps_w
  int n_clamped_high = 0;  // fitted above 1 - eps_w
};

// X on treated cells, X_hat on untreated cells. Shapes must agree.
Matrix blend_covariates(const Matrix& x, const Matrix& x_hat, const IntMatrix& treated);

PropensityFit fit_treatment_model(const PanelDataset& ds, const std::optional<Matrix>& x_blend,
                                  double lambda_l, double lambda_phi, double eps_w = 0.05,
                                  const SolverOptions& opts = {});

// Same, with the penalty pair chosen by cross-validation over all cells.
PropensityFit fit_treatment_model_cv(const PanelDataset& ds, const std::optional<Matrix>& x_blend,
                                     const PenaltyConfig& config, double eps_w = 0.05,
                                     const SolverOptions& opts = {});

// Elapsed-time downweighting profile
//   z_t = 1 / (1 + exp(-(|t - t0| - m) / scale)),  m = midpoint_fraction * max_t |t - t0|.
// Strictly increasing in distance from t0, symmetric in |t - t0|, values
// in (0, 1), minimized at t0 itself.
struct ElapsedTimeProfile {
  int t0 = 0;
  double scale = 0.0;
  double midpoint = 0.0;
  Vector z;  // length T
};

double default_elapsed_scale(int n_periods);  // T / 10

ElapsedTimeProfile elapsed_time_profile(int n_periods, int t0, double scale,
                                        double midpoint_fraction = 0.5);

// Inverse-propensity-style loss weights on observed cells:
//   always-treated:  (1 - w_hat) / w_hat
//   later-treated:   (1 - z_t w_hat) / (z_t w_hat)
// clamped into [floor, cap]. Unobserved cells are left at 1 and never read.
struct WeightMatrix {
  Matrix w;  // N x T
  double floor = 1e-3;
  double cap = 1e3;
  int n_floor_clamped = 0;
  int n_cap_clamped = 0;
};

inline constexpr double kDefaultWeightFloor = 1e-3;
inline constexpr double kDefaultWeightCap = 1e3;

// Single shared profile for every later-treated unit (the cluster-uniform
// switch date case).
WeightMatrix combine_weights(const PropensityFit& prop, const ElapsedTimeProfile& profile,
                             const std::vector<Group>& group, const ObservationMask& mask,
                             double floor = kDefaultWeightFloor, double cap = kDefaultWeightCap);

// Per-unit profiles, indexed like group; entries for always-treated units
// are ignored. A disengaged entry means no elapsed-time factor (z = 1).
WeightMatrix combine_weights(const PropensityFit& prop,
                             const std::vector<std::optional<ElapsedTimeProfile>>& profiles,
                             const std::vector<Group>& group, const ObservationMask& mask,
                             double floor = kDefaultWeightFloor, double cap = kDefaultWeightCap);

Matrix unit_weights(int n, int t);

}  // namespace retropanel
