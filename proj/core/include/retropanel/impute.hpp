#pragma once

#include "retropanel/panel.hpp"
#include "retropanel/solver.hpp"

namespace retropanel {

// The covariate itself jumps at treatment for later-treated units, so the
// untreated pre-period values cannot stand in for the treated ones. This
// runs the completion engine on the covariate as the outcome, unit
// weights, no nested covariates, over the retrospective mask, and splices
// the fitted values into the missing quadrant. Observed cells pass through
// bitwise.
struct ImputedCovariates {
  Matrix x_hat;        // N x T
  BoolMatrix imputed;  // true where x_hat came from the model
  McFit fit;
};

ImputedCovariates impute_endogenous_covariates(const PanelDataset& ds,
                                               const PenaltyConfig& config = {},
                                               const SolverOptions& opts = {});

// Fixed penalty variant (no cross-validation).
ImputedCovariates impute_endogenous_covariates(const PanelDataset& ds, double lambda_l,
                                               const SolverOptions& opts = {});

}  // namespace retropanel
