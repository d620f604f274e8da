#include "retropanel/impute.hpp"

#include "retropanel/errors.hpp"
#include "retropanel/weights.hpp"

namespace retropanel {

namespace {

ImputedCovariates impute_at(const PanelDataset& ds, double lambda_l, const SolverOptions& opts) {
  const ObservationMask mask = build_retrospective_mask(ds);
  SolverOptions o = opts;
  o.warn_no_missing = false;  // an all-treated panel legitimately has nothing to impute
  McFit fit = fit_matrix_completion(*ds.covariate, mask,
                                    unit_weights(ds.n_units(), ds.n_periods()), std::nullopt,
                                    lambda_l, 0.0, o);
  ImputedCovariates out;
  out.x_hat = *ds.covariate;
  out.imputed = BoolMatrix::Constant(ds.n_units(), ds.n_periods(), false);
  const Matrix pred = predict_counterfactual(fit, std::nullopt);
  for (int i = 0; i < ds.n_units(); ++i) {
    for (int j = 0; j < ds.n_periods(); ++j) {
      if (mask.observed(i, j)) continue;
      out.x_hat(i, j) = pred(i, j);
      out.imputed(i, j) = true;
    }
  }
  out.fit = std::move(fit);
  return out;
}

}  // namespace

ImputedCovariates impute_endogenous_covariates(const PanelDataset& ds, double lambda_l,
                                               const SolverOptions& opts) {
  if (!ds.has_covariate())
    raise(Errc::covariate_mismatch, "panel has no covariate to impute");
  return impute_at(ds, lambda_l, opts);
}

ImputedCovariates impute_endogenous_covariates(const PanelDataset& ds,
                                               const PenaltyConfig& config,
                                               const SolverOptions& opts) {
  if (!ds.has_covariate())
    raise(Errc::covariate_mismatch, "panel has no covariate to impute");
  const ObservationMask mask = build_retrospective_mask(ds);
  if (mask.n_missing == 0) {
    // Nothing to impute: skip model selection, keep the low-rank part at
    // zero (any penalty at or above the critical one does), pass through.
    const double lambda = critical_lambda_l(*ds.covariate, mask,
                                            unit_weights(ds.n_units(), ds.n_periods()), opts);
    return impute_at(ds, lambda, opts);
  }
  SolverOptions o = opts;
  o.warn_no_missing = false;
  const CvResult cv = cross_validate_penalties(*ds.covariate, mask,
                                               unit_weights(ds.n_units(), ds.n_periods()),
                                               std::nullopt, config, o);
  return impute_at(ds, cv.lambda_l, opts);
}

}  // namespace retropanel
