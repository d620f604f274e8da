#pragma once

#include <optional>
#include <string>

#include "retropanel/baselines.hpp"
#include "retropanel/impute.hpp"
#include "retropanel/inference.hpp"
#include "retropanel/panel.hpp"
#include "retropanel/solver.hpp"
#include "retropanel/weights.hpp"

namespace retropanel {

enum class EstimatorKind { matrix_completion, did, scm };

const char* estimator_name(EstimatorKind kind);
std::optional<EstimatorKind> parse_estimator(const std::string& name);

// End-to-end configuration for one estimation run. Stages run in order:
// covariate imputation, treatment model, loss weights, outcome fit,
// counterfactual prediction, effects. Penalties left unset are chosen by
// cross-validation once per dataset; bootstrap replicates reuse them but
// re-estimate everything else.
struct PipelineConfig {
  EstimatorKind estimator = EstimatorKind::matrix_completion;
  bool use_covariates = true;        // ignored when the panel has none
  bool propensity_weights = true;
  bool elapsed_time_weights = true;  // only meaningful with propensity weights
  double elapsed_scale = 0.0;        // <= 0 -> T / 10
  double elapsed_midpoint_fraction = 0.5;
  double eps_w = 0.05;
  double weight_floor = kDefaultWeightFloor;
  double weight_cap = kDefaultWeightCap;
  PenaltyConfig penalties;           // shared CV settings for all three fits
  SolverOptions solver;
  // Fixed penalty pairs (lambda_l, lambda_beta-like); unset means CV.
  std::optional<std::pair<double, double>> outcome_penalties;
  std::optional<std::pair<double, double>> treatment_penalties;
  std::optional<double> covariate_penalty;
};

struct PipelineResult {
  Matrix y_hat1;  // model value at missing cells, observed outcome elsewhere
  EffectSeries effects;
  std::optional<McFit> outcome_fit;
  std::optional<ImputedCovariates> covariates;
  std::optional<PropensityFit> treatment_model;
  std::optional<WeightMatrix> weights;
  std::optional<DidFit> did;
  std::optional<std::vector<ScmFit>> scm;  // one per later-treated unit
};

// Requires at least one later-treated and one always-treated unit and a
// nonempty missing quadrant.
PipelineResult run_pipeline(const PanelDataset& ds, const PipelineConfig& config);

// The same run with penalties resolved up front on this dataset, so
// repeated calls (bootstrap replicates) skip cross-validation.
PipelineConfig resolve_penalties(const PanelDataset& ds, PipelineConfig config);

// Closure forms used by the bootstrap, placebo suite and comparisons.
EffectPipeline make_effect_pipeline(const PipelineConfig& config);

// Factory that resolves penalties on whatever dataset it is handed, then
// hands back the fixed-penalty closure. What the placebo suite wants.
PipelineFactory make_pipeline_factory(const PipelineConfig& config);

// Imputers for the accuracy comparison. The matrix completion imputer
// follows the pipeline weighting but never uses covariates; penalties are
// cross-validated per dataset it sees.
NamedImputer make_mc_imputer(const PipelineConfig& config);
NamedImputer make_did_imputer();
NamedImputer make_scm_imputer(const ScmOptions& opts = {});

}  // namespace retropanel
