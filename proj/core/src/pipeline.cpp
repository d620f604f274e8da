#include "retropanel/pipeline.hpp"

#include <cmath>

#include "retropanel/errors.hpp"
#include "retropanel/util.hpp"

namespace retropanel {

const char* estimator_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::matrix_completion: return "mc";
    case EstimatorKind::did: return "did";
    case EstimatorKind::scm: return "scm";
  }
  return "unknown";
}

std::optional<EstimatorKind> parse_estimator(const std::string& name) {
  if (name == "mc") return EstimatorKind::matrix_completion;
  if (name == "did") return EstimatorKind::did;
  if (name == "scm") return EstimatorKind::scm;
  return std::nullopt;
}

namespace {

void validate_retrospective(const PanelDataset& ds) {
  bool has_later = false, has_always = false;
  for (Group g : ds.group) {
    if (g == Group::later_treated) has_later = true;
    if (g == Group::always_treated) has_always = true;
  }
  if (!has_later)
    raise(Errc::no_later_treated, "no later-treated units: nothing to impute");
  if (!has_always)
    raise(Errc::no_always_treated, "no always-treated units: no treated history to lean on");
}

Matrix splice_missing(const Matrix& y, const Matrix& pred, const ObservationMask& mask) {
  Matrix out = y;
  for (int i = 0; i < y.rows(); ++i)
    for (int j = 0; j < y.cols(); ++j)
      if (!mask.observed(i, j)) out(i, j) = pred(i, j);
  return out;
}

Matrix scm_counterfactual(const PanelDataset& ds, const ObservationMask& mask,
                          const ScmOptions& opts, std::vector<ScmFit>* fits_out) {
  const std::vector<int> controls = ds.always_treated_units();
  if (controls.empty())
    raise(Errc::no_always_treated, "synthetic control needs always-treated units as donors");
  Matrix pred = ds.outcome;
  for (int u : ds.later_treated_units()) {
    const int t0 = ds.first_treated[static_cast<std::size_t>(u)];
    const int fit_len = ds.n_periods() - t0;
    Vector treated_window(fit_len);
    Matrix controls_window(static_cast<int>(controls.size()), fit_len);
    Matrix controls_target(static_cast<int>(controls.size()), t0);
    for (int j = 0; j < fit_len; ++j) {
      treated_window(j) = ds.outcome(u, t0 + j);
      for (std::size_t c = 0; c < controls.size(); ++c)
        controls_window(static_cast<int>(c), j) = ds.outcome(controls[c], t0 + j);
    }
    for (int j = 0; j < t0; ++j)
      for (std::size_t c = 0; c < controls.size(); ++c)
        controls_target(static_cast<int>(c), j) = ds.outcome(controls[c], j);

    const ScmFit fit = fit_scm(treated_window, controls_window, opts);
    const Vector imputed = scm_predict(fit, controls_target);
    for (int j = 0; j < t0; ++j)
      if (!mask.observed(u, j)) pred(u, j) = imputed(j);
    if (fits_out != nullptr) fits_out->push_back(fit);
  }
  return pred;
}

}  // namespace

PipelineResult run_pipeline(const PanelDataset& ds, const PipelineConfig& config) {
  validate_retrospective(ds);
  const ObservationMask mask = build_retrospective_mask(ds);

  PipelineResult result;
  if (config.estimator == EstimatorKind::did) {
    DidFit did = fit_did(ds);
    Matrix pred = ds.outcome;
    pred.array() += did.tau;
    result.y_hat1 = splice_missing(ds.outcome, pred, mask);
    result.effects = estimate_effects(ds.outcome, result.y_hat1, mask);
    result.did = std::move(did);
    return result;
  }
  if (config.estimator == EstimatorKind::scm) {
    std::vector<ScmFit> fits;
    const Matrix pred = scm_counterfactual(ds, mask, ScmOptions{}, &fits);
    result.y_hat1 = splice_missing(ds.outcome, pred, mask);
    result.effects = estimate_effects(ds.outcome, result.y_hat1, mask);
    result.scm = std::move(fits);
    return result;
  }

  const bool use_cov = config.use_covariates && ds.has_covariate();
  std::optional<Matrix> x_hat;
  if (use_cov) {
    ImputedCovariates imputed =
        config.covariate_penalty
            ? impute_endogenous_covariates(ds, *config.covariate_penalty, config.solver)
            : impute_endogenous_covariates(ds, config.penalties, config.solver);
    x_hat = imputed.x_hat;
    result.covariates = std::move(imputed);
  }

  Matrix weights = unit_weights(ds.n_units(), ds.n_periods());
  if (config.propensity_weights) {
    PropensityFit prop =
        config.treatment_penalties
            ? fit_treatment_model(ds, x_hat, config.treatment_penalties->first,
                                  config.treatment_penalties->second, config.eps_w,
                                  config.solver)
            : fit_treatment_model_cv(ds, x_hat, config.penalties, config.eps_w, config.solver);
    std::vector<std::optional<ElapsedTimeProfile>> profiles(
        static_cast<std::size_t>(ds.n_units()));
    if (config.elapsed_time_weights) {
      const double scale = config.elapsed_scale > 0.0 ? config.elapsed_scale
                                                      : default_elapsed_scale(ds.n_periods());
      for (int i = 0; i < ds.n_units(); ++i)
        if (ds.group[static_cast<std::size_t>(i)] == Group::later_treated)
          profiles[static_cast<std::size_t>(i)] =
              elapsed_time_profile(ds.n_periods(), ds.first_treated[static_cast<std::size_t>(i)],
                                   scale, config.elapsed_midpoint_fraction);
    }
    WeightMatrix wm = combine_weights(prop, profiles, ds.group, mask, config.weight_floor,
                                      config.weight_cap);
    weights = wm.w;
    result.treatment_model = std::move(prop);
    result.weights = std::move(wm);
  }

  double lambda_l, lambda_beta;
  if (config.outcome_penalties) {
    lambda_l = config.outcome_penalties->first;
    lambda_beta = config.outcome_penalties->second;
  } else {
    const CvResult cv = cross_validate_penalties(
        ds.outcome, mask, weights, use_cov ? x_hat : std::nullopt, config.penalties,
        config.solver);
    lambda_l = cv.lambda_l;
    lambda_beta = cv.lambda_beta;
  }
  McFit fit = fit_matrix_completion(ds.outcome, mask, weights,
                                    use_cov ? x_hat : std::nullopt, lambda_l, lambda_beta,
                                    config.solver);
  const Matrix pred = predict_counterfactual(fit, use_cov ? x_hat : std::nullopt);
  result.y_hat1 = splice_missing(ds.outcome, pred, mask);
  result.effects = estimate_effects(ds.outcome, result.y_hat1, mask);
  result.outcome_fit = std::move(fit);
  return result;
}

PipelineConfig resolve_penalties(const PanelDataset& ds, PipelineConfig config) {
  validate_retrospective(ds);
  if (config.estimator != EstimatorKind::matrix_completion) return config;
  const ObservationMask mask = build_retrospective_mask(ds);
  const bool use_cov = config.use_covariates && ds.has_covariate();

  std::optional<Matrix> x_hat;
  if (use_cov) {
    if (!config.covariate_penalty) {
      SolverOptions o = config.solver;
      o.warn_no_missing = false;
      const CvResult cv = cross_validate_penalties(
          *ds.covariate, mask, unit_weights(ds.n_units(), ds.n_periods()), std::nullopt,
          config.penalties, o);
      config.covariate_penalty = cv.lambda_l;
    }
    x_hat = impute_endogenous_covariates(ds, *config.covariate_penalty, config.solver).x_hat;
  }

  Matrix weights = unit_weights(ds.n_units(), ds.n_periods());
  if (config.propensity_weights) {
    if (!config.treatment_penalties) {
      Matrix w(ds.n_units(), ds.n_periods());
      for (int i = 0; i < ds.n_units(); ++i)
        for (int j = 0; j < ds.n_periods(); ++j) w(i, j) = static_cast<double>(ds.treated(i, j));
      SolverOptions o = config.solver;
      o.warn_no_missing = false;
      const CvResult cv = cross_validate_penalties(
          w, mask_from_bool(BoolMatrix::Constant(ds.n_units(), ds.n_periods(), true)),
          unit_weights(ds.n_units(), ds.n_periods()), x_hat, config.penalties, o);
      config.treatment_penalties = std::make_pair(cv.lambda_l, cv.lambda_beta);
    }
    PropensityFit prop =
        fit_treatment_model(ds, x_hat, config.treatment_penalties->first,
                            config.treatment_penalties->second, config.eps_w, config.solver);
    std::vector<std::optional<ElapsedTimeProfile>> profiles(
        static_cast<std::size_t>(ds.n_units()));
    if (config.elapsed_time_weights) {
      const double scale = config.elapsed_scale > 0.0 ? config.elapsed_scale
                                                      : default_elapsed_scale(ds.n_periods());
      for (int i = 0; i < ds.n_units(); ++i)
        if (ds.group[static_cast<std::size_t>(i)] == Group::later_treated)
          profiles[static_cast<std::size_t>(i)] =
              elapsed_time_profile(ds.n_periods(), ds.first_treated[static_cast<std::size_t>(i)],
                                   scale, config.elapsed_midpoint_fraction);
    }
    weights = combine_weights(prop, profiles, ds.group, mask, config.weight_floor,
                              config.weight_cap)
                  .w;
  }

  if (!config.outcome_penalties) {
    const CvResult cv = cross_validate_penalties(ds.outcome, mask, weights,
                                                 use_cov ? x_hat : std::nullopt,
                                                 config.penalties, config.solver);
    config.outcome_penalties = std::make_pair(cv.lambda_l, cv.lambda_beta);
  }
  return config;
}

EffectPipeline make_effect_pipeline(const PipelineConfig& config) {
  return [config](const PanelDataset& ds) { return run_pipeline(ds, config).effects; };
}

PipelineFactory make_pipeline_factory(const PipelineConfig& config) {
  return [config](const PanelDataset& ds) {
    return make_effect_pipeline(resolve_penalties(ds, config));
  };
}

NamedImputer make_mc_imputer(const PipelineConfig& config) {
  PipelineConfig cfg = config;
  cfg.estimator = EstimatorKind::matrix_completion;
  cfg.use_covariates = false;  // comparability across estimators
  cfg.outcome_penalties.reset();
  cfg.treatment_penalties.reset();
  cfg.covariate_penalty.reset();
  return {"mc", [cfg](const PanelDataset& ds, const ObservationMask&) {
            return run_pipeline(ds, cfg).y_hat1;
          }};
}

NamedImputer make_did_imputer() {
  return {"did", [](const PanelDataset& ds, const ObservationMask& mask) {
            return did_impute(ds.outcome, mask);
          }};
}

NamedImputer make_scm_imputer(const ScmOptions& opts) {
  return {"scm", [opts](const PanelDataset& ds, const ObservationMask& mask) {
            return scm_counterfactual(ds, mask, opts, nullptr);
          }};
}

}  // namespace retropanel
