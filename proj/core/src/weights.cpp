#include "retropanel/weights.hpp"

#include <algorithm>
#include <cmath>

#include "retropanel/errors.hpp"
#include "retropanel/util.hpp"

namespace retropanel {

Matrix unit_weights(int n, int t) { return Matrix::Ones(n, t); }

Matrix blend_covariates(const Matrix& x, const Matrix& x_hat, const IntMatrix& treated) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols() || x.rows() != treated.rows() ||
      x.cols() != treated.cols())
    raise(Errc::dimension_mismatch, "covariate blend inputs disagree on shape");
  Matrix out = x;
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j)
      if (treated(i, j) == 0) out(i, j) = x_hat(i, j);
  return out;
}

namespace {

PropensityFit finish_propensity(const PanelDataset& ds, McFit model,
                                const std::optional<Matrix>& x_blend, double eps_w) {
  if (!(eps_w > 0.0) || eps_w >= 0.5) raise(Errc::bad_config, "eps_w must lie in (0, 0.5)");
  PropensityFit prop;
  prop.eps_w = eps_w;
  prop.w_hat = predict_counterfactual(model, x_blend);
  prop.model = std::move(model);
  for (int i = 0; i < ds.n_units(); ++i) {
    for (int j = 0; j < ds.n_periods(); ++j) {
      double& v = prop.w_hat(i, j);
      if (v < eps_w) {
        v = eps_w;
        ++prop.n_clamped_low;
      } else if (v > 1.0 - eps_w) {
        v = 1.0 - eps_w;
        ++prop.n_clamped_high;
      }
    }
  }
  return prop;
}

Matrix treatment_as_outcome(const PanelDataset& ds) {
  Matrix w(ds.n_units(), ds.n_periods());
  for (int i = 0; i < ds.n_units(); ++i)
    for (int j = 0; j < ds.n_periods(); ++j) w(i, j) = static_cast<double>(ds.treated(i, j));
  return w;
}

ObservationMask full_mask(int n, int t) {
  return mask_from_bool(BoolMatrix::Constant(n, t, true));
}

}  // namespace

PropensityFit fit_treatment_model(const PanelDataset& ds, const std::optional<Matrix>& x_blend,
                                  double lambda_l, double lambda_phi, double eps_w,
                                  const SolverOptions& opts) {
  const Matrix w = treatment_as_outcome(ds);
  const ObservationMask mask = full_mask(ds.n_units(), ds.n_periods());
  SolverOptions o = opts;
  o.warn_no_missing = false;  // the treatment model fits every cell by design
  McFit model = fit_matrix_completion(w, mask, unit_weights(ds.n_units(), ds.n_periods()),
                                      x_blend, lambda_l, lambda_phi, o);
  return finish_propensity(ds, std::move(model), x_blend, eps_w);
}

PropensityFit fit_treatment_model_cv(const PanelDataset& ds, const std::optional<Matrix>& x_blend,
                                     const PenaltyConfig& config, double eps_w,
                                     const SolverOptions& opts) {
  const Matrix w = treatment_as_outcome(ds);
  const ObservationMask mask = full_mask(ds.n_units(), ds.n_periods());
  SolverOptions o = opts;
  o.warn_no_missing = false;
  const CvResult cv = cross_validate_penalties(
      w, mask, unit_weights(ds.n_units(), ds.n_periods()), x_blend, config, o);
  return fit_treatment_model(ds, x_blend, cv.lambda_l, cv.lambda_beta, eps_w, opts);
}

double default_elapsed_scale(int n_periods) { return n_periods / 10.0; }

ElapsedTimeProfile elapsed_time_profile(int n_periods, int t0, double scale,
                                        double midpoint_fraction) {
  if (t0 < 0 || t0 >= n_periods)
    raise(Errc::bad_pivot, "profile pivot " + std::to_string(t0) + " outside [0, " +
                               std::to_string(n_periods - 1) + "]");
  if (!(scale > 0.0)) raise(Errc::bad_pivot, "profile scale must be positive");
  if (!(midpoint_fraction >= 0.0) || !(midpoint_fraction <= 1.0))
    raise(Errc::bad_config, "midpoint fraction must lie in [0, 1]");

  ElapsedTimeProfile profile;
  profile.t0 = t0;
  profile.scale = scale;
  const int max_dist = std::max(t0, n_periods - 1 - t0);
  profile.midpoint = midpoint_fraction * max_dist;
  profile.z.resize(n_periods);
  for (int t = 0; t < n_periods; ++t) {
    const double d = std::abs(t - t0);
    profile.z(t) = 1.0 / (1.0 + std::exp(-(d - profile.midpoint) / scale));
  }
  return profile;
}

WeightMatrix combine_weights(const PropensityFit& prop,
                             const std::vector<std::optional<ElapsedTimeProfile>>& profiles,
                             const std::vector<Group>& group, const ObservationMask& mask,
                             double floor, double cap) {
  const int n = static_cast<int>(prop.w_hat.rows());
  const int t = static_cast<int>(prop.w_hat.cols());
  if (mask.rows() != n || mask.cols() != t)
    raise(Errc::dimension_mismatch, "mask does not match the propensity fit");
  if (static_cast<int>(group.size()) != n || static_cast<int>(profiles.size()) != n)
    raise(Errc::dimension_mismatch, "group/profile vectors do not match the propensity fit");
  if (!(floor > 0.0) || !(cap > floor)) raise(Errc::bad_config, "need 0 < floor < cap");

  WeightMatrix wm;
  wm.floor = floor;
  wm.cap = cap;
  wm.w = Matrix::Ones(n, t);
  for (int i = 0; i < n; ++i) {
    const bool later = group[static_cast<std::size_t>(i)] == Group::later_treated;
    const auto& profile = profiles[static_cast<std::size_t>(i)];
    if (later && profile && profile->z.size() != t)
      raise(Errc::dimension_mismatch, "profile length does not match the panel");
    for (int j = 0; j < t; ++j) {
      if (!mask.observed(i, j)) continue;
      double p = prop.w_hat(i, j);
      if (later && profile) p *= profile->z(j);
      double w = (1.0 - p) / p;
      if (w < floor) {
        w = floor;
        ++wm.n_floor_clamped;
      } else if (w > cap) {
        w = cap;
        ++wm.n_cap_clamped;
      }
      wm.w(i, j) = w;
    }
  }
  return wm;
}

WeightMatrix combine_weights(const PropensityFit& prop, const ElapsedTimeProfile& profile,
                             const std::vector<Group>& group, const ObservationMask& mask,
                             double floor, double cap) {
  std::vector<std::optional<ElapsedTimeProfile>> profiles(group.size());
  for (std::size_t i = 0; i < group.size(); ++i)
    if (group[i] == Group::later_treated) profiles[i] = profile;
  return combine_weights(prop, profiles, group, mask, floor, cap);
}

}  // namespace retropanel
