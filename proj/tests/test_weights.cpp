#include <cmath>
#include <vector>

#include "doctest.h"
#include "retropanel/errors.hpp"
#include "retropanel/panel.hpp"
#include "retropanel/weights.hpp"

using namespace retropanel;

namespace {

PanelDataset block_panel(int n_at, int n_lt, int t, int t0) {
  const int n = n_at + n_lt;
  std::vector<std::string> units, periods;
  for (int i = 0; i < n; ++i) units.push_back("u" + std::to_string(10 + i));
  for (int j = 0; j < t; ++j) periods.push_back("p" + std::to_string(10 + j));
  Matrix y = Matrix::Zero(n, t);
  IntMatrix w(n, t);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < t; ++j) {
      w(i, j) = (i < n_at || j >= t0) ? 1 : 0;
      y(i, j) = 0.1 * i - 0.2 * j;
    }
  return make_panel(units, periods, y, w);
}

}  // namespace

TEST_CASE("elapsed profile is symmetric, pinned at t0, increasing, bounded") {
  const ElapsedTimeProfile p = elapsed_time_profile(5, 2, 0.7);
  CHECK(p.z(0) == doctest::Approx(p.z(4)).epsilon(1e-12));
  CHECK(p.z(1) == doctest::Approx(p.z(3)).epsilon(1e-12));
  CHECK(p.z(2) < p.z(1));
  CHECK(p.z(1) < p.z(0));
  for (int j = 0; j < 5; ++j) {
    CHECK(p.z(j) > 0.0);
    CHECK(p.z(j) < 1.0);
  }
}

TEST_CASE("elapsed profile matches the logistic formula cell by cell") {
  const int t = 60, t0 = 24;
  const double scale = 6.0;
  const ElapsedTimeProfile p = elapsed_time_profile(t, t0, scale);
  const double max_dist = std::max(t0, t - 1 - t0);
  const double m = 0.5 * max_dist;
  for (int j = 0; j < t; ++j) {
    const double d = std::abs(j - t0);
    const double want = 1.0 / (1.0 + std::exp(-(d - m) / scale));
    CHECK(p.z(j) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("elapsed profile approaches a step as scale vanishes") {
  const ElapsedTimeProfile p = elapsed_time_profile(41, 20, 1e-4);
  CHECK(p.z(20) < 1e-6);          // distance 0, far below the midpoint
  CHECK(p.z(0) > 1.0 - 1e-6);     // distance 20, far above
  CHECK(p.z(40) > 1.0 - 1e-6);
}

TEST_CASE("elapsed profile rejects a pivot outside the window") {
  CHECK_THROWS_AS((void)elapsed_time_profile(10, 10, 1.0), Error);
  CHECK_THROWS_AS((void)elapsed_time_profile(10, -1, 1.0), Error);
  CHECK_THROWS_AS((void)elapsed_time_profile(10, 5, 0.0), Error);
}

TEST_CASE("default elapsed scale is a tenth of the window") {
  CHECK(default_elapsed_scale(60) == doctest::Approx(6.0));
  CHECK(default_elapsed_scale(5) == doctest::Approx(0.5));
}

TEST_CASE("treatment model saturates on an all-treated panel") {
  const PanelDataset ds = block_panel(4, 0, 6, 0);
  const PropensityFit prop = fit_treatment_model(ds, std::nullopt, 0.01, 0.0);
  for (int i = 0; i < ds.n_units(); ++i)
    for (int j = 0; j < ds.n_periods(); ++j)
      CHECK(prop.w_hat(i, j) == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(prop.n_clamped_high == 4 * 6);
}

TEST_CASE("treatment model reproduces the block pattern at light penalty") {
  const PanelDataset ds = block_panel(2, 2, 6, 4);
  const PropensityFit prop = fit_treatment_model(ds, std::nullopt, 1e-6, 0.0);
  const Matrix fitted = predict_counterfactual(prop.model, std::nullopt);
  for (int i = 0; i < ds.n_units(); ++i)
    for (int j = 0; j < ds.n_periods(); ++j)
      CHECK(std::abs(fitted(i, j) - ds.treated(i, j)) < 1e-2);
}

TEST_CASE("fitted propensities are clamped into the open interval") {
  const PanelDataset ds = block_panel(3, 1, 5, 2);
  const PropensityFit prop = fit_treatment_model(ds, std::nullopt, 1e-8, 0.0, 0.05);
  for (int i = 0; i < ds.n_units(); ++i)
    for (int j = 0; j < ds.n_periods(); ++j) {
      CHECK(prop.w_hat(i, j) >= 0.05);
      CHECK(prop.w_hat(i, j) <= 0.95);
    }
  // near-exact fit pushes treated cells past 1 - eps, untreated below eps
  CHECK(prop.n_clamped_high > 0);
  CHECK(prop.n_clamped_low > 0);
}

TEST_CASE("weight arithmetic on the two groups") {
  const int n = 2, t = 3;
  PropensityFit prop;
  prop.w_hat = Matrix::Constant(n, t, 0.5);
  prop.eps_w = 0.05;
  ElapsedTimeProfile profile;
  profile.t0 = 2;
  profile.z = Vector::Constant(t, 0.5);
  const std::vector<Group> group{Group::always_treated, Group::later_treated};
  const ObservationMask mask = mask_from_bool(BoolMatrix::Constant(n, t, true));

  const WeightMatrix w = combine_weights(prop, profile, group, mask);
  CHECK(w.w(0, 0) == doctest::Approx(1.0).epsilon(1e-12));          // (1-.5)/.5
  CHECK(w.w(1, 0) == doctest::Approx(3.0).epsilon(1e-12));          // (1-.25)/.25
  CHECK(w.n_floor_clamped == 0);
  CHECK(w.n_cap_clamped == 0);

  prop.w_hat = Matrix::Constant(n, t, 0.95);
  const WeightMatrix w2 = combine_weights(prop, profile, group, mask);
  CHECK(w2.w(0, 0) == doctest::Approx(0.05 / 0.95).epsilon(1e-12));
  CHECK(w2.w(0, 0) > kDefaultWeightFloor);
}

TEST_CASE("always-treated weights ignore the elapsed profile") {
  const int n = 3, t = 4;
  PropensityFit prop;
  prop.w_hat = Matrix::Constant(n, t, 0.7);
  ElapsedTimeProfile a;
  a.t0 = 0;
  a.z = Vector::LinSpaced(t, 0.1, 0.9);
  ElapsedTimeProfile b;
  b.t0 = 0;
  b.z = Vector::Constant(t, 0.4);
  const std::vector<Group> group{Group::always_treated, Group::always_treated,
                                 Group::later_treated};
  const ObservationMask mask = mask_from_bool(BoolMatrix::Constant(n, t, true));
  const WeightMatrix wa = combine_weights(prop, a, group, mask);
  const WeightMatrix wb = combine_weights(prop, b, group, mask);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < t; ++j) CHECK(wa.w(i, j) == wb.w(i, j));
  CHECK(wa.w(2, 1) != wb.w(2, 1));
}

TEST_CASE("later-treated weights fall as z or the propensity rises") {
  PropensityFit prop;
  prop.w_hat = Matrix::Constant(1, 3, 0.5);
  ElapsedTimeProfile profile;
  profile.t0 = 0;
  profile.z = Vector(3);
  profile.z << 0.2, 0.5, 0.8;
  const std::vector<Group> group{Group::later_treated};
  const ObservationMask mask = mask_from_bool(BoolMatrix::Constant(1, 3, true));
  const WeightMatrix w = combine_weights(prop, profile, group, mask);
  CHECK(w.w(0, 0) > w.w(0, 1));
  CHECK(w.w(0, 1) > w.w(0, 2));

  PropensityFit hi;
  hi.w_hat = Matrix::Constant(1, 3, 0.9);
  const WeightMatrix wh = combine_weights(hi, profile, group, mask);
  CHECK(wh.w(0, 1) < w.w(0, 1));
}

TEST_CASE("weights are clamped into the configured band") {
  PropensityFit prop;
  prop.w_hat = Matrix::Constant(1, 2, 0.05);  // raw weight 19, z makes it larger
  ElapsedTimeProfile profile;
  profile.t0 = 0;
  profile.z = Vector::Constant(2, 0.01);
  const std::vector<Group> group{Group::later_treated};
  const ObservationMask mask = mask_from_bool(BoolMatrix::Constant(1, 2, true));
  const WeightMatrix w = combine_weights(prop, profile, group, mask, 1e-3, 1e3);
  CHECK(w.w(0, 0) == 1e3);
  CHECK(w.n_cap_clamped == 2);

  PropensityFit near_one;
  near_one.w_hat = Matrix::Constant(1, 2, 0.95);
  ElapsedTimeProfile z1;
  z1.t0 = 0;
  z1.z = Vector::Constant(2, 1.0 - 1e-9);
  const WeightMatrix wf = combine_weights(near_one, z1, group, mask, 0.1, 1e3);
  CHECK(wf.w(0, 0) == 0.1);
  CHECK(wf.n_floor_clamped == 2);
}

TEST_CASE("per-unit profiles apply only to their later-treated rows") {
  const int n = 2, t = 3;
  PropensityFit prop;
  prop.w_hat = Matrix::Constant(n, t, 0.5);
  std::vector<std::optional<ElapsedTimeProfile>> profiles(n);
  ElapsedTimeProfile p;
  p.t0 = 1;
  p.z = Vector::Constant(t, 0.5);
  profiles[1] = p;
  const std::vector<Group> group{Group::later_treated, Group::later_treated};
  const ObservationMask mask = mask_from_bool(BoolMatrix::Constant(n, t, true));
  const WeightMatrix w = combine_weights(prop, profiles, group, mask);
  CHECK(w.w(0, 0) == doctest::Approx(1.0));  // no profile: z = 1
  CHECK(w.w(1, 0) == doctest::Approx(3.0));
}

TEST_CASE("covariates blend by treatment status") {
  Matrix x(2, 2), x_hat(2, 2);
  x << 1, 2, 3, 4;
  x_hat << 10, 20, 30, 40;
  IntMatrix treated(2, 2);
  treated << 1, 0, 0, 1;
  const Matrix blended = blend_covariates(x, x_hat, treated);
  CHECK(blended(0, 0) == 1.0);
  CHECK(blended(0, 1) == 20.0);
  CHECK(blended(1, 0) == 30.0);
  CHECK(blended(1, 1) == 4.0);
}

TEST_CASE("unit weights are all ones") {
  const Matrix w = unit_weights(3, 4);
  CHECK(w.rows() == 3);
  CHECK((w.array() == 1.0).all());
}
