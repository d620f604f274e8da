#include <atomic>
#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "retropanel/baselines.hpp"
#include "retropanel/errors.hpp"
#include "retropanel/inference.hpp"
#include "retropanel/panel.hpp"
#include "retropanel/pipeline.hpp"

using namespace retropanel;

namespace {

PanelDataset panel_from(const Matrix& y, const IntMatrix& d) {
  const int n = static_cast<int>(y.rows());
  const int t = static_cast<int>(y.cols());
  std::vector<std::string> units, periods;
  for (int i = 0; i < n; ++i) units.push_back("u" + std::to_string(10 + i));
  for (int j = 0; j < t; ++j) periods.push_back("p" + std::to_string(10 + j));
  return make_panel(units, periods, y, d);
}

IntMatrix treatment_pattern(int n_at, int n_lt, int t, int t0) {
  IntMatrix d(n_at + n_lt, t);
  for (int i = 0; i < n_at + n_lt; ++i)
    for (int j = 0; j < t; ++j) d(i, j) = (i < n_at || j >= t0) ? 1 : 0;
  return d;
}

// Additive outcomes with a constant treatment effect. The two-way model is
// exact on this data, so the DID pipeline recovers tau on any resample.
PanelDataset additive_panel(int n_at, int n_lt, int t, int t0, double tau,
                            double sigma = 0.0, std::uint64_t seed = 0) {
  const int n = n_at + n_lt;
  IntMatrix d = treatment_pattern(n_at, n_lt, t, t0);
  Matrix y(n, t);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < t; ++j) {
      y(i, j) = 1.0 + 0.5 * i - 0.2 * j + tau * d(i, j);
      if (sigma > 0.0) y(i, j) += noise(rng);
    }
  return panel_from(y, d);
}

EffectPipeline did_pipeline() {
  return [](const PanelDataset& ds) {
    const DidFit fit = fit_did(ds);
    const ObservationMask mask = build_retrospective_mask(ds);
    Matrix y_hat1 = ds.outcome;
    for (int i = 0; i < ds.n_units(); ++i)
      for (int j = 0; j < ds.n_periods(); ++j)
        if (!mask.observed(i, j)) y_hat1(i, j) += fit.tau;
    return estimate_effects(ds.outcome, y_hat1, mask);
  };
}

}  // namespace

TEST_CASE("effects are zero when the counterfactual equals the outcome") {
  PanelDataset ds = additive_panel(4, 3, 8, 3, 0.0);
  const ObservationMask mask = build_retrospective_mask(ds);
  EffectSeries series = estimate_effects(ds.outcome, ds.outcome, mask);
  REQUIRE(series.pre_periods == std::vector<int>{0, 1, 2});
  CHECK(series.tau_t.cwiseAbs().maxCoeff() == 0.0);
  CHECK(series.tau == 0.0);
}

TEST_CASE("a constant gap on missing cells is the pooled effect") {
  PanelDataset ds = additive_panel(5, 4, 10, 4, 0.0);
  const ObservationMask mask = build_retrospective_mask(ds);
  Matrix y_hat1 = ds.outcome;
  for (int i = 0; i < ds.n_units(); ++i)
    for (int j = 0; j < ds.n_periods(); ++j)
      if (!mask.observed(i, j)) y_hat1(i, j) += 0.008;
  EffectSeries series = estimate_effects(ds.outcome, y_hat1, mask);
  CHECK(series.tau == doctest::Approx(0.008).epsilon(1e-12));
  for (int k = 0; k < series.tau_t.size(); ++k)
    CHECK(series.tau_t(k) == doctest::Approx(0.008).epsilon(1e-12));
}

TEST_CASE("per-period effect averages the unit gaps") {
  // Two later-treated units, one shared pre-period, gaps 0.01 and 0.03.
  Matrix y(3, 2);
  y << 1, 1, 2, 2, 3, 3;
  IntMatrix d = treatment_pattern(1, 2, 2, 1);
  PanelDataset ds = panel_from(y, d);
  const ObservationMask mask = build_retrospective_mask(ds);
  Matrix y_hat1 = y;
  y_hat1(1, 0) += 0.01;
  y_hat1(2, 0) += 0.03;
  EffectSeries series = estimate_effects(y, y_hat1, mask);
  REQUIRE(series.pre_periods == std::vector<int>{0});
  CHECK(series.tau_t(0) == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(series.tau == doctest::Approx(0.02).epsilon(1e-12));
}

TEST_CASE("effects are linear in the counterfactual") {
  PanelDataset ds = additive_panel(4, 3, 9, 4, 0.0, 0.5, 21);
  const ObservationMask mask = build_retrospective_mask(ds);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> noise(0.0, 1.0);
  Matrix y_hat1 = ds.outcome;
  for (int i = 0; i < ds.n_units(); ++i)
    for (int j = 0; j < ds.n_periods(); ++j)
      if (!mask.observed(i, j)) y_hat1(i, j) += noise(rng);
  const double c = 0.37;
  Matrix shifted = y_hat1;
  for (int i = 0; i < ds.n_units(); ++i)
    for (int j = 0; j < ds.n_periods(); ++j)
      if (!mask.observed(i, j)) shifted(i, j) += c;

  EffectSeries base = estimate_effects(ds.outcome, y_hat1, mask);
  EffectSeries moved = estimate_effects(ds.outcome, shifted, mask);
  CHECK(moved.tau == doctest::Approx(base.tau + c).epsilon(1e-12));
  for (int k = 0; k < base.tau_t.size(); ++k)
    CHECK(moved.tau_t(k) == doctest::Approx(base.tau_t(k) + c).epsilon(1e-12));
  CHECK(base.tau == doctest::Approx(base.tau_t.mean()).epsilon(1e-12));
}

TEST_CASE("effects require missing cells and a finite counterfactual") {
  PanelDataset all = additive_panel(4, 0, 6, 3, 0.0);
  const ObservationMask full = build_retrospective_mask(all);
  CHECK_THROWS_AS(estimate_effects(all.outcome, all.outcome, full), Error);

  PanelDataset ds = additive_panel(3, 2, 6, 3, 0.0);
  const ObservationMask mask = build_retrospective_mask(ds);
  Matrix bad = ds.outcome;
  bad(3, 0) = std::nan("");
  CHECK_THROWS_AS(estimate_effects(ds.outcome, bad, mask), Error);
}

TEST_CASE("p-value counting matches the closed form") {
  std::vector<double> reps(999);
  for (std::size_t k = 0; k < reps.size(); ++k)
    reps[k] = (k < 10) ? 5.0 : 0.1;  // 10 exceedances of |1.0|
  CHECK(placebo_pvalue(1.0, reps) == doctest::Approx(0.011).epsilon(1e-12));

  std::vector<double> none(999, 0.1);
  CHECK(placebo_pvalue(1.0, none) == doctest::Approx(0.001).epsilon(1e-12));

  std::vector<double> all(99, 5.0);
  CHECK(placebo_pvalue(1.0, all) == 1.0);
}

TEST_CASE("p-value agrees with a counting oracle on random draws") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t n = 1 + rng() % 400;
    std::vector<double> reps(n);
    for (double& v : reps) v = noise(rng);
    const double obs = noise(rng);
    const double p = placebo_pvalue(obs, reps);
    CHECK(p == oracle::count_pvalue(obs, reps));
    CHECK(p >= 1.0 / (static_cast<double>(n) + 1.0));
    CHECK(p <= 1.0);
  }
  CHECK_THROWS_AS(placebo_pvalue(0.0, std::vector<double>{}), Error);
}

TEST_CASE("default block length is the cube root rounded up") {
  CHECK(default_block_length(1) == 1);
  CHECK(default_block_length(8) == 2);
  CHECK(default_block_length(27) == 3);
  CHECK(default_block_length(28) == 4);
  CHECK(default_block_length(60) == 4);
}

TEST_CASE("exact pipeline collapses the interval to the point") {
  PanelDataset ds = additive_panel(4, 3, 10, 4, 0.3);
  BootstrapOptions opts;
  opts.n_boot = 49;
  opts.seed = 5;
  EffectEstimate est = block_bootstrap_ci(ds, did_pipeline(), opts);
  CHECK(est.point.tau == doctest::Approx(0.3).epsilon(1e-8));
  CHECK(est.n_boot_used == 49);
  CHECK(est.ci_upper - est.ci_lower < 1e-8);
  for (int k = 0; k < est.ci_lower_t.size(); ++k)
    CHECK(est.ci_upper_t(k) - est.ci_lower_t(k) < 1e-8);
  // No replicate strays from the point, so the count hits its floor.
  CHECK(est.p_value.value() == doctest::Approx(1.0 / 50.0).epsilon(1e-12));
}

TEST_CASE("full-length blocks rotate the panel and a rotation-invariant stub collapses") {
  const int n = 4, t = 9;
  Matrix y = Matrix::Random(n, t);
  IntMatrix d = IntMatrix::Constant(n, t, 1);
  PanelDataset ds = panel_from(y, d);

  EffectPipeline stub = [](const PanelDataset& p) {
    EffectSeries s;
    s.pre_periods = {0};
    s.tau_t = Vector::Constant(1, p.outcome.sum());
    s.tau = s.tau_t(0);
    return s;
  };
  BootstrapOptions opts;
  opts.n_boot = 40;
  opts.block_length = t;
  opts.seed = 11;
  EffectEstimate est = block_bootstrap_ci(ds, stub, opts);
  CHECK(est.block_length == t);
  CHECK(est.ci_lower == doctest::Approx(est.point.tau).epsilon(1e-10));
  CHECK(est.ci_upper == doctest::Approx(est.point.tau).epsilon(1e-10));
  for (double rep : est.replicate_tau)
    CHECK(rep == doctest::Approx(est.point.tau).epsilon(1e-10));
}

TEST_CASE("bootstrap replicates do not depend on the thread count") {
  PanelDataset ds = additive_panel(4, 3, 12, 5, 0.1, 0.3, 33);
  BootstrapOptions a;
  a.n_boot = 24;
  a.seed = 7;
  a.threads = 1;
  BootstrapOptions b = a;
  b.threads = 4;
  EffectEstimate one = block_bootstrap_ci(ds, did_pipeline(), a);
  EffectEstimate four = block_bootstrap_ci(ds, did_pipeline(), b);
  REQUIRE(one.replicate_tau.size() == four.replicate_tau.size());
  for (std::size_t r = 0; r < one.replicate_tau.size(); ++r)
    CHECK(one.replicate_tau[r] == four.replicate_tau[r]);
  CHECK(one.ci_lower == four.ci_lower);
  CHECK(one.ci_upper == four.ci_upper);
  CHECK(one.p_value.value() == four.p_value.value());
}

TEST_CASE("failed replicates are skipped until the failure budget runs out") {
  PanelDataset ds = additive_panel(3, 2, 8, 3, 0.0);
  // Sequential execution makes the call counter a replicate counter; the
  // first call is the point estimate and must succeed.
  auto failing_every = [](int period) {
    auto calls = std::make_shared<std::atomic<int>>(0);
    return EffectPipeline([calls, period](const PanelDataset&) {
      const int c = calls->fetch_add(1);
      if (c > 0 && c % period == 0)
        raise(Errc::pipeline_failure, "synthetic replicate failure");
      EffectSeries s;
      s.pre_periods = {0};
      s.tau_t = Vector::Constant(1, 1.0);
      s.tau = 1.0;
      return s;
    });
  };

  BootstrapOptions opts;
  opts.n_boot = 20;
  opts.seed = 2;
  opts.threads = 1;

  SUBCASE("five percent failures pass through") {
    EffectEstimate est = block_bootstrap_ci(ds, failing_every(11), opts);
    CHECK(est.n_boot_requested == 20);
    CHECK(est.n_boot_used == 19);
    CHECK(est.replicate_tau.size() == 19);
  }
  SUBCASE("a quarter failing is an error") {
    CHECK_THROWS_AS(block_bootstrap_ci(ds, failing_every(4), opts), Error);
  }
}

TEST_CASE("placebo suite emits one row per ratio and mode") {
  PanelDataset window = additive_panel(6, 0, 10, 4, 0.0, 0.4, 13);
  const std::vector<double> ratios{0.5, 0.8, 0.97};
  const std::vector<PlaceboMode> modes{PlaceboMode::simultaneous, PlaceboMode::staggered};
  PipelineFactory factory = [](const PanelDataset&) { return did_pipeline(); };
  BootstrapOptions boot;
  boot.n_boot = 19;
  std::vector<PlaceboCell> cells =
      run_placebo_suite(window, {3, 4, 5}, ratios, modes, factory, boot, 99);
  REQUIRE(cells.size() == 6);
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const PlaceboCell& cell = cells[k];
    CHECK(cell.mode == modes[k / 3]);
    CHECK(cell.ratio == ratios[k % 3]);
    CHECK(cell.placebo_t0 == placebo_t0_from_ratio(cell.ratio, 10));
    CHECK(cell.p_value > 0.0);
    CHECK(cell.p_value <= 1.0);
    CHECK(cell.n_boot_used > 0);
  }
}

TEST_CASE("placebo suite flags a real shift after the switch date") {
  // A jump of fifty noise standard deviations after the placebo date: the
  // pipeline should call it significant at the resolution n_boot allows.
  const int n = 6, t = 12, t0 = 6;
  std::mt19937_64 rng(41);
  std::normal_distribution<double> noise(0.0, 0.01);
  Matrix y(n, t);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < t; ++j) {
      y(i, j) = 1.0 + 0.3 * i - 0.1 * j + noise(rng);
      if (i >= 3 && j >= t0) y(i, j) += 0.5;
    }
  PanelDataset window = panel_from(y, IntMatrix::Constant(n, t, 1));
  const std::vector<double> ratios{0.5};
  const std::vector<PlaceboMode> modes{PlaceboMode::simultaneous};
  PipelineFactory factory = [](const PanelDataset&) { return did_pipeline(); };
  BootstrapOptions boot;
  boot.n_boot = 199;
  std::vector<PlaceboCell> cells =
      run_placebo_suite(window, {3, 4, 5}, ratios, modes, factory, boot, 7);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].placebo_t0 == t0);
  CHECK(std::abs(cells[0].tau) > 0.4);
  CHECK(cells[0].p_value <= 0.01);
}

TEST_CASE("rmse comparison on additive data: both estimators near zero, se omitted") {
  PanelDataset window = additive_panel(8, 0, 10, 4, 0.0);
  std::vector<NamedImputer> estimators;
  estimators.push_back(make_did_imputer());
  PipelineConfig config;
  config.propensity_weights = false;
  config.elapsed_time_weights = false;
  estimators.push_back(make_mc_imputer(config));
  const std::vector<double> ratios{0.5};
  const std::vector<PlaceboMode> modes{PlaceboMode::simultaneous};

  std::vector<RmseCell> cells = rmse_comparison(window, estimators, ratios, modes, 1, 3);
  REQUIRE(cells.size() == 2);
  for (const RmseCell& cell : cells) {
    CHECK(cell.n_runs == 1);
    CHECK(cell.se_rmse == 0.0);
    CHECK(cell.mean_rmse < 1e-3);
  }
  CHECK(cells[0].estimator != cells[1].estimator);

  std::vector<RmseCell> again = rmse_comparison(window, estimators, ratios, modes, 1, 3);
  for (std::size_t k = 0; k < cells.size(); ++k)
    CHECK(cells[k].mean_rmse == again[k].mean_rmse);
}

TEST_CASE("rmse comparison rejects degenerate setups") {
  PanelDataset window = additive_panel(8, 0, 10, 4, 0.0);
  std::vector<NamedImputer> estimators{make_did_imputer()};
  const std::vector<double> ratios{0.5};
  const std::vector<PlaceboMode> modes{PlaceboMode::simultaneous};
  CHECK_THROWS_AS(rmse_comparison(window, {}, ratios, modes, 1, 3), Error);
  CHECK_THROWS_AS(rmse_comparison(window, estimators, ratios, modes, 0, 3), Error);
  PanelDataset tiny = additive_panel(1, 0, 6, 3, 0.0);
  CHECK_THROWS_AS(rmse_comparison(tiny, estimators, ratios, modes, 1, 3), Error);
}
