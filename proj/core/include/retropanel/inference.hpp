#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "retropanel/panel.hpp"
#include "retropanel/types.hpp"

namespace retropanel {

// Average treatment effect on the later-treated units' pre-treatment
// cells: per period, the mean over units missing in that period of
// (imputed treated outcome - observed outcome); pooled, the unweighted
// mean of the per-period effects.
struct EffectSeries {
  std::vector<int> pre_periods;  // period indices with at least one missing cell
  Vector tau_t;                  // aligned with pre_periods
  double tau = 0.0;              // mean of tau_t
};

EffectSeries estimate_effects(const Matrix& y, const Matrix& y_hat1,
                              const ObservationMask& mask);

// A full estimation pipeline as a value: dataset in, effect series out.
// The bootstrap re-runs it on every resample, so everything the pipeline
// re-estimates (weights included) is re-estimated per replicate.
using EffectPipeline = std::function<EffectSeries(const PanelDataset&)>;

struct BootstrapOptions {
  int n_boot = 999;
  int block_length = 0;  // 0 -> ceil(T^(1/3))
  std::uint64_t seed = 0;
  int threads = 1;
  double max_failure_fraction = 0.10;
  double level = 0.95;
};

struct EffectEstimate {
  EffectSeries point;       // from the original panel
  Vector ci_lower_t;        // per pre-period percentile bounds
  Vector ci_upper_t;
  double ci_lower = 0.0;    // pooled bounds
  double ci_upper = 0.0;
  std::optional<double> p_value;  // counting rule on recentered replicates
  int n_boot_requested = 0;
  int n_boot_used = 0;      // replicates that completed
  std::uint64_t seed = 0;
  int block_length = 0;
  std::vector<double> replicate_tau;  // pooled estimate per completed replicate
};

// Circular block bootstrap over the time dimension. Columns are resampled
// in blocks of consecutive periods, drawn within maximal runs of periods
// that share the same treatment column, so every resampled column lands in
// a slot with its own treatment status and the panel stays a valid
// retrospective panel. Outcome and covariate columns move together;
// treatment, labels and groups stay put. Replicates draw independent
// streams from (seed, replicate), so results are identical for any thread
// count. Replicates whose pipeline throws are skipped; more than
// max_failure_fraction of them failing is an error.
EffectEstimate block_bootstrap_ci(const PanelDataset& ds, const EffectPipeline& pipeline,
                                  const BootstrapOptions& opts = {});

int default_block_length(int n_periods);

// (1 + #{|replicate| > |observed|}) / (#replicates + 1)
double placebo_pvalue(double tau_observed, std::span<const double> replicate_taus);

// Builds the estimation closure for one concrete dataset, giving the
// caller a chance to pin data-dependent choices (cross-validated
// penalties) before the bootstrap replays the pipeline on resamples.
using PipelineFactory = std::function<EffectPipeline(const PanelDataset&)>;

// One placebo experiment cell: pretend treatment switched on at a ratio of
// the way through an all-treated window, re-estimate, and ask how often
// the bootstrap beats the point estimate. A correctly sized pipeline
// rarely rejects.
struct PlaceboCell {
  PlaceboMode mode = PlaceboMode::simultaneous;
  double ratio = 0.0;
  int placebo_t0 = 0;
  double tau = 0.0;
  double p_value = 1.0;
  int n_boot_used = 0;
};

std::vector<PlaceboCell> run_placebo_suite(const PanelDataset& all_treated,
                                           const std::vector<int>& placebo_units,
                                           std::span<const double> ratios,
                                           std::span<const PlaceboMode> modes,
                                           const PipelineFactory& factory,
                                           const BootstrapOptions& boot,
                                           std::uint64_t seed);

// Imputation accuracy comparison on an all-treated window: per run, half
// the units are declared placebo-treated, their pre-switch cells are
// masked, each estimator imputes them, and the root mean squared error
// against the held-out truth is recorded.
using Imputer = std::function<Matrix(const PanelDataset&, const ObservationMask&)>;

struct NamedImputer {
  std::string name;
  Imputer impute;
};

struct RmseCell {
  std::string estimator;
  double ratio = 0.0;
  PlaceboMode mode = PlaceboMode::simultaneous;
  double mean_rmse = 0.0;
  double se_rmse = 0.0;  // standard error over runs; 0 when n_runs == 1
  int n_runs = 0;
};

std::vector<RmseCell> rmse_comparison(const PanelDataset& all_treated,
                                      const std::vector<NamedImputer>& estimators,
                                      std::span<const double> ratios,
                                      std::span<const PlaceboMode> modes, int n_runs,
                                      std::uint64_t seed, int threads = 1);

}  // namespace retropanel
