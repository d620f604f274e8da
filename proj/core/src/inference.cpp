#include "retropanel/inference.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>

#include "retropanel/errors.hpp"
#include "retropanel/util.hpp"

namespace retropanel {

namespace {

// Interpolated order statistic (the common "type 7" definition).
double quantile(std::vector<double> values, double p) {
  if (values.empty()) raise(Errc::pipeline_failure, "no values to take a quantile of");
  std::sort(values.begin(), values.end());
  const double h = p * (static_cast<double>(values.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

// Maximal runs of consecutive periods sharing the same treatment column.
// Treatment is absorbing, so these runs are the segments between distinct
// switch dates and a block drawn inside one never changes any cell's
// treatment status.
std::vector<std::pair<int, int>> regime_segments(const PanelDataset& ds) {
  std::vector<std::pair<int, int>> segments;
  const int t = ds.n_periods();
  int start = 0;
  for (int j = 1; j < t; ++j) {
    if ((ds.treated.col(j).array() != ds.treated.col(j - 1).array()).any()) {
      segments.emplace_back(start, j);
      start = j;
    }
  }
  segments.emplace_back(start, t);
  return segments;
}

// Circular moving-block draw of `length` column indices out of
// [begin, end), concatenating wrap-around blocks of block_length.
void draw_segment(std::vector<int>& slots, int begin, int end, int block_length,
                  std::mt19937_64& rng) {
  const int len = end - begin;
  const int b = std::min(block_length, len);
  std::uniform_int_distribution<int> start_of(0, len - 1);
  int filled = 0;
  while (filled < len) {
    const int s = start_of(rng);
    for (int k = 0; k < b && filled < len; ++k, ++filled)
      slots[static_cast<std::size_t>(begin + filled)] = begin + (s + k) % len;
  }
}

PanelDataset resample_columns(const PanelDataset& ds, const std::vector<int>& source) {
  Matrix outcome(ds.n_units(), ds.n_periods());
  std::optional<Matrix> covariate;
  if (ds.covariate) covariate = Matrix(ds.n_units(), ds.n_periods());
  for (int j = 0; j < ds.n_periods(); ++j) {
    outcome.col(j) = ds.outcome.col(source[static_cast<std::size_t>(j)]);
    if (covariate) covariate->col(j) = ds.covariate->col(source[static_cast<std::size_t>(j)]);
  }
  return make_panel(ds.units, ds.periods, std::move(outcome), ds.treated, std::move(covariate));
}

}  // namespace

EffectSeries estimate_effects(const Matrix& y, const Matrix& y_hat1,
                              const ObservationMask& mask) {
  if (y.rows() != y_hat1.rows() || y.cols() != y_hat1.cols() || mask.rows() != y.rows() ||
      mask.cols() != y.cols())
    raise(Errc::dimension_mismatch, "effect inputs disagree on shape");
  if (mask.n_missing == 0)
    raise(Errc::missing_counterfactual, "no missing cells: nothing to average an effect over");

  EffectSeries series;
  std::vector<double> taus;
  for (int j = 0; j < y.cols(); ++j) {
    double acc = 0.0;
    int count = 0;
    for (int i = 0; i < y.rows(); ++i) {
      if (mask.observed(i, j)) continue;
      if (!std::isfinite(y_hat1(i, j)))
        raise(Errc::missing_counterfactual, "imputed outcome is not finite at a missing cell");
      acc += y_hat1(i, j) - y(i, j);
      ++count;
    }
    if (count == 0) continue;
    series.pre_periods.push_back(j);
    taus.push_back(acc / count);
  }
  series.tau_t = Eigen::Map<Vector>(taus.data(), static_cast<Eigen::Index>(taus.size()));
  series.tau = series.tau_t.mean();
  return series;
}

int default_block_length(int n_periods) {
  // The nudge keeps perfect cubes exact when cbrt lands a hair above.
  return static_cast<int>(std::ceil(std::cbrt(static_cast<double>(n_periods)) - 1e-9));
}

double placebo_pvalue(double tau_observed, std::span<const double> replicate_taus) {
  if (replicate_taus.empty()) raise(Errc::pipeline_failure, "no replicates for a p-value");
  const double ref = std::abs(tau_observed);
  long exceed = 0;
  for (double tau : replicate_taus)
    if (std::abs(tau) > ref) ++exceed;
  return (1.0 + static_cast<double>(exceed)) /
         (static_cast<double>(replicate_taus.size()) + 1.0);
}

EffectEstimate block_bootstrap_ci(const PanelDataset& ds, const EffectPipeline& pipeline,
                                  const BootstrapOptions& opts) {
  if (opts.n_boot < 1) raise(Errc::bad_config, "n_boot must be positive");
  if (!(opts.level > 0.0) || !(opts.level < 1.0))
    raise(Errc::bad_config, "confidence level must lie in (0, 1)");
  const int t = ds.n_periods();
  const int block = opts.block_length > 0 ? opts.block_length : default_block_length(t);
  if (block < 1) raise(Errc::bad_config, "block length must be positive");

  EffectEstimate estimate;
  estimate.point = pipeline(ds);
  estimate.n_boot_requested = opts.n_boot;
  estimate.seed = opts.seed;
  estimate.block_length = block;

  const std::vector<std::pair<int, int>> segments = regime_segments(ds);
  const std::size_t n_pre = estimate.point.pre_periods.size();

  std::vector<std::vector<double>> replicate_tau_t(static_cast<std::size_t>(opts.n_boot));
  std::vector<double> replicate_tau(static_cast<std::size_t>(opts.n_boot));
  std::vector<char> ok(static_cast<std::size_t>(opts.n_boot), 0);

  parallel_for(opts.n_boot, opts.threads, [&](int r) {
    std::mt19937_64 rng = make_rng(opts.seed, rng_stream::bootstrap,
                                   static_cast<std::uint64_t>(r));
    std::vector<int> source(static_cast<std::size_t>(t));
    for (const auto& [begin, end] : segments) draw_segment(source, begin, end, block, rng);
    try {
      const PanelDataset resampled = resample_columns(ds, source);
      const EffectSeries series = pipeline(resampled);
      if (series.pre_periods != estimate.point.pre_periods)
        raise(Errc::pipeline_failure, "replicate changed the set of pre-periods");
      auto& row = replicate_tau_t[static_cast<std::size_t>(r)];
      row.assign(series.tau_t.data(), series.tau_t.data() + series.tau_t.size());
      replicate_tau[static_cast<std::size_t>(r)] = series.tau;
      ok[static_cast<std::size_t>(r)] = 1;
    } catch (const Error& e) {
      log_warn("bootstrap replicate " + std::to_string(r) + " failed: " + e.what());
    }
  });

  std::vector<double> pooled;
  pooled.reserve(static_cast<std::size_t>(opts.n_boot));
  std::vector<std::vector<double>> per_period(n_pre);
  for (int r = 0; r < opts.n_boot; ++r) {
    if (!ok[static_cast<std::size_t>(r)]) continue;
    pooled.push_back(replicate_tau[static_cast<std::size_t>(r)]);
    for (std::size_t k = 0; k < n_pre; ++k)
      per_period[k].push_back(replicate_tau_t[static_cast<std::size_t>(r)][k]);
  }
  estimate.n_boot_used = static_cast<int>(pooled.size());
  const int failed = opts.n_boot - estimate.n_boot_used;
  if (failed > opts.max_failure_fraction * opts.n_boot)
    raise(Errc::pipeline_failure,
          std::to_string(failed) + " of " + std::to_string(opts.n_boot) +
              " bootstrap replicates failed");

  const double alpha = 1.0 - opts.level;
  estimate.ci_lower_t.resize(static_cast<Eigen::Index>(n_pre));
  estimate.ci_upper_t.resize(static_cast<Eigen::Index>(n_pre));
  for (std::size_t k = 0; k < n_pre; ++k) {
    estimate.ci_lower_t(static_cast<Eigen::Index>(k)) = quantile(per_period[k], alpha / 2.0);
    estimate.ci_upper_t(static_cast<Eigen::Index>(k)) = quantile(per_period[k], 1.0 - alpha / 2.0);
  }
  // The pooled interval resamples each replicate's effect trajectory with
  // the period identities discarded, so cross-period dispersion enters the
  // bound for the pooled effect.
  std::vector<double> pooled_draws;
  pooled_draws.reserve(pooled.size());
  if (n_pre > 0) {
    for (int r = 0; r < opts.n_boot; ++r) {
      if (!ok[static_cast<std::size_t>(r)]) continue;
      std::mt19937_64 rng = make_rng(opts.seed, rng_stream::pooled,
                                     static_cast<std::uint64_t>(r));
      std::uniform_int_distribution<std::size_t> pick(0, n_pre - 1);
      double acc = 0.0;
      for (std::size_t k = 0; k < n_pre; ++k)
        acc += replicate_tau_t[static_cast<std::size_t>(r)][pick(rng)];
      pooled_draws.push_back(acc / static_cast<double>(n_pre));
    }
  }
  estimate.ci_lower = quantile(pooled_draws, alpha / 2.0);
  estimate.ci_upper = quantile(pooled_draws, 1.0 - alpha / 2.0);

  // Replicates scatter around the point estimate; recentering them turns
  // the bootstrap spread into draws from the no-effect world, which is
  // what the counting formula expects.
  std::vector<double> centered(pooled.size());
  for (std::size_t r = 0; r < pooled.size(); ++r) centered[r] = pooled[r] - estimate.point.tau;
  estimate.p_value = placebo_pvalue(estimate.point.tau, centered);
  estimate.replicate_tau = std::move(pooled);

  if (estimate.point.tau < estimate.ci_lower || estimate.point.tau > estimate.ci_upper)
    log_warn("point estimate lies outside its own bootstrap interval");
  return estimate;
}

std::vector<PlaceboCell> run_placebo_suite(const PanelDataset& all_treated,
                                           const std::vector<int>& placebo_units,
                                           std::span<const double> ratios,
                                           std::span<const PlaceboMode> modes,
                                           const PipelineFactory& factory,
                                           const BootstrapOptions& boot, std::uint64_t seed) {
  if (ratios.empty() || modes.empty())
    raise(Errc::bad_config, "placebo suite needs at least one ratio and one mode");
  std::vector<PlaceboCell> cells;
  const int t = all_treated.n_periods();
  for (std::size_t m = 0; m < modes.size(); ++m) {
    for (std::size_t k = 0; k < ratios.size(); ++k) {
      PlaceboCell cell;
      cell.mode = modes[m];
      cell.ratio = ratios[k];
      cell.placebo_t0 = placebo_t0_from_ratio(ratios[k], t);
      std::mt19937_64 mix = make_rng(seed, rng_stream::placebo,
                                     static_cast<std::uint64_t>(m * 1000 + k));
      const std::uint64_t cell_seed = mix();
      const PanelDataset placebo = build_placebo_dataset(all_treated, placebo_units,
                                                         cell.placebo_t0, modes[m], cell_seed);
      BootstrapOptions cell_boot = boot;
      cell_boot.seed = cell_seed;
      const EffectEstimate estimate = block_bootstrap_ci(placebo, factory(placebo), cell_boot);
      cell.tau = estimate.point.tau;
      cell.p_value = estimate.p_value.value();
      cell.n_boot_used = estimate.n_boot_used;
      cells.push_back(cell);
    }
  }
  return cells;
}

std::vector<RmseCell> rmse_comparison(const PanelDataset& all_treated,
                                      const std::vector<NamedImputer>& estimators,
                                      std::span<const double> ratios,
                                      std::span<const PlaceboMode> modes, int n_runs,
                                      std::uint64_t seed, int threads) {
  if (estimators.empty()) raise(Errc::bad_config, "no estimators to compare");
  if (ratios.empty() || modes.empty())
    raise(Errc::bad_config, "comparison needs at least one ratio and one mode");
  if (n_runs < 1) raise(Errc::bad_config, "n_runs must be positive");
  const int n = all_treated.n_units();
  const int t = all_treated.n_periods();
  const int n_placebo = n / 2;
  if (n_placebo < 1 || n_placebo >= n)
    raise(Errc::bad_config, "panel too small to split into placebo and control halves");

  // rmse[run][mode][ratio][estimator]
  const std::size_t n_cells = modes.size() * ratios.size() * estimators.size();
  std::vector<std::vector<double>> rmse(static_cast<std::size_t>(n_runs),
                                        std::vector<double>(n_cells, 0.0));

  parallel_for(n_runs, threads, [&](int run) {
    std::mt19937_64 rng = make_rng(seed, rng_stream::comparison,
                                   static_cast<std::uint64_t>(run));
    std::vector<int> all_units(static_cast<std::size_t>(n));
    std::iota(all_units.begin(), all_units.end(), 0);
    std::vector<int> placebo_units;
    placebo_units.reserve(static_cast<std::size_t>(n_placebo));
    std::sample(all_units.begin(), all_units.end(), std::back_inserter(placebo_units),
                n_placebo, rng);
    std::size_t cell = 0;
    for (std::size_t m = 0; m < modes.size(); ++m) {
      for (std::size_t k = 0; k < ratios.size(); ++k) {
        const int t0 = placebo_t0_from_ratio(ratios[k], t);
        const std::uint64_t cell_seed = rng();
        const PanelDataset placebo =
            build_placebo_dataset(all_treated, placebo_units, t0, modes[m], cell_seed);
        const ObservationMask mask = build_retrospective_mask(placebo);
        for (const NamedImputer& estimator : estimators) {
          const Matrix pred = estimator.impute(placebo, mask);
          double sq = 0.0;
          int count = 0;
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < t; ++j)
              if (!mask.observed(i, j)) {
                const double e = pred(i, j) - all_treated.outcome(i, j);
                sq += e * e;
                ++count;
              }
          rmse[static_cast<std::size_t>(run)][cell++] = std::sqrt(sq / count);
        }
      }
    }
  });

  std::vector<RmseCell> cells;
  std::size_t cell = 0;
  for (std::size_t m = 0; m < modes.size(); ++m) {
    for (std::size_t k = 0; k < ratios.size(); ++k) {
      for (const NamedImputer& estimator : estimators) {
        RmseCell out;
        out.estimator = estimator.name;
        out.mode = modes[m];
        out.ratio = ratios[k];
        out.n_runs = n_runs;
        double mean = 0.0;
        for (int run = 0; run < n_runs; ++run)
          mean += rmse[static_cast<std::size_t>(run)][cell];
        mean /= n_runs;
        double var = 0.0;
        for (int run = 0; run < n_runs; ++run) {
          const double d = rmse[static_cast<std::size_t>(run)][cell] - mean;
          var += d * d;
        }
        out.mean_rmse = mean;
        out.se_rmse = n_runs > 1 ? std::sqrt(var / (n_runs - 1)) / std::sqrt(n_runs) : 0.0;
        cells.push_back(out);
        ++cell;
      }
    }
  }
  return cells;
}

}  // namespace retropanel
