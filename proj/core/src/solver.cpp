#include "retropanel/solver.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "retropanel/errors.hpp"
#include "retropanel/util.hpp"

namespace retropanel {

namespace {

// Observed-cell structure cached once per fit.
struct MaskIndex {
  std::vector<std::vector<int>> row_cols;  // observed column indices per row
  std::vector<std::vector<int>> col_rows;  // observed row indices per column
  std::vector<double> row_wsum;
  std::vector<double> col_wsum;
  double w_max = 0.0;
  int n_observed = 0;
};

MaskIndex index_mask(const ObservationMask& mask, const Matrix& weights) {
  const int n = mask.rows();
  const int t = mask.cols();
  MaskIndex ix;
  ix.row_cols.resize(static_cast<std::size_t>(n));
  ix.col_rows.resize(static_cast<std::size_t>(t));
  ix.row_wsum.assign(static_cast<std::size_t>(n), 0.0);
  ix.col_wsum.assign(static_cast<std::size_t>(t), 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < t; ++j) {
      if (!mask.observed(i, j)) continue;
      const double w = weights(i, j);
      if (!std::isfinite(w) || w <= 0.0)
        raise(Errc::degenerate_weights,
              "weight at observed cell (" + std::to_string(i) + ", " + std::to_string(j) +
                  ") is " + format_double(w) + "; weights must be positive and finite");
      ix.row_cols[static_cast<std::size_t>(i)].push_back(j);
      ix.col_rows[static_cast<std::size_t>(j)].push_back(i);
      ix.row_wsum[static_cast<std::size_t>(i)] += w;
      ix.col_wsum[static_cast<std::size_t>(j)] += w;
      ix.w_max = std::max(ix.w_max, w);
      ++ix.n_observed;
    }
  }
  if (ix.n_observed == 0) raise(Errc::bad_config, "mask has no observed cells");
  return ix;
}

Eigen::BDCSVD<Matrix> run_svd(const Matrix& m) {
  if (!m.allFinite())
    raise(Errc::svd_failure, "matrix passed to SVD has non-finite entries (" +
                                 std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")");
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success)
    raise(Errc::svd_failure, "SVD did not converge on a " + std::to_string(m.rows()) + "x" +
                                 std::to_string(m.cols()) + " matrix");
  return svd;
}

double soft(double b, double lambda) {
  if (b > lambda) return b - lambda;
  if (b < -lambda) return b + lambda;
  return 0.0;
}

}  // namespace

SvdShrinkage soft_threshold_svd(const Matrix& m, double lambda) {
  if (lambda < 0.0) raise(Errc::bad_config, "shrinkage threshold must be nonnegative");
  const auto svd = run_svd(m);
  Vector shrunk = (svd.singularValues().array() - lambda).max(0.0).matrix();
  int k = 0;
  while (k < shrunk.size() && shrunk(k) > 0.0) ++k;
  SvdShrinkage out;
  out.singular_values = std::move(shrunk);
  if (k == 0) {
    out.low_rank = Matrix::Zero(m.rows(), m.cols());
  } else {
    out.low_rank = svd.matrixU().leftCols(k) * out.singular_values.head(k).asDiagonal() *
                   svd.matrixV().leftCols(k).transpose();
  }
  return out;
}

FixedEffects fit_fixed_effects(const Matrix& y, const ObservationMask& mask,
                               const Matrix& weights, const SolverOptions& opts) {
  const int n = static_cast<int>(y.rows());
  const int t = static_cast<int>(y.cols());
  if (mask.rows() != n || mask.cols() != t || weights.rows() != n || weights.cols() != t)
    raise(Errc::dimension_mismatch, "mask/weights do not match the outcome matrix");
  const MaskIndex ix = index_mask(mask, weights);

  double y_scale = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j : ix.row_cols[static_cast<std::size_t>(i)])
      y_scale = std::max(y_scale, std::abs(y(i, j)));

  FixedEffects fe;
  fe.gamma = Vector::Zero(n);
  fe.delta = Vector::Zero(t);
  const double tol = opts.fe_rel_tol * (1.0 + y_scale);
  for (int it = 0; it < opts.fe_max_iter; ++it) {
    double change = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto& cols = ix.row_cols[static_cast<std::size_t>(i)];
      if (cols.empty()) continue;
      double acc = 0.0;
      for (int j : cols) acc += weights(i, j) * (y(i, j) - fe.delta(j));
      const double v = acc / ix.row_wsum[static_cast<std::size_t>(i)];
      change = std::max(change, std::abs(v - fe.gamma(i)));
      fe.gamma(i) = v;
    }
    for (int j = 0; j < t; ++j) {
      const auto& rows = ix.col_rows[static_cast<std::size_t>(j)];
      if (rows.empty()) continue;
      double acc = 0.0;
      for (int i : rows) acc += weights(i, j) * (y(i, j) - fe.gamma(i));
      const double v = acc / ix.col_wsum[static_cast<std::size_t>(j)];
      change = std::max(change, std::abs(v - fe.delta(j)));
      fe.delta(j) = v;
    }
    fe.iterations = it + 1;
    if (change < tol) break;
  }
  const double shift = fe.gamma.mean();
  fe.gamma.array() -= shift;
  fe.delta.array() += shift;
  return fe;
}

double critical_lambda_l(const Matrix& y, const ObservationMask& mask, const Matrix& weights,
                         const SolverOptions& opts) {
  const FixedEffects fe = fit_fixed_effects(y, mask, weights, opts);
  Matrix weighted = Matrix::Zero(y.rows(), y.cols());
  int n_obs = 0;
  for (int i = 0; i < y.rows(); ++i) {
    for (int j = 0; j < y.cols(); ++j) {
      if (!mask.observed(i, j)) continue;
      weighted(i, j) = weights(i, j) * (y(i, j) - fe.gamma(i) - fe.delta(j));
      ++n_obs;
    }
  }
  const auto svd = run_svd(weighted);
  return 2.0 * svd.singularValues()(0) / static_cast<double>(n_obs);
}

McFit fit_matrix_completion(const Matrix& y, const ObservationMask& mask, const Matrix& weights,
                            const std::optional<Matrix>& x, double lambda_l, double lambda_beta,
                            const SolverOptions& opts, const McFit* warm_start) {
  const int n = static_cast<int>(y.rows());
  const int t = static_cast<int>(y.cols());
  if (mask.rows() != n || mask.cols() != t || weights.rows() != n || weights.cols() != t)
    raise(Errc::dimension_mismatch, "mask/weights do not match the outcome matrix");
  if (x && (x->rows() != n || x->cols() != t))
    raise(Errc::dimension_mismatch, "covariate matrix does not match the outcome matrix");
  if (lambda_l < 0.0 || lambda_beta < 0.0)
    raise(Errc::bad_config, "penalties must be nonnegative");

  const MaskIndex ix = index_mask(mask, weights);
  for (int i = 0; i < n; ++i)
    for (int j : ix.row_cols[static_cast<std::size_t>(i)])
      if (!std::isfinite(y(i, j)))
        raise(Errc::bad_config, "outcome at observed cell (" + std::to_string(i) + ", " +
                                    std::to_string(j) + ") is not finite");
  if (mask.n_missing == 0 && opts.warn_no_missing)
    log_warn("mask has no missing cells; fitting a fully observed panel");

  McFit fit;
  fit.used_covariates = x.has_value();
  fit.lambda_l = lambda_l;
  fit.lambda_beta = lambda_beta;
  if (warm_start != nullptr && warm_start->l_hat.rows() == n && warm_start->l_hat.cols() == t) {
    fit.l_hat = warm_start->l_hat;
    fit.gamma = warm_start->gamma;
    fit.delta = warm_start->delta;
    fit.beta = x ? (warm_start->beta.size() == t ? warm_start->beta : Vector::Zero(t)) : Vector();
  } else {
    fit.l_hat = Matrix::Zero(n, t);
    const FixedEffects fe = fit_fixed_effects(y, mask, weights, opts);
    fit.gamma = fe.gamma;
    fit.delta = fe.delta;
    fit.beta = x ? Vector::Zero(t) : Vector();
  }

  // beta_t quadratic coefficients never change across iterations.
  Vector col_xx(t);
  if (x) {
    for (int j = 0; j < t; ++j) {
      double acc = 0.0;
      for (int i : ix.col_rows[static_cast<std::size_t>(j)])
        acc += weights(i, j) * (*x)(i, j) * (*x)(i, j);
      col_xx(j) = 2.0 * acc / ix.n_observed;
    }
  }

  const double n_obs = static_cast<double>(ix.n_observed);
  const double svt_threshold = lambda_l * n_obs / (2.0 * ix.w_max);

  auto model_value = [&](int i, int j) {
    double v = fit.l_hat(i, j) + fit.gamma(i) + fit.delta(j);
    if (x) v += (*x)(i, j) * fit.beta(j);
    return v;
  };
  auto objective = [&]() {
    double loss = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j : ix.row_cols[static_cast<std::size_t>(i)]) {
        const double e = y(i, j) - model_value(i, j);
        loss += weights(i, j) * e * e;
      }
    double value = loss / n_obs;
    if (fit.singular_values.size() > 0) value += lambda_l * fit.singular_values.sum();
    if (x) value += lambda_beta * fit.beta.cwiseAbs().sum();
    return value;
  };

  // Starting objective: the warm or FE-only point with the current L's
  // nuclear norm (zero at a cold start).
  if (fit.l_hat.isZero(0.0)) {
    fit.singular_values = Vector::Zero(std::min(n, t));
  } else {
    fit.singular_values = run_svd(fit.l_hat).singularValues();
  }
  fit.objective_trace.clear();
  fit.objective_trace.push_back(objective());

  Matrix work(n, t);
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    // (a) fixed effects, one exact sweep each
    for (int i = 0; i < n; ++i) {
      const auto& cols = ix.row_cols[static_cast<std::size_t>(i)];
      if (cols.empty()) continue;
      double acc = 0.0;
      for (int j : cols) {
        double r = y(i, j) - fit.l_hat(i, j) - fit.delta(j);
        if (x) r -= (*x)(i, j) * fit.beta(j);
        acc += weights(i, j) * r;
      }
      fit.gamma(i) = acc / ix.row_wsum[static_cast<std::size_t>(i)];
    }
    for (int j = 0; j < t; ++j) {
      const auto& rows = ix.col_rows[static_cast<std::size_t>(j)];
      if (rows.empty()) continue;
      double acc = 0.0;
      for (int i : rows) {
        double r = y(i, j) - fit.l_hat(i, j) - fit.gamma(i);
        if (x) r -= (*x)(i, j) * fit.beta(j);
        acc += weights(i, j) * r;
      }
      fit.delta(j) = acc / ix.col_wsum[static_cast<std::size_t>(j)];
    }
    const double shift = fit.gamma.mean();
    fit.gamma.array() -= shift;
    fit.delta.array() += shift;

    // (b) per-period lasso for beta
    if (x) {
      for (int j = 0; j < t; ++j) {
        if (col_xx(j) <= 0.0) {
          fit.beta(j) = 0.0;
          continue;
        }
        double acc = 0.0;
        for (int i : ix.col_rows[static_cast<std::size_t>(j)]) {
          const double r = y(i, j) - fit.l_hat(i, j) - fit.gamma(i) - fit.delta(j);
          acc += weights(i, j) * (*x)(i, j) * r;
        }
        const double b = 2.0 * acc / n_obs;
        fit.beta(j) = soft(b, lambda_beta) / col_xx(j);
      }
    }

    // (c) singular value thresholding on the majorized working matrix
    work = fit.l_hat;
    for (int i = 0; i < n; ++i) {
      for (int j : ix.row_cols[static_cast<std::size_t>(i)]) {
        double z = y(i, j) - fit.gamma(i) - fit.delta(j);
        if (x) z -= (*x)(i, j) * fit.beta(j);
        const double a = weights(i, j) / ix.w_max;
        work(i, j) = a * z + (1.0 - a) * fit.l_hat(i, j);
      }
    }
    SvdShrinkage shrink = soft_threshold_svd(work, svt_threshold);
    fit.l_hat = std::move(shrink.low_rank);
    fit.singular_values = std::move(shrink.singular_values);

    fit.objective_trace.push_back(objective());
    fit.iterations = iter + 1;
    const double prev = fit.objective_trace[fit.objective_trace.size() - 2];
    const double cur = fit.objective_trace.back();
    if (std::abs(prev - cur) < opts.rel_tol * std::max(std::abs(prev), 1e-30)) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged)
    log_info("matrix completion stopped at max_iter=" + std::to_string(opts.max_iter) +
             " before meeting rel_tol");

  const double top = fit.singular_values.size() > 0 ? fit.singular_values(0) : 0.0;
  fit.rank = 0;
  for (int k = 0; k < fit.singular_values.size(); ++k)
    if (fit.singular_values(k) > opts.rank_tol_factor * top && fit.singular_values(k) > 0.0)
      ++fit.rank;
  return fit;
}

CvResult cross_validate_penalties(const Matrix& y, const ObservationMask& mask,
                                  const Matrix& weights, const std::optional<Matrix>& x,
                                  const PenaltyConfig& config, const SolverOptions& opts) {
  if (config.n_folds < 2) raise(Errc::bad_config, "cross-validation needs at least 2 folds");
  if (!(config.holdout_fraction > 0.0) || !(config.holdout_fraction < 1.0))
    raise(Errc::bad_config, "holdout_fraction must lie in (0, 1)");

  std::vector<double> grid_l = config.lambda_l_grid;
  std::vector<double> grid_b = config.lambda_beta_grid;
  if (grid_l.empty()) {
    if (config.grid_size_l < 1) raise(Errc::empty_grid, "lambda_l grid is empty");
    const double lmax = critical_lambda_l(y, mask, weights, opts);
    if (lmax <= 0.0) {
      grid_l = {0.0};
    } else {
      for (int k = 0; k < config.grid_size_l; ++k) {
        const double e = config.grid_size_l == 1
                             ? 0.0
                             : config.grid_decades * k / (config.grid_size_l - 1);
        grid_l.push_back(lmax * std::pow(10.0, -e));
      }
    }
  }
  if (!x) {
    grid_b = {0.0};
  } else if (grid_b.empty()) {
    if (config.grid_size_beta < 0) raise(Errc::empty_grid, "lambda_beta grid is empty");
    const FixedEffects fe = fit_fixed_effects(y, mask, weights, opts);
    double bmax = 0.0;
    for (int j = 0; j < y.cols(); ++j) {
      double acc = 0.0;
      for (int i = 0; i < y.rows(); ++i)
        if (mask.observed(i, j))
          acc += weights(i, j) * (*x)(i, j) * (y(i, j) - fe.gamma(i) - fe.delta(j));
      bmax = std::max(bmax, std::abs(2.0 * acc / mask.n_observed));
    }
    if (bmax > 0.0)
      for (int k = 0; k < config.grid_size_beta; ++k) {
        const double e = config.grid_size_beta == 1
                             ? 0.0
                             : config.grid_decades * k / (config.grid_size_beta - 1);
        grid_b.push_back(bmax * std::pow(10.0, -e));
      }
    grid_b.push_back(0.0);
  }
  if (grid_l.empty() || grid_b.empty()) raise(Errc::empty_grid, "penalty grid is empty");
  std::sort(grid_l.rbegin(), grid_l.rend());
  std::sort(grid_b.rbegin(), grid_b.rend());

  std::vector<std::pair<int, int>> observed_cells;
  observed_cells.reserve(static_cast<std::size_t>(mask.n_observed));
  for (int i = 0; i < mask.rows(); ++i)
    for (int j = 0; j < mask.cols(); ++j)
      if (mask.observed(i, j)) observed_cells.emplace_back(i, j);

  const int holdout_count =
      static_cast<int>(std::lround(config.holdout_fraction * observed_cells.size()));
  if (holdout_count < 1)
    raise(Errc::fold_too_small, "holdout_fraction keeps less than one observed cell per fold");
  if (holdout_count >= static_cast<int>(observed_cells.size()))
    raise(Errc::fold_too_small, "holdout would consume every observed cell");

  CvResult result;
  for (double lb : grid_b)
    for (double ll : grid_l) {
      CvEntry entry;
      entry.lambda_l = ll;
      entry.lambda_beta = lb;
      result.table.push_back(entry);
    }

  SolverOptions fold_opts = opts;
  fold_opts.warn_no_missing = false;

  for (int fold = 0; fold < config.n_folds; ++fold) {
    std::mt19937_64 rng = make_rng(config.cv_seed, rng_stream::cv_fold,
                                   static_cast<std::uint64_t>(fold));
    std::vector<std::pair<int, int>> holdout;
    holdout.reserve(static_cast<std::size_t>(holdout_count));
    std::sample(observed_cells.begin(), observed_cells.end(), std::back_inserter(holdout),
                holdout_count, rng);

    BoolMatrix train = mask.observed;
    for (const auto& [i, j] : holdout) train(i, j) = false;
    const ObservationMask train_mask = mask_from_bool(std::move(train));

    std::size_t entry_ix = 0;
    for (double lb : grid_b) {
      McFit prev;
      bool have_prev = false;
      for (double ll : grid_l) {
        const McFit fit = fit_matrix_completion(y, train_mask, weights, x, ll, lb, fold_opts,
                                                have_prev ? &prev : nullptr);
        double err = 0.0;
        for (const auto& [i, j] : holdout) {
          double pred = fit.l_hat(i, j) + fit.gamma(i) + fit.delta(j);
          if (x) pred += (*x)(i, j) * fit.beta(j);
          const double e = y(i, j) - pred;
          err += weights(i, j) * e * e;
        }
        result.table[entry_ix].fold_errors.push_back(err / holdout.size());
        ++entry_ix;
        prev = fit;
        have_prev = true;
      }
    }
  }

  double best = std::numeric_limits<double>::infinity();
  for (CvEntry& entry : result.table) {
    double mean = 0.0;
    for (double e : entry.fold_errors) mean += e;
    mean /= static_cast<double>(entry.fold_errors.size());
    entry.mean_error = mean;
    if (mean < best) {
      best = mean;
      result.lambda_l = entry.lambda_l;
      result.lambda_beta = entry.lambda_beta;
    }
  }
  return result;
}

Matrix predict_counterfactual(const McFit& fit, const std::optional<Matrix>& x_hat) {
  if (fit.used_covariates && !x_hat)
    raise(Errc::covariate_mismatch, "fit used covariates; supply the imputed covariate matrix");
  if (!fit.used_covariates && x_hat)
    raise(Errc::covariate_mismatch, "fit had no covariates; do not supply a covariate matrix");
  const int n = static_cast<int>(fit.l_hat.rows());
  const int t = static_cast<int>(fit.l_hat.cols());
  if (x_hat && (x_hat->rows() != n || x_hat->cols() != t))
    raise(Errc::dimension_mismatch, "covariate matrix does not match the fit");
  Matrix pred = fit.l_hat;
  pred.colwise() += fit.gamma;
  pred.rowwise() += fit.delta.transpose();
  if (x_hat) pred += x_hat->cwiseProduct(Matrix::Ones(n, 1) * fit.beta.transpose());
  return pred;
}

LatentTrends extract_latent_trends(const McFit& fit, const std::vector<Group>& group, int k) {
  const int n = static_cast<int>(fit.l_hat.rows());
  const int t = static_cast<int>(fit.l_hat.cols());
  if (static_cast<int>(group.size()) != n)
    raise(Errc::dimension_mismatch, "group vector does not match the fit");
  if (k < 0) raise(Errc::bad_config, "number of factors must be nonnegative");
  if (k > fit.rank)
    raise(Errc::rank_too_low, "requested " + std::to_string(k) + " factors from a rank-" +
                                  std::to_string(fit.rank) + " fit");
  LatentTrends trends;
  trends.factors = Matrix::Zero(k, t);
  trends.loadings = Matrix::Zero(n, k);
  if (k == 0) return trends;

  const auto svd = run_svd(fit.l_hat);
  for (int j = 0; j < k; ++j) {
    Vector u = svd.matrixU().col(j);
    Vector v = svd.matrixV().col(j);
    // Fix the SVD sign ambiguity: largest-magnitude loading is positive.
    int arg = 0;
    for (int i = 1; i < n; ++i)
      if (std::abs(u(i)) > std::abs(u(arg))) arg = i;
    if (u(arg) < 0.0) {
      u = -u;
      v = -v;
    }
    trends.loadings.col(j) = u;
    trends.factors.row(j) = (svd.singularValues()(j) * v).transpose();

    LatentTrends::GroupSummary s;
    int n_at = 0, n_lt = 0;
    for (int i = 0; i < n; ++i) {
      if (group[static_cast<std::size_t>(i)] == Group::always_treated) {
        s.mean_abs_always_treated += std::abs(u(i));
        ++n_at;
      } else {
        s.mean_abs_later_treated += std::abs(u(i));
        ++n_lt;
      }
    }
    if (n_at > 0) s.mean_abs_always_treated /= n_at;
    if (n_lt > 0) s.mean_abs_later_treated /= n_lt;
    s.ratio = s.mean_abs_always_treated > 0.0
                  ? s.mean_abs_later_treated / s.mean_abs_always_treated
                  : 0.0;
    trends.summary.push_back(s);
  }
  return trends;
}

}  // namespace retropanel
