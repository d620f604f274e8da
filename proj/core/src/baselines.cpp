#include "retropanel/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "retropanel/errors.hpp"
#include "retropanel/solver.hpp"
#include "retropanel/util.hpp"
#include "retropanel/weights.hpp"

namespace retropanel {

namespace {

constexpr double kDemeanTol = 1e-10;
constexpr int kDemeanMaxIter = 2000;

// Alternating unit/time demeaning to numerical convergence. On a balanced
// panel two sweeps are exact; the loop guards against round-off.
void demean_two_way(Matrix& m) {
  for (int it = 0; it < kDemeanMaxIter; ++it) {
    double worst = 0.0;
    for (int i = 0; i < m.rows(); ++i) {
      const double mean = m.row(i).mean();
      m.row(i).array() -= mean;
      worst = std::max(worst, std::abs(mean));
    }
    for (int j = 0; j < m.cols(); ++j) {
      const double mean = m.col(j).mean();
      m.col(j).array() -= mean;
      worst = std::max(worst, std::abs(mean));
    }
    if (worst < kDemeanTol) return;
  }
}

}  // namespace

DidFit fit_did(const PanelDataset& ds) {
  const int n = ds.n_units();
  const int t = ds.n_periods();
  Matrix y = ds.outcome;
  Matrix w(n, t);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < t; ++j) w(i, j) = static_cast<double>(ds.treated(i, j));

  demean_two_way(y);
  demean_two_way(w);

  const double denom = w.cwiseProduct(w).sum();
  if (denom <= 1e-12 * n * t)
    raise(Errc::collinear_treatment,
          "treatment is absorbed by the fixed effects; tau is not identified");

  DidFit fit;
  fit.tau = y.cwiseProduct(w).sum() / denom;

  // Recover the fixed effects at the estimated tau.
  Matrix r = ds.outcome;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < t; ++j) r(i, j) -= fit.tau * ds.treated(i, j);
  fit.gamma = Vector::Zero(n);
  fit.delta = Vector::Zero(t);
  for (int it = 0; it < kDemeanMaxIter; ++it) {
    double change = 0.0;
    for (int i = 0; i < n; ++i) {
      double v = 0.0;
      for (int j = 0; j < t; ++j) v += r(i, j) - fit.delta(j);
      v /= t;
      change = std::max(change, std::abs(v - fit.gamma(i)));
      fit.gamma(i) = v;
    }
    for (int j = 0; j < t; ++j) {
      double v = 0.0;
      for (int i = 0; i < n; ++i) v += r(i, j) - fit.gamma(i);
      v /= n;
      change = std::max(change, std::abs(v - fit.delta(j)));
      fit.delta(j) = v;
    }
    if (change < kDemeanTol) break;
  }
  const double shift = fit.gamma.mean();
  fit.gamma.array() -= shift;
  fit.delta.array() += shift;
  return fit;
}

Matrix did_impute(const Matrix& y, const ObservationMask& mask) {
  const FixedEffects fe =
      fit_fixed_effects(y, mask, unit_weights(static_cast<int>(y.rows()),
                                              static_cast<int>(y.cols())));
  Matrix pred(y.rows(), y.cols());
  for (int i = 0; i < y.rows(); ++i)
    for (int j = 0; j < y.cols(); ++j) pred(i, j) = fe.gamma(i) + fe.delta(j);
  return pred;
}

ScmFit fit_scm(const Vector& treated_window, const Matrix& controls_window,
               const ScmOptions& opts) {
  const int n_controls = static_cast<int>(controls_window.rows());
  const int s = static_cast<int>(controls_window.cols());
  if (n_controls < 1) raise(Errc::dimension_mismatch, "need at least one control series");
  if (s < 1 || treated_window.size() != s)
    raise(Errc::dimension_mismatch, "treated series does not match the control window");
  if (!(opts.eta > 0.0) || !(opts.rel_tol > 0.0) || opts.clip_lo >= opts.clip_hi)
    raise(Errc::bad_config, "bad synthetic control options");

  ScmFit fit;
  fit.opts = opts;
  fit.omega = Vector::Constant(n_controls, 1.0 / n_controls);

  auto objective = [&](const Vector& omega) {
    return (treated_window - controls_window.transpose() * omega).squaredNorm();
  };
  auto record_violation = [&](const Vector& omega) {
    double v = std::abs(1.0 - omega.sum());
    for (int k = 0; k < n_controls; ++k) v = std::max(v, -omega(k));
    fit.simplex_max_violation = std::max(fit.simplex_max_violation, v);
  };
  record_violation(fit.omega);

  double value = objective(fit.omega);
  fit.objective_trace.push_back(value);

  for (int it = 0; it < opts.max_iter; ++it) {
    const Vector residual = treated_window - controls_window.transpose() * fit.omega;
    Vector grad = -2.0 * (controls_window * residual);
    // Renormalization cancels any uniform gradient shift, so only the
    // centered part moves the weights. Centering before clipping keeps
    // that part alive when the raw components all blow past one bound.
    grad.array() -= grad.mean();
    for (int k = 0; k < n_controls; ++k) {
      if (grad(k) < opts.clip_lo) {
        grad(k) = opts.clip_lo;
        fit.gradient_was_clipped = true;
      } else if (grad(k) > opts.clip_hi) {
        grad(k) = opts.clip_hi;
        fit.gradient_was_clipped = true;
      }
    }

    double eta = opts.eta;
    Vector candidate;
    double candidate_value = 0.0;
    bool accepted = false;
    for (int bt = 0; bt <= opts.max_backtracks; ++bt) {
      candidate = fit.omega.cwiseProduct((-eta * grad.array()).exp().matrix());
      candidate /= candidate.sum();
      record_violation(candidate);
      candidate_value = objective(candidate);
      if (candidate_value <= value) {
        accepted = true;
        break;
      }
      eta *= 0.5;
    }
    if (!accepted) break;  // no nonincreasing step left at this scale

    fit.omega = candidate;
    fit.objective_trace.push_back(candidate_value);
    fit.iterations = it + 1;
    const double change = value - candidate_value;
    value = candidate_value;
    if (change < opts.rel_tol * std::max(value + change, 1e-30) || value < 1e-28) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged && fit.iterations == 0) fit.converged = true;  // already optimal
  if (!fit.converged)
    log_info("synthetic control stopped after " + std::to_string(fit.iterations) +
             " iterations without meeting rel_tol");
  fit.pre_fit_mse = value / s;
  return fit;
}

Vector scm_predict(const ScmFit& fit, const Matrix& controls_target) {
  if (controls_target.rows() != fit.omega.size())
    raise(Errc::dimension_mismatch, "control rows do not match the fitted weights");
  return controls_target.transpose() * fit.omega;
}

}  // namespace retropanel
