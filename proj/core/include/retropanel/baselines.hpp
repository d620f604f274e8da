#pragma once

#include <vector>

#include "retropanel/panel.hpp"
#include "retropanel/types.hpp"

namespace retropanel {

// Two-way fixed effects difference-in-differences on the fully observed
// panel: Y_it = gamma_i + delta_t + tau W_it + e_it, estimated by iterated
// demeaning of Y and W followed by a one-dimensional regression on the
// demeaned treatment.
struct DidFit {
  double tau = 0.0;
  Vector gamma;  // mean zero
  Vector delta;
};

DidFit fit_did(const PanelDataset& ds);

// Two-way fixed effects fit on the observed cells only, predictions
// everywhere. This is the difference-in-differences column of the
// imputation comparisons, where the held-out cells must not be touched.
Matrix did_impute(const Matrix& y, const ObservationMask& mask);

// Synthetic control weights for one treated unit: simplex-constrained
// least squares fit of the treated series on control series over a fitting
// window, solved by exponentiated gradient descent. Gradients are centered
// (renormalization makes the update blind to uniform shifts) and clipped
// into [clip_lo, clip_hi]; the step is halved until the objective does not
// increase, so the objective trace is nonincreasing and every iterate
// stays on the simplex.
struct ScmOptions {
  double eta = 0.1;        // base step size
  double rel_tol = 1e-3;   // relative objective change stopping rule
  double clip_lo = -5.0;
  double clip_hi = 5.0;
  int max_iter = 2000;
  int max_backtracks = 40;
};

struct ScmFit {
  Vector omega;  // simplex weights over controls
  bool converged = false;
  int iterations = 0;
  double pre_fit_mse = 0.0;  // mean squared error over the fitting window
  std::vector<double> objective_trace;  // sum of squared errors per accepted iterate
  double simplex_max_violation = 0.0;   // worst sum drift or negativity across iterates
  bool gradient_was_clipped = false;
  ScmOptions opts;
};

// treated_window: length S. controls_window: n_controls x S.
ScmFit fit_scm(const Vector& treated_window, const Matrix& controls_window,
               const ScmOptions& opts = {});

// omega' * controls over any target window (n_controls x S_target).
Vector scm_predict(const ScmFit& fit, const Matrix& controls_target);

}  // namespace retropanel
