#pragma once

#include <cstdint>
#include <optional>

#include "retropanel/panel.hpp"
#include "retropanel/types.hpp"

namespace retropanel {

// Synthetic panels with known ground truth: low-rank structure plus
// two-way fixed effects plus AR(1) noise, an optional endogenous
// covariate, and an additive treatment effect. The observed outcome and
// covariate blend the treated and untreated versions according to the
// treatment pattern.
struct DgpConfig {
  int n_always_treated = 30;
  int n_later_treated = 23;
  int n_periods = 60;
  int first_treated = 24;  // switch date shared by the later-treated block
  int rank = 3;
  double loading_scale = 1.0;
  double factor_scale = 1.0;
  double unit_effect_scale = 1.0;
  double time_effect_scale = 1.0;
  double noise_sigma = 0.1;   // marginal standard deviation of the AR(1) noise
  double ar_coef = 0.0;
  double tau = 0.0;           // additive effect of treatment on the outcome
  int tau_ramp_length = 0;    // >0: effect phases in linearly over this many periods
  bool with_covariate = false;
  double beta = 0.0;              // covariate coefficient, constant across periods
  double covariate_shift = 0.0;   // added to the covariate by treatment
  double covariate_scale = 1.0;
  std::uint64_t seed = 0;
};

struct GroundTruth {
  Matrix low_rank;  // N x T
  Vector gamma;
  Vector delta;
  Matrix noise;
  Matrix y0;      // untreated potential outcome
  Matrix y1;      // treated potential outcome, y0 + effect cell by cell
  Matrix effect;  // additive effect grid (covariate channel included)
  std::optional<Matrix> x0;
  std::optional<Matrix> x1;
  Vector beta_t;  // empty without covariate
};

struct SimulatedPanel {
  PanelDataset panel;
  GroundTruth truth;
  DgpConfig config;
};

// Deterministic in the seed: every stochastic component draws from its own
// named stream, so the same seed gives bitwise identical panels.
SimulatedPanel generate_panel(const DgpConfig& config);

}  // namespace retropanel
