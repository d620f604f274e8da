#include "retropanel/dgp.hpp"

#include <cmath>
#include <string>

#include "retropanel/errors.hpp"
#include "retropanel/util.hpp"

namespace retropanel {

namespace {

std::string padded_label(const char* prefix, int value, int width) {
  std::string digits = std::to_string(value);
  std::string out(prefix);
  out.append(static_cast<std::size_t>(std::max(0, width - static_cast<int>(digits.size()))), '0');
  out += digits;
  return out;
}

int label_width(int count) {
  int width = 1;
  for (int v = count - 1; v >= 10; v /= 10) ++width;
  return std::max(width, 2);
}

Matrix gaussian_matrix(int n, int t, double scale, std::uint64_t seed, std::uint64_t stream) {
  std::mt19937_64 rng = make_rng(seed, stream);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(n, t);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < t; ++j) m(i, j) = scale * normal(rng);
  return m;
}

Vector gaussian_vector(int n, double scale, std::uint64_t seed, std::uint64_t stream) {
  std::mt19937_64 rng = make_rng(seed, stream);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * normal(rng);
  return v;
}

}  // namespace

SimulatedPanel generate_panel(const DgpConfig& config) {
  if (config.n_always_treated < 1 || config.n_later_treated < 0)
    raise(Errc::bad_config, "need at least one always-treated unit");
  if (config.n_periods < 2) raise(Errc::bad_config, "need at least two periods");
  if (config.n_later_treated > 0 &&
      (config.first_treated < 1 || config.first_treated >= config.n_periods))
    raise(Errc::bad_config, "first_treated must lie in [1, n_periods - 1]");
  if (config.rank < 0) raise(Errc::bad_config, "rank must be nonnegative");
  if (!(config.ar_coef > -1.0) || !(config.ar_coef < 1.0))
    raise(Errc::bad_config, "ar_coef must lie in (-1, 1)");

  const int n = config.n_always_treated + config.n_later_treated;
  const int t = config.n_periods;
  const std::uint64_t seed = config.seed;

  GroundTruth truth;
  if (config.rank > 0) {
    const Matrix loadings =
        gaussian_matrix(n, config.rank, config.loading_scale, seed, rng_stream::dgp_loadings);
    const Matrix factors =
        gaussian_matrix(t, config.rank, config.factor_scale, seed, rng_stream::dgp_factors);
    truth.low_rank = loadings * factors.transpose();
  } else {
    truth.low_rank = Matrix::Zero(n, t);
  }
  truth.gamma = gaussian_vector(n, config.unit_effect_scale, seed, rng_stream::dgp_unit_effects);
  truth.delta = gaussian_vector(t, config.time_effect_scale, seed, rng_stream::dgp_time_effects);

  // AR(1) noise per unit with the configured marginal standard deviation.
  truth.noise = Matrix::Zero(n, t);
  if (config.noise_sigma > 0.0) {
    std::mt19937_64 rng = make_rng(seed, rng_stream::dgp_noise);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double rho = config.ar_coef;
    const double innovation = config.noise_sigma * std::sqrt(1.0 - rho * rho);
    for (int i = 0; i < n; ++i) {
      truth.noise(i, 0) = config.noise_sigma * normal(rng);
      for (int j = 1; j < t; ++j)
        truth.noise(i, j) = rho * truth.noise(i, j - 1) + innovation * normal(rng);
    }
  }

  IntMatrix treated(n, t);
  std::vector<int> first(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    const bool later = i >= config.n_always_treated;
    first[static_cast<std::size_t>(i)] = later ? config.first_treated : 0;
    for (int j = 0; j < t; ++j)
      treated(i, j) = j >= first[static_cast<std::size_t>(i)] ? 1 : 0;
  }

  // Treatment effect per cell: constant tau, optionally phased in linearly
  // over tau_ramp_length periods of exposure.
  truth.effect = Matrix::Zero(n, t);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < t; ++j) {
      double e = config.tau;
      if (config.tau_ramp_length > 0) {
        const int exposure = j - first[static_cast<std::size_t>(i)] + 1;
        e *= std::clamp(exposure / static_cast<double>(config.tau_ramp_length), 0.0, 1.0);
      }
      truth.effect(i, j) = e;
    }
  }

  truth.y0 = truth.low_rank + truth.noise;
  truth.y0.colwise() += truth.gamma;
  truth.y0.rowwise() += truth.delta.transpose();

  std::optional<Matrix> observed_covariate;
  if (config.with_covariate) {
    truth.x0 = gaussian_matrix(n, t, config.covariate_scale, seed, rng_stream::dgp_covariate);
    truth.x1 = *truth.x0;
    truth.x1->array() += config.covariate_shift;
    truth.beta_t = Vector::Constant(t, config.beta);
    truth.y0 += truth.x0->cwiseProduct(Matrix::Ones(n, 1) * truth.beta_t.transpose());
    // Treatment shifts the covariate by a constant, so its outcome channel
    // is the same beta * shift in every cell; folding it into the effect
    // grid keeps effect == y1 - y0 exact.
    truth.effect.array() += config.beta * config.covariate_shift;
    observed_covariate = Matrix(n, t);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < t; ++j)
        (*observed_covariate)(i, j) =
            treated(i, j) == 1 ? (*truth.x1)(i, j) : (*truth.x0)(i, j);
  }
  truth.y1 = truth.y0 + truth.effect;

  Matrix outcome(n, t);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < t; ++j)
      outcome(i, j) = treated(i, j) == 1 ? truth.y1(i, j) : truth.y0(i, j);

  std::vector<std::string> units;
  units.reserve(static_cast<std::size_t>(n));
  const int uw = label_width(n);
  for (int i = 0; i < config.n_always_treated; ++i) units.push_back(padded_label("at", i, uw));
  for (int i = 0; i < config.n_later_treated; ++i) units.push_back(padded_label("lt", i, uw));
  std::vector<std::string> periods;
  periods.reserve(static_cast<std::size_t>(t));
  const int pw = label_width(t);
  for (int j = 0; j < t; ++j) periods.push_back(padded_label("p", j, pw));

  SimulatedPanel sim;
  sim.config = config;
  sim.truth = std::move(truth);
  sim.panel = make_panel(std::move(units), std::move(periods), std::move(outcome),
                         std::move(treated), std::move(observed_covariate));
  return sim;
}

}  // namespace retropanel
