#include "retropanel/io.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "retropanel/errors.hpp"
#include "retropanel/util.hpp"

namespace retropanel {

namespace {

using nlohmann::json;

json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return 0.0;
  const double h = p * (static_cast<double>(sorted.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(h);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::io_error, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void atomic_write_file(const std::string& path, const std::string& content) {
  const std::filesystem::path target(path);
  const std::filesystem::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(Errc::io_error, "cannot open '" + tmp.string() + "' for writing");
    out << content;
    out.flush();
    if (!out) raise(Errc::io_error, "write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) raise(Errc::io_error, "cannot rename '" + tmp.string() + "' to '" + path + "'");
}

std::string effects_to_csv(const EffectSeries& series,
                           const std::vector<std::string>& period_labels) {
  std::string out = "period,tau\n";
  for (std::size_t k = 0; k < series.pre_periods.size(); ++k) {
    out += period_labels[static_cast<std::size_t>(series.pre_periods[k])];
    out += ',';
    out += format_double(series.tau_t(static_cast<Eigen::Index>(k)));
    out += '\n';
  }
  out += "pooled," + format_double(series.tau) + "\n";
  return out;
}

std::string effects_to_csv(const EffectEstimate& estimate,
                           const std::vector<std::string>& period_labels) {
  const EffectSeries& series = estimate.point;
  std::string out = "period,tau,ci_lower,ci_upper\n";
  for (std::size_t k = 0; k < series.pre_periods.size(); ++k) {
    out += period_labels[static_cast<std::size_t>(series.pre_periods[k])];
    out += ',';
    out += format_double(series.tau_t(static_cast<Eigen::Index>(k)));
    out += ',';
    out += format_double(estimate.ci_lower_t(static_cast<Eigen::Index>(k)));
    out += ',';
    out += format_double(estimate.ci_upper_t(static_cast<Eigen::Index>(k)));
    out += '\n';
  }
  out += "pooled," + format_double(series.tau) + ',' + format_double(estimate.ci_lower) + ',' +
         format_double(estimate.ci_upper) + "\n";
  return out;
}

std::string matrix_to_csv(const Matrix& m, const std::vector<std::string>& row_labels,
                          const std::vector<std::string>& col_labels,
                          const std::string& corner) {
  std::string out = corner;
  for (const std::string& c : col_labels) {
    out += ',';
    out += c;
  }
  out += '\n';
  for (int i = 0; i < m.rows(); ++i) {
    out += row_labels[static_cast<std::size_t>(i)];
    for (int j = 0; j < m.cols(); ++j) {
      out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

std::string trends_to_csv(const LatentTrends& trends,
                          const std::vector<std::string>& period_labels) {
  const int k = static_cast<int>(trends.factors.rows());
  std::string out = "period";
  for (int f = 0; f < k; ++f) out += ",factor_" + std::to_string(f + 1);
  out += '\n';
  for (int j = 0; j < trends.factors.cols(); ++j) {
    out += period_labels[static_cast<std::size_t>(j)];
    for (int f = 0; f < k; ++f) {
      out += ',';
      out += format_double(trends.factors(f, j));
    }
    out += '\n';
  }
  return out;
}

std::string placebo_to_csv(const std::vector<PlaceboCell>& cells) {
  std::string out = "mode,ratio,placebo_t0,tau,p_value,n_boot\n";
  for (const PlaceboCell& c : cells) {
    out += placebo_mode_name(c.mode);
    out += ',';
    out += format_double(c.ratio);
    out += ',';
    out += std::to_string(c.placebo_t0);
    out += ',';
    out += format_double(c.tau);
    out += ',';
    out += format_double(c.p_value);
    out += ',';
    out += std::to_string(c.n_boot_used);
    out += '\n';
  }
  return out;
}

std::string rmse_to_csv(const std::vector<RmseCell>& cells) {
  std::string out = "estimator,mode,ratio,mean_rmse,se_rmse,n_runs\n";
  for (const RmseCell& c : cells) {
    out += c.estimator;
    out += ',';
    out += placebo_mode_name(c.mode);
    out += ',';
    out += format_double(c.ratio);
    out += ',';
    out += format_double(c.mean_rmse);
    out += ',';
    out += c.n_runs > 1 ? format_double(c.se_rmse) : std::string();
    out += ',';
    out += std::to_string(c.n_runs);
    out += '\n';
  }
  return out;
}

std::string fit_to_json(const McFit& fit, int indent) {
  json j;
  j["lambda_l"] = fit.lambda_l;
  j["lambda_beta"] = fit.lambda_beta;
  j["rank"] = fit.rank;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["used_covariates"] = fit.used_covariates;
  j["singular_values"] = vector_to_json(fit.singular_values);
  j["gamma"] = vector_to_json(fit.gamma);
  j["delta"] = vector_to_json(fit.delta);
  if (fit.used_covariates) j["beta"] = vector_to_json(fit.beta);
  j["objective_trace"] = fit.objective_trace;
  return j.dump(indent);
}

std::string weights_diagnostics_to_json(const PropensityFit& prop, const WeightMatrix& weights,
                                        const ObservationMask& mask, int indent) {
  json j;
  j["eps_w"] = prop.eps_w;
  j["propensity_clamped_low"] = prop.n_clamped_low;
  j["propensity_clamped_high"] = prop.n_clamped_high;
  j["weight_floor"] = weights.floor;
  j["weight_cap"] = weights.cap;
  j["weights_floor_clamped"] = weights.n_floor_clamped;
  j["weights_cap_clamped"] = weights.n_cap_clamped;
  std::vector<double> observed;
  observed.reserve(static_cast<std::size_t>(mask.n_observed));
  for (int i = 0; i < mask.rows(); ++i)
    for (int jx = 0; jx < mask.cols(); ++jx)
      if (mask.observed(i, jx)) observed.push_back(weights.w(i, jx));
  std::sort(observed.begin(), observed.end());
  json q;
  q["min"] = observed.front();
  q["q25"] = quantile_sorted(observed, 0.25);
  q["median"] = quantile_sorted(observed, 0.5);
  q["q75"] = quantile_sorted(observed, 0.75);
  q["max"] = observed.back();
  j["weight_quantiles"] = q;
  return j.dump(indent);
}

std::string ground_truth_to_json(const SimulatedPanel& sim, int indent) {
  json j;
  const DgpConfig& c = sim.config;
  j["config"] = {{"n_always_treated", c.n_always_treated},
                 {"n_later_treated", c.n_later_treated},
                 {"n_periods", c.n_periods},
                 {"first_treated", c.first_treated},
                 {"rank", c.rank},
                 {"loading_scale", c.loading_scale},
                 {"factor_scale", c.factor_scale},
                 {"unit_effect_scale", c.unit_effect_scale},
                 {"time_effect_scale", c.time_effect_scale},
                 {"noise_sigma", c.noise_sigma},
                 {"ar_coef", c.ar_coef},
                 {"tau", c.tau},
                 {"tau_ramp_length", c.tau_ramp_length},
                 {"with_covariate", c.with_covariate},
                 {"beta", c.beta},
                 {"covariate_shift", c.covariate_shift},
                 {"covariate_scale", c.covariate_scale},
                 {"seed", c.seed}};
  j["gamma"] = vector_to_json(sim.truth.gamma);
  j["delta"] = vector_to_json(sim.truth.delta);
  // Average treatment effect over the later-treated pre-treatment cells,
  // the quantity the fitting pipeline estimates.
  double mean_effect = 0.0;
  int count = 0;
  for (int i = 0; i < sim.panel.n_units(); ++i)
    for (int t = 0; t < sim.panel.n_periods(); ++t)
      if (sim.panel.treated(i, t) == 0) {
        mean_effect += sim.truth.effect(i, t);
        ++count;
      }
  j["mean_effect_missing_cells"] = count > 0 ? mean_effect / count : 0.0;
  return j.dump(indent);
}

std::string error_to_json(Errc code, const std::string& message) {
  json j;
  j["error"] = {{"code", errc_name(code)},
                {"exit", static_cast<int>(exit_code_for(code))},
                {"message", message}};
  return j.dump();
}

}  // namespace retropanel
