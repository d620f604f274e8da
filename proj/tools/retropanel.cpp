#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "retropanel/retropanel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace retropanel;

namespace {

// Options shared by the estimation commands. Each subcommand binds the
// subset it understands.
struct CliOptions {
  std::string input;
  std::string output_dir = ".";
  std::string config_file;  // consumed before parsing; bound only for --help
  std::uint64_t seed = 0;
  int threads = 1;
  std::string estimator;  // empty -> per-command default
  bool no_covariates = false;
  bool no_propensity_weights = false;
  bool no_elapsed_weights = false;
  int n_boot = 999;
  int block_length = 0;
  std::string ratios = "0.5,0.8,0.97";
  std::string mode;
  int runs = 100;

  // Penalty and solver knobs; negative lambda means "cross-validate".
  int folds = 5;
  double holdout = 0.1;
  int grid_size_l = 10;
  int grid_size_beta = 5;
  double grid_decades = 3.0;
  double lambda_l = -1.0;
  double lambda_beta = -1.0;
  int max_iter = 500;
  double rel_tol = 1e-5;
  double eps_w = 0.05;
  double elapsed_scale = 0.0;

  // simulate
  int n_at = 30;
  int n_lt = 23;
  int periods = 60;
  int t0 = 24;
  int rank = 3;
  double loading_scale = 1.0;
  double factor_scale = 1.0;
  double unit_effect_scale = 1.0;
  double time_effect_scale = 1.0;
  double noise = 0.1;
  double ar = 0.0;
  double tau = 0.0;
  int tau_ramp = 0;
  bool with_covariate = false;
  double beta = 0.0;
  double covariate_shift = 0.0;
  double covariate_scale = 1.0;
};

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string tok = text.substr(pos, comma - pos);
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      raise(Errc::bad_config, "bad ratio '" + tok + "' in --ratios");
    }
    if (out.back() <= 0.0 || out.back() >= 1.0)
      raise(Errc::bad_config, "ratio " + tok + " outside (0, 1)");
    pos = comma + 1;
  }
  if (out.empty()) raise(Errc::bad_config, "--ratios is empty");
  return out;
}

std::vector<PlaceboMode> parse_modes(const std::string& text) {
  if (text == "simultaneous") return {PlaceboMode::simultaneous};
  if (text == "staggered") return {PlaceboMode::staggered};
  if (text == "both") return {PlaceboMode::simultaneous, PlaceboMode::staggered};
  raise(Errc::bad_config, "bad --mode '" + text + "' (simultaneous, staggered or both)");
}

EstimatorKind estimator_from(const CliOptions& opt) {
  if (opt.estimator.empty()) return EstimatorKind::matrix_completion;
  const std::optional<EstimatorKind> kind = parse_estimator(opt.estimator);
  if (!kind)
    raise(Errc::bad_config, "unknown estimator '" + opt.estimator + "' (mc, did or scm)");
  return *kind;
}

PipelineConfig pipeline_config(const CliOptions& opt, EstimatorKind kind) {
  if (opt.no_propensity_weights && !opt.no_elapsed_weights)
    raise(Errc::bad_config,
          "elapsed-time weighting requires propensity weighting; "
          "add --no-elapsed-weights alongside --no-propensity-weights");
  PipelineConfig config;
  config.estimator = kind;
  config.use_covariates = !opt.no_covariates;
  config.propensity_weights = !opt.no_propensity_weights;
  config.elapsed_time_weights = !opt.no_elapsed_weights;
  config.eps_w = opt.eps_w;
  config.elapsed_scale = opt.elapsed_scale;
  config.penalties.n_folds = opt.folds;
  config.penalties.holdout_fraction = opt.holdout;
  config.penalties.grid_size_l = opt.grid_size_l;
  config.penalties.grid_size_beta = opt.grid_size_beta;
  config.penalties.grid_decades = opt.grid_decades;
  config.penalties.cv_seed = opt.seed;
  config.solver.max_iter = opt.max_iter;
  config.solver.rel_tol = opt.rel_tol;
  if (opt.lambda_l >= 0.0)
    config.outcome_penalties = {opt.lambda_l, opt.lambda_beta >= 0.0 ? opt.lambda_beta : 0.0};
  else if (opt.lambda_beta >= 0.0)
    raise(Errc::bad_config, "--lambda-beta needs --lambda-l");
  return config;
}

BootstrapOptions bootstrap_options(const CliOptions& opt) {
  BootstrapOptions boot;
  boot.n_boot = opt.n_boot;
  boot.block_length = opt.block_length;
  boot.seed = opt.seed;
  boot.threads = opt.threads;
  return boot;
}

void write_output(const CliOptions& opt, const std::string& name, const std::string& content) {
  std::error_code ec;
  fs::create_directories(opt.output_dir, ec);
  if (ec) raise(Errc::io_error, "cannot create '" + opt.output_dir + "': " + ec.message());
  atomic_write_file((fs::path(opt.output_dir) / name).string(), content);
}

json bootstrap_json(const EffectEstimate& est) {
  return {{"n_boot_requested", est.n_boot_requested},
          {"n_boot_used", est.n_boot_used},
          {"block_length", est.block_length},
          {"seed", est.seed}};
}

void cmd_fit(const CliOptions& opt) {
  const PanelDataset ds = load_panel_csv(opt.input);
  PipelineConfig config = pipeline_config(opt, estimator_from(opt));
  config = resolve_penalties(ds, config);
  const PipelineResult result = run_pipeline(ds, config);
  const EffectEstimate est =
      block_bootstrap_ci(ds, make_effect_pipeline(config), bootstrap_options(opt));

  json fit;
  fit["estimator"] = estimator_name(config.estimator);
  fit["n_units"] = ds.n_units();
  fit["n_periods"] = ds.n_periods();
  fit["n_later_treated"] = static_cast<int>(ds.later_treated_units().size());
  fit["tau"] = est.point.tau;
  fit["ci_lower"] = est.ci_lower;
  fit["ci_upper"] = est.ci_upper;
  if (est.p_value) fit["p_value"] = *est.p_value;
  fit["bootstrap"] = bootstrap_json(est);

  if (result.outcome_fit) fit["model"] = json::parse(fit_to_json(*result.outcome_fit, 0));
  if (result.did) {
    json model{{"tau", result.did->tau}};
    model["gamma"] = std::vector<double>(result.did->gamma.begin(), result.did->gamma.end());
    model["delta"] = std::vector<double>(result.did->delta.begin(), result.did->delta.end());
    fit["model"] = std::move(model);
  }
  if (result.scm) {
    const std::vector<int> donors = ds.always_treated_units();
    const std::vector<int> treated = ds.later_treated_units();
    json fits = json::array();
    for (std::size_t k = 0; k < result.scm->size(); ++k) {
      const ScmFit& s = (*result.scm)[k];
      json omega;
      for (std::size_t c = 0; c < donors.size(); ++c)
        omega[ds.units[static_cast<std::size_t>(donors[c])]] =
            s.omega(static_cast<Eigen::Index>(c));
      fits.push_back({{"unit", ds.units[static_cast<std::size_t>(treated[k])]},
                      {"omega", std::move(omega)},
                      {"converged", s.converged},
                      {"iterations", s.iterations},
                      {"pre_fit_mse", s.pre_fit_mse}});
    }
    fit["model"] = {{"fits", std::move(fits)}};
  }

  write_output(opt, "effects.csv", effects_to_csv(est, ds.periods));
  write_output(opt, "fit.json", fit.dump(2) + "\n");

  if (result.outcome_fit) {
    const McFit& mc = *result.outcome_fit;
    const int k = std::min(2, mc.rank);
    LatentTrends trends;
    if (k > 0) {
      trends = extract_latent_trends(mc, ds.group, k);
    } else {
      trends.factors = Matrix(0, ds.n_periods());
      trends.loadings = Matrix(ds.n_units(), 0);
    }
    write_output(opt, "trends.csv", trends_to_csv(trends, ds.periods));

    if (result.treatment_model && result.weights) {
      write_output(opt, "weights.json",
                   weights_diagnostics_to_json(*result.treatment_model, *result.weights,
                                               build_retrospective_mask(ds)));
    } else {
      write_output(opt, "weights.json", json{{"propensity_weights", false}}.dump(2) + "\n");
    }
  }
}

void cmd_placebo(const CliOptions& opt) {
  const PanelDataset ds = load_panel_csv(opt.input);
  const PostWindow window = restrict_to_post_window(ds);
  CliOptions model_opt = opt;
  model_opt.no_covariates = true;  // placebo runs on outcomes alone
  const PipelineConfig config = pipeline_config(model_opt, estimator_from(opt));
  const std::vector<double> ratios = parse_ratios(opt.ratios);
  const std::vector<PlaceboMode> modes = parse_modes(opt.mode.empty() ? "both" : opt.mode);
  const std::vector<PlaceboCell> cells =
      run_placebo_suite(window.panel, window.later_treated, ratios, modes,
                        make_pipeline_factory(config), bootstrap_options(opt), opt.seed);
  write_output(opt, "placebo.csv", placebo_to_csv(cells));
}

void cmd_compare(const CliOptions& opt) {
  const PanelDataset ds = load_panel_csv(opt.input);
  const PostWindow window = restrict_to_post_window(ds);
  const PipelineConfig config = pipeline_config(opt, EstimatorKind::matrix_completion);

  std::vector<NamedImputer> estimators;
  if (opt.estimator.empty() || opt.estimator == "all") {
    estimators.push_back(make_mc_imputer(config));
    estimators.push_back(make_did_imputer());
    estimators.push_back(make_scm_imputer());
  } else {
    switch (estimator_from(opt)) {
      case EstimatorKind::matrix_completion: estimators.push_back(make_mc_imputer(config)); break;
      case EstimatorKind::did: estimators.push_back(make_did_imputer()); break;
      case EstimatorKind::scm: estimators.push_back(make_scm_imputer()); break;
    }
  }

  const std::vector<double> ratios = parse_ratios(opt.ratios);
  const std::vector<PlaceboMode> modes = parse_modes(opt.mode.empty() ? "simultaneous" : opt.mode);
  const std::vector<RmseCell> cells = rmse_comparison(window.panel, estimators, ratios, modes,
                                                      opt.runs, opt.seed, opt.threads);
  write_output(opt, "compare.csv", rmse_to_csv(cells));
}

void cmd_simulate(const CliOptions& opt) {
  DgpConfig config;
  config.n_always_treated = opt.n_at;
  config.n_later_treated = opt.n_lt;
  config.n_periods = opt.periods;
  config.first_treated = opt.t0;
  config.rank = opt.rank;
  config.loading_scale = opt.loading_scale;
  config.factor_scale = opt.factor_scale;
  config.unit_effect_scale = opt.unit_effect_scale;
  config.time_effect_scale = opt.time_effect_scale;
  config.noise_sigma = opt.noise;
  config.ar_coef = opt.ar;
  config.tau = opt.tau;
  config.tau_ramp_length = opt.tau_ramp;
  config.with_covariate = opt.with_covariate;
  config.beta = opt.beta;
  config.covariate_shift = opt.covariate_shift;
  config.covariate_scale = opt.covariate_scale;
  config.seed = opt.seed;

  const SimulatedPanel sim = generate_panel(config);
  write_output(opt, "panel.csv", panel_to_csv(sim.panel));
  write_output(opt, "truth.json", ground_truth_to_json(sim));
}

// A JSON config file stands in for flags: {"estimator": "did", "n-boot": 99,
// "no-covariates": true}. Its entries are spliced in right after the
// subcommand, so anything typed on the command line wins.
std::vector<std::string> expand_config_file(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size();) {
    const std::string& tok = args[i];
    if (tok == "--config") {
      if (i + 1 >= args.size()) raise(Errc::bad_config, "--config needs a file path");
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
    } else if (tok.rfind("--config=", 0) == 0) {
      path = tok.substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
    } else {
      ++i;
    }
  }
  if (path.empty()) return args;

  json config;
  try {
    config = json::parse(read_file(path));
  } catch (const json::exception& e) {
    raise(Errc::parse_error, "config file '" + path + "': " + e.what());
  }
  if (!config.is_object()) raise(Errc::bad_config, "config file must hold a JSON object");

  std::vector<std::string> synthesized;
  for (const auto& [key, value] : config.items()) {
    if (value.is_boolean()) {
      if (value.get<bool>()) synthesized.push_back("--" + key);
      continue;
    }
    std::string text;
    if (value.is_array()) {
      for (const auto& element : value) {
        if (!text.empty()) text += ',';
        text += element.is_string() ? element.get<std::string>() : element.dump();
      }
    } else {
      text = value.is_string() ? value.get<std::string>() : value.dump();
    }
    synthesized.push_back("--" + key);
    synthesized.push_back(std::move(text));
  }

  // Insert after the subcommand token (the first bare word).
  auto at = args.begin();
  while (at != args.end() && !at->empty() && (*at)[0] == '-') ++at;
  if (at != args.end()) ++at;
  args.insert(at, synthesized.begin(), synthesized.end());
  return args;
}

void print_error(Errc code, const std::string& message) {
  std::fputs((error_to_json(code, message) + "\n").c_str(), stderr);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrospective panel imputation"};
  app.require_subcommand(1);
  CliOptions opt;

  const auto add_io = [&](CLI::App* cmd, bool needs_input) {
    cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    if (needs_input)
      cmd->add_option("--input", opt.input, "panel CSV (unit,period,outcome,treated[,covariate])")
          ->required();
    cmd->add_option("--output-dir", opt.output_dir, "directory for output files");
    cmd->add_option("--seed", opt.seed, "master seed; fixed seed means identical output bytes");
    cmd->add_option("--config", opt.config_file,
                    "JSON file of flag values (command line flags win)");
  };
  const auto add_model = [&](CLI::App* cmd) {
    cmd->add_option("--threads", opt.threads, "worker threads")->check(CLI::Range(1, 1024));
    cmd->add_flag("--no-propensity-weights", opt.no_propensity_weights,
                  "unit loss weights instead of (1-w)/w");
    cmd->add_flag("--no-elapsed-weights", opt.no_elapsed_weights,
                  "drop the elapsed-time profile from the weights");
    cmd->add_option("--n-boot", opt.n_boot, "bootstrap replicates")->check(CLI::Range(1, 1000000));
    cmd->add_option("--block-length", opt.block_length, "bootstrap block length, 0 = T^(1/3)")
        ->check(CLI::Range(0, 1000000));
    cmd->add_option("--folds", opt.folds, "cross-validation folds")->check(CLI::Range(2, 100));
    cmd->add_option("--holdout", opt.holdout, "holdout fraction per fold")
        ->check(CLI::Range(0.01, 0.5));
    cmd->add_option("--grid-size-l", opt.grid_size_l, "nuclear-norm penalty grid size")
        ->check(CLI::Range(1, 100));
    cmd->add_option("--grid-size-beta", opt.grid_size_beta, "lasso penalty grid size")
        ->check(CLI::Range(0, 100));
    cmd->add_option("--grid-decades", opt.grid_decades, "decades below the critical penalty")
        ->check(CLI::Range(0.5, 12.0));
    cmd->add_option("--lambda-l", opt.lambda_l, "fixed nuclear-norm penalty (skips CV)");
    cmd->add_option("--lambda-beta", opt.lambda_beta, "fixed lasso penalty (skips CV)");
    cmd->add_option("--max-iter", opt.max_iter, "solver iteration cap")->check(CLI::Range(1, 100000));
    cmd->add_option("--rel-tol", opt.rel_tol, "solver relative tolerance");
    cmd->add_option("--eps-w", opt.eps_w, "propensity clamp")->check(CLI::Range(0.0, 0.49));
    cmd->add_option("--elapsed-scale", opt.elapsed_scale, "elapsed-time profile scale, 0 = T/10");
  };

  CLI::App* fit = app.add_subcommand("fit", "estimate effects on a retrospective panel");
  add_io(fit, true);
  add_model(fit);
  fit->add_option("--estimator", opt.estimator, "mc (default), did or scm");
  fit->add_flag("--no-covariates", opt.no_covariates, "ignore the covariate column");
  fit->callback([&] { cmd_fit(opt); });

  CLI::App* placebo = app.add_subcommand("placebo", "placebo suite on the all-treated window");
  add_io(placebo, true);
  add_model(placebo);
  placebo->add_option("--estimator", opt.estimator, "mc (default), did or scm");
  placebo->add_option("--ratios", opt.ratios, "placebo switch dates as fractions of the window");
  placebo->add_option("--mode", opt.mode, "simultaneous, staggered or both (default both)");
  placebo->callback([&] { cmd_placebo(opt); });

  CLI::App* compare = app.add_subcommand("compare", "imputation accuracy across estimators");
  add_io(compare, true);
  add_model(compare);
  compare->add_option("--estimator", opt.estimator, "mc, did, scm or all (default)");
  compare->add_option("--ratios", opt.ratios, "placebo switch dates as fractions of the window");
  compare->add_option("--mode", opt.mode, "simultaneous, staggered or both (default simultaneous)");
  compare->add_option("--runs", opt.runs, "placebo draws per cell")->check(CLI::Range(1, 100000));
  compare->callback([&] { cmd_compare(opt); });

  CLI::App* simulate = app.add_subcommand("simulate", "write a synthetic panel plus ground truth");
  add_io(simulate, false);
  simulate->add_option("--n-at", opt.n_at, "always-treated units");
  simulate->add_option("--n-lt", opt.n_lt, "later-treated units");
  simulate->add_option("--periods", opt.periods, "number of periods");
  simulate->add_option("--t0", opt.t0, "first treated period of the later-treated block");
  simulate->add_option("--rank", opt.rank, "latent factor count");
  simulate->add_option("--loading-scale", opt.loading_scale, "loading standard deviation");
  simulate->add_option("--factor-scale", opt.factor_scale, "factor standard deviation");
  simulate->add_option("--unit-effect-scale", opt.unit_effect_scale, "unit effect scale");
  simulate->add_option("--time-effect-scale", opt.time_effect_scale, "time effect scale");
  simulate->add_option("--noise", opt.noise, "marginal noise standard deviation");
  simulate->add_option("--ar", opt.ar, "AR(1) coefficient of the noise");
  simulate->add_option("--tau", opt.tau, "treatment effect");
  simulate->add_option("--tau-ramp", opt.tau_ramp, "periods over which the effect phases in");
  simulate->add_flag("--with-covariate", opt.with_covariate, "emit a covariate column");
  simulate->add_option("--beta", opt.beta, "covariate coefficient");
  simulate->add_option("--covariate-shift", opt.covariate_shift, "treatment shift of the covariate");
  simulate->add_option("--covariate-scale", opt.covariate_scale, "covariate scale");
  simulate->callback([&] { cmd_simulate(opt); });

  try {
    const std::vector<std::string> args =
        expand_config_file(std::vector<std::string>(argv + 1, argv + argc));
    std::vector<const char*> cargs;
    cargs.push_back(argv[0]);
    for (const std::string& a : args) cargs.push_back(a.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error(Errc::bad_config, e.what());
    return static_cast<int>(exit_code_for(Errc::bad_config));
  } catch (const Error& e) {
    print_error(e.code(), e.what());
    return static_cast<int>(exit_code_for(e.code()));
  } catch (const std::exception& e) {
    print_error(Errc::internal_error, e.what());
    return static_cast<int>(exit_code_for(Errc::internal_error));
  }
  return 0;
}
