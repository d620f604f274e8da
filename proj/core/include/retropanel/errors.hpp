#pragma once

#include <stdexcept>
#include <string>

namespace retropanel {

enum class Errc {
  // data / input problems
  parse_error,
  io_error,
  missing_cell,
  duplicate_cell,
  non_binary_treatment,
  non_absorbing_treatment,
  never_treated_unit,
  no_later_treated,
  no_always_treated,
  missing_post_window,
  window_not_all_treated,
  dimension_mismatch,
  covariate_mismatch,
  missing_counterfactual,
  bad_pivot,
  empty_grid,
  fold_too_small,
  rank_too_low,
  collinear_treatment,
  bad_config,
  // numerical / convergence problems
  degenerate_weights,
  pipeline_failure,
  // internal faults
  svd_failure,
  internal_error,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] void raise(Errc code, const std::string& message);

// Process exit codes used by the command line tool.
enum class ExitCode : int { ok = 0, usage = 1, data = 2, convergence = 3, internal = 4 };

ExitCode exit_code_for(Errc code);

}  // namespace retropanel
