#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "retropanel/types.hpp"

namespace retropanel {

// Balanced N x T panel for the retrospective design: every unit is treated
// by the last period, treatment is absorbing, and the outcome is observed
// for every cell. Later-treated units' pre-treatment cells are the ones
// whose treated potential outcome has to be imputed.
struct PanelDataset {
  std::vector<std::string> units;    // N ids; the CSV loader sorts them
  std::vector<std::string> periods;  // T labels, lexicographically sorted
  Matrix outcome;                    // N x T
  IntMatrix treated;                 // N x T, 0/1, absorbing along rows
  std::optional<Matrix> covariate;   // N x T, optional

  // Derived per unit: group and first treated period (0 for always-treated).
  std::vector<Group> group;
  std::vector<int> first_treated;

  int n_units() const { return static_cast<int>(outcome.rows()); }
  int n_periods() const { return static_cast<int>(outcome.cols()); }
  bool has_covariate() const { return covariate.has_value(); }

  std::vector<int> later_treated_units() const;
  std::vector<int> always_treated_units() const;
};

// Validates shapes and the treatment pattern, infers groups and first
// treated periods. All constructors of panels funnel through here.
PanelDataset make_panel(std::vector<std::string> units, std::vector<std::string> periods,
                        Matrix outcome, IntMatrix treated,
                        std::optional<Matrix> covariate = std::nullopt);

// Column names in the long CSV format (one row per unit x period).
struct CsvSchema {
  std::string unit = "unit";
  std::string period = "period";
  std::string outcome = "outcome";
  std::string treated = "treated";
  std::string covariate = "covariate";
};

PanelDataset load_panel_csv(const std::string& path, const CsvSchema& schema = {});
PanelDataset parse_panel_csv(const std::string& text, const CsvSchema& schema = {});
std::string panel_to_csv(const PanelDataset& ds, const CsvSchema& schema = {});
void write_panel_csv(const PanelDataset& ds, const std::string& path,
                     const CsvSchema& schema = {});

// Which cells enter the fitting objective. In the retrospective design a
// cell is observed for fitting when it is treated, so the missing set is
// exactly the later-treated units' pre-treatment quadrant.
struct ObservationMask {
  BoolMatrix observed;  // N x T
  int n_observed = 0;
  int n_missing = 0;

  int rows() const { return static_cast<int>(observed.rows()); }
  int cols() const { return static_cast<int>(observed.cols()); }
};

ObservationMask build_retrospective_mask(const PanelDataset& ds);
ObservationMask mask_from_bool(BoolMatrix observed);

// The trailing window of periods in which every unit is treated, together
// with bookkeeping about where it came from. Used by the placebo and
// comparison protocols, which need data with no genuinely missing cells.
struct PostWindow {
  PanelDataset panel;                 // all cells treated
  int start_period = 0;               // index into the source panel
  std::vector<int> later_treated;     // source LT unit indices (same row order)
};

// Requires the window to hold at least 3 periods so a placebo switch date
// can leave one period on each side.
PostWindow restrict_to_post_window(const PanelDataset& ds);

enum class PlaceboMode { simultaneous, staggered };

const char* placebo_mode_name(PlaceboMode mode);

// Pretends some units switched on treatment only at placebo_t0 inside an
// all-treated panel. Simultaneous mode gives every selected unit the same
// switch date and ignores the seed; staggered mode jitters each unit's
// date uniformly within +-max(1, round(0.1 T)) of placebo_t0, clamped to
// [2, T-1].
PanelDataset build_placebo_dataset(const PanelDataset& all_treated,
                                   const std::vector<int>& placebo_units, int placebo_t0,
                                   PlaceboMode mode, std::uint64_t seed);

// ceil(ratio * T) clamped to [2, T-1]: at least two pre and one post period.
int placebo_t0_from_ratio(double ratio, int n_periods);

}  // namespace retropanel
