#include "retropanel/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "retropanel/errors.hpp"
#include "retropanel/util.hpp"

namespace retropanel {

namespace {

std::string trim(std::string s) {
  auto issp = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && issp(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && issp(static_cast<unsigned char>(s[b]))) ++b;
  return s.substr(b);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double_field(const std::string& s, int line_no, const std::string& col) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    raise(Errc::parse_error, "line " + std::to_string(line_no) + ": cannot parse '" + s +
                                 "' as a number in column '" + col + "'");
  }
  return value;
}

}  // namespace

std::vector<int> PanelDataset::later_treated_units() const {
  std::vector<int> out;
  for (int i = 0; i < n_units(); ++i)
    if (group[static_cast<std::size_t>(i)] == Group::later_treated) out.push_back(i);
  return out;
}

std::vector<int> PanelDataset::always_treated_units() const {
  std::vector<int> out;
  for (int i = 0; i < n_units(); ++i)
    if (group[static_cast<std::size_t>(i)] == Group::always_treated) out.push_back(i);
  return out;
}

PanelDataset make_panel(std::vector<std::string> units, std::vector<std::string> periods,
                        Matrix outcome, IntMatrix treated, std::optional<Matrix> covariate) {
  const int n = static_cast<int>(units.size());
  const int t = static_cast<int>(periods.size());
  if (n == 0 || t == 0) raise(Errc::dimension_mismatch, "panel must have units and periods");
  if (outcome.rows() != n || outcome.cols() != t)
    raise(Errc::dimension_mismatch, "outcome matrix does not match unit/period counts");
  if (treated.rows() != n || treated.cols() != t)
    raise(Errc::dimension_mismatch, "treatment matrix does not match unit/period counts");
  if (covariate && (covariate->rows() != n || covariate->cols() != t))
    raise(Errc::dimension_mismatch, "covariate matrix does not match unit/period counts");

  PanelDataset ds;
  ds.units = std::move(units);
  ds.periods = std::move(periods);
  ds.outcome = std::move(outcome);
  ds.treated = std::move(treated);
  ds.covariate = std::move(covariate);
  ds.group.resize(static_cast<std::size_t>(n));
  ds.first_treated.resize(static_cast<std::size_t>(n));

  for (int i = 0; i < n; ++i) {
    int first = -1;
    for (int j = 0; j < t; ++j) {
      const int w = ds.treated(i, j);
      if (w != 0 && w != 1)
        raise(Errc::non_binary_treatment,
              "unit '" + ds.units[static_cast<std::size_t>(i)] + "' has treatment value " +
                  std::to_string(w) + " at period '" + ds.periods[static_cast<std::size_t>(j)] +
                  "'");
      if (w == 1 && first < 0) first = j;
      if (w == 0 && first >= 0)
        raise(Errc::non_absorbing_treatment,
              "unit '" + ds.units[static_cast<std::size_t>(i)] +
                  "' leaves treatment at period '" + ds.periods[static_cast<std::size_t>(j)] +
                  "'");
    }
    if (first < 0)
      raise(Errc::never_treated_unit,
            "unit '" + ds.units[static_cast<std::size_t>(i)] + "' is never treated");
    ds.first_treated[static_cast<std::size_t>(i)] = first;
    ds.group[static_cast<std::size_t>(i)] =
        first == 0 ? Group::always_treated : Group::later_treated;
  }
  return ds;
}

PanelDataset parse_panel_csv(const std::string& text, const CsvSchema& schema) {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line)) raise(Errc::parse_error, "empty input");
  const std::vector<std::string> header = split_csv_line(line);
  auto col_of = [&](const std::string& name) -> int {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return static_cast<int>(k);
    return -1;
  };
  const int c_unit = col_of(schema.unit);
  const int c_period = col_of(schema.period);
  const int c_outcome = col_of(schema.outcome);
  const int c_treated = col_of(schema.treated);
  const int c_cov = col_of(schema.covariate);
  if (c_unit < 0 || c_period < 0 || c_outcome < 0 || c_treated < 0)
    raise(Errc::parse_error, "header must contain columns '" + schema.unit + "', '" +
                                 schema.period + "', '" + schema.outcome + "', '" +
                                 schema.treated + "'");
  const bool has_cov = c_cov >= 0;
  const int max_col = std::max({c_unit, c_period, c_outcome, c_treated, c_cov});

  struct Row {
    std::string unit, period;
    double outcome;
    int treated;
    double covariate;
  };
  std::vector<Row> rows;
  std::set<std::string> unit_set;
  std::set<std::string> period_set;

  int line_no = 1;
  while (std::getline(ss, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (static_cast<int>(f.size()) <= max_col)
      raise(Errc::parse_error, "line " + std::to_string(line_no) + ": expected at least " +
                                   std::to_string(max_col + 1) + " fields, got " +
                                   std::to_string(f.size()));
    Row r;
    r.unit = f[static_cast<std::size_t>(c_unit)];
    r.period = f[static_cast<std::size_t>(c_period)];
    r.outcome = parse_double_field(f[static_cast<std::size_t>(c_outcome)], line_no, schema.outcome);
    const std::string& w = f[static_cast<std::size_t>(c_treated)];
    if (w == "0") {
      r.treated = 0;
    } else if (w == "1") {
      r.treated = 1;
    } else {
      raise(Errc::non_binary_treatment, "line " + std::to_string(line_no) +
                                            ": treatment must be 0 or 1, got '" + w + "'");
    }
    r.covariate =
        has_cov ? parse_double_field(f[static_cast<std::size_t>(c_cov)], line_no, schema.covariate)
                : 0.0;
    unit_set.insert(r.unit);
    period_set.insert(r.period);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) raise(Errc::parse_error, "no data rows");

  // Rows may arrive in any order; both axes come out lexicographic.
  std::vector<std::string> units(unit_set.begin(), unit_set.end());
  std::vector<std::string> periods(period_set.begin(), period_set.end());
  std::map<std::string, int> unit_index;
  for (std::size_t k = 0; k < units.size(); ++k) unit_index[units[k]] = static_cast<int>(k);
  std::map<std::string, int> period_index;
  for (std::size_t k = 0; k < periods.size(); ++k) period_index[periods[k]] = static_cast<int>(k);

  const int n = static_cast<int>(units.size());
  const int t = static_cast<int>(periods.size());
  Matrix outcome(n, t);
  IntMatrix treated = IntMatrix::Constant(n, t, -1);
  Matrix covariate;
  if (has_cov) covariate.resize(n, t);

  for (const Row& r : rows) {
    const int i = unit_index[r.unit];
    const int j = period_index[r.period];
    if (treated(i, j) != -1)
      raise(Errc::duplicate_cell, "duplicate row for unit '" + r.unit + "', period '" +
                                      r.period + "'");
    outcome(i, j) = r.outcome;
    treated(i, j) = r.treated;
    if (has_cov) covariate(i, j) = r.covariate;
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < t; ++j)
      if (treated(i, j) == -1)
        raise(Errc::missing_cell, "no row for unit '" + units[static_cast<std::size_t>(i)] +
                                      "', period '" + periods[static_cast<std::size_t>(j)] + "'");

  return make_panel(std::move(units), std::move(periods), std::move(outcome), std::move(treated),
                    has_cov ? std::optional<Matrix>(std::move(covariate)) : std::nullopt);
}

PanelDataset load_panel_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::io_error, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_panel_csv(buf.str(), schema);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

std::string panel_to_csv(const PanelDataset& ds, const CsvSchema& schema) {
  std::string out = schema.unit + "," + schema.period + "," + schema.outcome + "," + schema.treated;
  if (ds.has_covariate()) out += "," + schema.covariate;
  out += "\n";
  for (int i = 0; i < ds.n_units(); ++i) {
    for (int j = 0; j < ds.n_periods(); ++j) {
      out += ds.units[static_cast<std::size_t>(i)];
      out += ',';
      out += ds.periods[static_cast<std::size_t>(j)];
      out += ',';
      out += format_double(ds.outcome(i, j));
      out += ',';
      out += ds.treated(i, j) ? '1' : '0';
      if (ds.has_covariate()) {
        out += ',';
        out += format_double((*ds.covariate)(i, j));
      }
      out += '\n';
    }
  }
  return out;
}

void write_panel_csv(const PanelDataset& ds, const std::string& path, const CsvSchema& schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Errc::io_error, "cannot open '" + path + "' for writing");
  out << panel_to_csv(ds, schema);
  if (!out) raise(Errc::io_error, "write to '" + path + "' failed");
}

ObservationMask mask_from_bool(BoolMatrix observed) {
  ObservationMask mask;
  mask.observed = std::move(observed);
  mask.n_observed = 0;
  for (int i = 0; i < mask.observed.rows(); ++i)
    for (int j = 0; j < mask.observed.cols(); ++j)
      if (mask.observed(i, j)) ++mask.n_observed;
  mask.n_missing =
      static_cast<int>(mask.observed.rows() * mask.observed.cols()) - mask.n_observed;
  return mask;
}

ObservationMask build_retrospective_mask(const PanelDataset& ds) {
  BoolMatrix observed(ds.n_units(), ds.n_periods());
  for (int i = 0; i < ds.n_units(); ++i)
    for (int j = 0; j < ds.n_periods(); ++j) observed(i, j) = ds.treated(i, j) == 1;
  return mask_from_bool(std::move(observed));
}

PostWindow restrict_to_post_window(const PanelDataset& ds) {
  int start = 0;
  for (int i = 0; i < ds.n_units(); ++i)
    start = std::max(start, ds.first_treated[static_cast<std::size_t>(i)]);
  const int t = ds.n_periods() - start;
  if (t < 3)
    raise(Errc::missing_post_window,
          "all-treated window has " + std::to_string(t) +
              " periods; at least 3 are needed for a placebo switch date");

  PostWindow win;
  win.start_period = start;
  win.later_treated = ds.later_treated_units();
  std::vector<std::string> periods(ds.periods.begin() + start, ds.periods.end());
  Matrix outcome = ds.outcome.rightCols(t);
  IntMatrix treated = ds.treated.rightCols(t);
  std::optional<Matrix> covariate;
  if (ds.covariate) covariate = ds.covariate->rightCols(t);
  win.panel = make_panel(ds.units, std::move(periods), std::move(outcome), std::move(treated),
                         std::move(covariate));
  return win;
}

const char* placebo_mode_name(PlaceboMode mode) {
  return mode == PlaceboMode::simultaneous ? "simultaneous" : "staggered";
}

int placebo_t0_from_ratio(double ratio, int n_periods) {
  if (!(ratio > 0.0) || !(ratio <= 1.0))
    raise(Errc::bad_config, "placebo ratio must lie in (0, 1], got " + format_double(ratio));
  if (n_periods < 3)
    raise(Errc::missing_post_window, "cannot place a placebo switch date in fewer than 3 periods");
  const int raw = static_cast<int>(std::ceil(ratio * n_periods));
  return std::clamp(raw, 2, n_periods - 1);
}

PanelDataset build_placebo_dataset(const PanelDataset& all_treated,
                                   const std::vector<int>& placebo_units, int placebo_t0,
                                   PlaceboMode mode, std::uint64_t seed) {
  const int n = all_treated.n_units();
  const int t = all_treated.n_periods();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < t; ++j)
      if (all_treated.treated(i, j) != 1)
        raise(Errc::window_not_all_treated,
              "placebo construction needs an all-treated panel; unit '" +
                  all_treated.units[static_cast<std::size_t>(i)] + "' is untreated at '" +
                  all_treated.periods[static_cast<std::size_t>(j)] + "'");
  if (placebo_units.empty()) raise(Errc::no_later_treated, "no units selected for placebo treatment");
  if (placebo_t0 < 2 || placebo_t0 > t - 1)
    raise(Errc::bad_pivot, "placebo switch date " + std::to_string(placebo_t0) +
                               " outside [2, " + std::to_string(t - 1) + "]");
  std::vector<bool> is_placebo(static_cast<std::size_t>(n), false);
  for (int u : placebo_units) {
    if (u < 0 || u >= n) raise(Errc::dimension_mismatch, "placebo unit index out of range");
    if (is_placebo[static_cast<std::size_t>(u)])
      raise(Errc::duplicate_cell, "placebo unit listed twice");
    is_placebo[static_cast<std::size_t>(u)] = true;
  }
  if (static_cast<int>(placebo_units.size()) == n)
    raise(Errc::no_always_treated, "placebo treatment must leave at least one unit untouched");

  const int jitter = std::max(1, static_cast<int>(std::lround(0.1 * t)));
  std::mt19937_64 rng = make_rng(seed, rng_stream::placebo);
  std::uniform_int_distribution<int> offset(-jitter, jitter);

  IntMatrix treated = all_treated.treated;
  for (int u : placebo_units) {
    int t0 = placebo_t0;
    if (mode == PlaceboMode::staggered) t0 = std::clamp(placebo_t0 + offset(rng), 2, t - 1);
    for (int j = 0; j < t0; ++j) treated(u, j) = 0;
  }
  std::optional<Matrix> covariate;
  if (all_treated.covariate) covariate = *all_treated.covariate;
  return make_panel(all_treated.units, all_treated.periods, all_treated.outcome,
                    std::move(treated), std::move(covariate));
}

}  // namespace retropanel
