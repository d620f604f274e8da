#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "retropanel/errors.hpp"
#include "retropanel/panel.hpp"

using namespace retropanel;

namespace {

// n_at always-treated rows on top, n_lt later-treated rows switching at t0.
PanelDataset small_panel(int n_at, int n_lt, int t, int t0) {
  const int n = n_at + n_lt;
  std::vector<std::string> units, periods;
  for (int i = 0; i < n; ++i) units.push_back("u" + std::to_string(10 + i));
  for (int j = 0; j < t; ++j) periods.push_back("p" + std::to_string(10 + j));
  Matrix y(n, t);
  IntMatrix w(n, t);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < t; ++j) {
      y(i, j) = std::sin(0.3 * i) + 0.1 * j;
      w(i, j) = (i < n_at || j >= t0) ? 1 : 0;
    }
  return make_panel(units, periods, y, w);
}

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::parse_error;
}

}  // namespace

TEST_CASE("make_panel derives groups and switch dates") {
  const PanelDataset ds = small_panel(2, 3, 6, 4);
  CHECK(ds.group[0] == Group::always_treated);
  CHECK(ds.group[1] == Group::always_treated);
  CHECK(ds.group[2] == Group::later_treated);
  CHECK(ds.first_treated[0] == 0);
  CHECK(ds.first_treated[4] == 4);
  CHECK(ds.later_treated_units() == std::vector<int>{2, 3, 4});
  CHECK(ds.always_treated_units() == std::vector<int>{0, 1});
}

TEST_CASE("csv round-trip preserves the panel") {
  PanelDataset ds = small_panel(2, 2, 5, 3);
  ds.covariate = Matrix::Random(4, 5);
  ds = make_panel(ds.units, ds.periods, ds.outcome, ds.treated, ds.covariate);
  const PanelDataset back = parse_panel_csv(panel_to_csv(ds));
  CHECK(back.units == ds.units);
  CHECK(back.periods == ds.periods);
  CHECK((back.outcome - ds.outcome).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.treated - ds.treated).cwiseAbs().maxCoeff() == 0);
  REQUIRE(back.has_covariate());
  CHECK((*back.covariate - *ds.covariate).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("csv rows may arrive in any order") {
  const std::string text =
      "unit,period,outcome,treated\n"
      "b,t2,4,1\n"
      "a,t1,1,1\n"
      "b,t1,3,0\n"
      "a,t2,2,1\n";
  const PanelDataset ds = parse_panel_csv(text);
  CHECK(ds.units == std::vector<std::string>{"a", "b"});
  CHECK(ds.periods == std::vector<std::string>{"t1", "t2"});
  CHECK(ds.outcome(1, 0) == 3.0);
  CHECK(ds.group[1] == Group::later_treated);
}

TEST_CASE("csv loader rejects malformed panels") {
  CHECK(code_of([] { parse_panel_csv(""); }) == Errc::parse_error);
  CHECK(code_of([] { parse_panel_csv("unit,period,outcome\na,t,1\n"); }) == Errc::parse_error);
  CHECK(code_of([] {
          parse_panel_csv("unit,period,outcome,treated\na,t1,1,1\na,t1,2,1\nb,t1,1,1\n");
        }) == Errc::duplicate_cell);
  CHECK(code_of([] {
          parse_panel_csv("unit,period,outcome,treated\na,t1,1,1\na,t2,1,1\nb,t1,1,1\n");
        }) == Errc::missing_cell);
  CHECK(code_of([] {
          parse_panel_csv("unit,period,outcome,treated\na,t1,1,2\n");
        }) == Errc::non_binary_treatment);
  CHECK(code_of([] {
          parse_panel_csv("unit,period,outcome,treated\na,t1,1,x\n");
        }) == Errc::non_binary_treatment);
  CHECK(code_of([] {
          parse_panel_csv("unit,period,outcome,treated\na,t1,oops,1\n");
        }) == Errc::parse_error);
}

TEST_CASE("treatment must be absorbing and every unit eventually treated") {
  const std::string off_again =
      "unit,period,outcome,treated\n"
      "a,t1,1,1\na,t2,1,0\na,t3,1,1\n"
      "b,t1,1,1\nb,t2,1,1\nb,t3,1,1\n";
  CHECK(code_of([&] { parse_panel_csv(off_again); }) == Errc::non_absorbing_treatment);

  const std::string never =
      "unit,period,outcome,treated\n"
      "a,t1,1,0\na,t2,1,0\n"
      "b,t1,1,1\nb,t2,1,1\n";
  CHECK(code_of([&] { parse_panel_csv(never); }) == Errc::never_treated_unit);
}

TEST_CASE("retrospective mask marks exactly the treated cells observed") {
  const PanelDataset ds = small_panel(2, 3, 6, 4);
  const ObservationMask mask = build_retrospective_mask(ds);
  CHECK(mask.n_missing == 3 * 4);
  CHECK(mask.n_observed == 2 * 6 + 3 * 2);
  for (int i = 0; i < ds.n_units(); ++i)
    for (int j = 0; j < ds.n_periods(); ++j)
      CHECK(mask.observed(i, j) == (ds.treated(i, j) == 1));
}

TEST_CASE("post window keeps the all-treated tail") {
  const PanelDataset ds = small_panel(2, 2, 8, 5);
  const PostWindow win = restrict_to_post_window(ds);
  CHECK(win.start_period == 5);
  CHECK(win.panel.n_periods() == 3);
  CHECK(win.panel.n_units() == 4);
  CHECK(win.later_treated == std::vector<int>{2, 3});
  CHECK((win.panel.treated.array() == 1).all());
  CHECK(win.panel.outcome(1, 0) == ds.outcome(1, 5));
  CHECK(win.panel.periods[0] == ds.periods[5]);
}

TEST_CASE("post window needs room for a switch date") {
  const PanelDataset ds = small_panel(2, 2, 8, 6);  // tail of 2 periods
  CHECK(code_of([&] { restrict_to_post_window(ds); }) == Errc::missing_post_window);
}

TEST_CASE("placebo switch date from ratio") {
  CHECK(placebo_t0_from_ratio(0.5, 10) == 5);
  CHECK(placebo_t0_from_ratio(0.8, 10) == 8);
  CHECK(placebo_t0_from_ratio(0.97, 10) == 9);   // ceil(9.7) = 10, clamped to T-1
  CHECK(placebo_t0_from_ratio(0.01, 10) == 2);   // floor of the range
  CHECK(placebo_t0_from_ratio(0.5, 60) == 30);
}

TEST_CASE("simultaneous placebo flips only the selected units") {
  PanelDataset all = small_panel(4, 0, 8, 0);
  const std::vector<int> chosen{1, 3};
  const PanelDataset placebo = build_placebo_dataset(all, chosen, 5, PlaceboMode::simultaneous, 0);
  CHECK((placebo.outcome - all.outcome).cwiseAbs().maxCoeff() == 0.0);
  CHECK(placebo.group[0] == Group::always_treated);
  CHECK(placebo.group[1] == Group::later_treated);
  CHECK(placebo.first_treated[1] == 5);
  CHECK(placebo.first_treated[3] == 5);
  for (int j = 0; j < 8; ++j) CHECK(placebo.treated(2, j) == 1);
}

TEST_CASE("staggered placebo jitters within a tenth of the window") {
  PanelDataset all = small_panel(6, 0, 20, 0);
  const std::vector<int> chosen{0, 1, 2};
  const PanelDataset a = build_placebo_dataset(all, chosen, 10, PlaceboMode::staggered, 9);
  const PanelDataset b = build_placebo_dataset(all, chosen, 10, PlaceboMode::staggered, 9);
  const int spread = std::max(1, static_cast<int>(std::lround(0.1 * 20)));
  bool moved = false;
  for (int u : chosen) {
    CHECK(a.first_treated[u] >= 10 - spread);
    CHECK(a.first_treated[u] <= 10 + spread);
    CHECK(a.first_treated[u] == b.first_treated[u]);  // same seed, same dates
    if (a.first_treated[u] != 10) moved = true;
  }
  bool any_differs = false;
  for (int s = 0; s < 20 && !any_differs; ++s) {
    const PanelDataset c = build_placebo_dataset(all, chosen, 10, PlaceboMode::staggered,
                                                 static_cast<std::uint64_t>(100 + s));
    for (int u : chosen)
      if (c.first_treated[u] != a.first_treated[u]) any_differs = true;
  }
  CHECK(any_differs);
  (void)moved;
}

TEST_CASE("placebo construction guards its inputs") {
  PanelDataset all = small_panel(4, 0, 8, 0);
  CHECK(code_of([&] {
          build_placebo_dataset(all, {0, 1, 2, 3}, 5, PlaceboMode::simultaneous, 0);
        }) == Errc::no_always_treated);
  CHECK(code_of([&] {
          build_placebo_dataset(all, {}, 5, PlaceboMode::simultaneous, 0);
        }) == Errc::no_later_treated);
  CHECK(code_of([&] {
          build_placebo_dataset(all, {0}, 8, PlaceboMode::simultaneous, 0);
        }) == Errc::bad_pivot);
  PanelDataset not_all = small_panel(2, 2, 8, 4);
  CHECK(code_of([&] {
          build_placebo_dataset(not_all, {2}, 5, PlaceboMode::simultaneous, 0);
        }) == Errc::window_not_all_treated);
}
