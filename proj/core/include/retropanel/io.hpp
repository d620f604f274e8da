#pragma once

#include <string>
#include <vector>

#include "retropanel/dgp.hpp"
#include "retropanel/errors.hpp"
#include "retropanel/inference.hpp"
#include "retropanel/pipeline.hpp"

namespace retropanel {

// Writes via a temp file in the same directory plus rename, so readers
// never see a partial file.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// CSV and JSON renderings of the result types. All numbers go through
// format_double, so output is byte stable for a fixed seed.
std::string effects_to_csv(const EffectEstimate& estimate,
                           const std::vector<std::string>& period_labels);
std::string effects_to_csv(const EffectSeries& series,
                           const std::vector<std::string>& period_labels);
std::string matrix_to_csv(const Matrix& m, const std::vector<std::string>& row_labels,
                          const std::vector<std::string>& col_labels,
                          const std::string& corner = "unit");
std::string trends_to_csv(const LatentTrends& trends,
                          const std::vector<std::string>& period_labels);
std::string placebo_to_csv(const std::vector<PlaceboCell>& cells);
std::string rmse_to_csv(const std::vector<RmseCell>& cells);

std::string fit_to_json(const McFit& fit, int indent = 2);
std::string weights_diagnostics_to_json(const PropensityFit& prop, const WeightMatrix& weights,
                                        const ObservationMask& mask, int indent = 2);
std::string ground_truth_to_json(const SimulatedPanel& sim, int indent = 2);
std::string error_to_json(Errc code, const std::string& message);

}  // namespace retropanel
