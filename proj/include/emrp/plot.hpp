#pragma once

// Static SVG figures: metric heatmaps for study results and interval dot
// plots for estimates.

#include <span>
#include <string>
#include <vector>

#include "emrp/data_model.hpp"
#include "emrp/simulation.hpp"

namespace emrp::plot {

// Parses a results.csv written by the study. Throws ValidationError on a
// malformed file.
std::vector<sim::MetricRow> read_results_csv(const std::string& path);

// One method x estimand heatmap per metric (bias, rmse, ci_length, coverage).
// Returns the written paths. Throws ValidationError when `rows` is empty.
std::vector<std::string> metric_heatmaps(std::span<const sim::MetricRow> rows, const std::string& dir);

// Point estimates with 95% intervals, one panel row per estimand and one
// marker per method.
void interval_plot(std::span<const EstimateSummary> estimates, const std::string& path);

}  // namespace emrp::plot
