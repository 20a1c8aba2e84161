#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "suq/results.hpp"

namespace suq {

class PlotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One aggregated point: rows of a metric grouped by (split, step).
struct ChartPoint {
  std::string series;
  std::int64_t x = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  int count = 0;
};

// Sorted distinct metric names.
std::vector<std::string> available_metrics(const std::vector<ResultRow>& rows);

// Points ordered by series then x. Null values are skipped.
std::vector<ChartPoint> aggregate_metric(const std::vector<ResultRow>& rows, const std::string& metric);

// Header `series,x,mean,min,max,count`, LF line endings.
std::string chart_csv(const std::vector<ChartPoint>& points);
// A line chart with one <circle class="marker"> per point when some series
// has several x values, otherwise a bar chart with min/max whiskers.
std::string chart_svg(const std::vector<ChartPoint>& points, const std::string& title);

struct ChartFiles {
  std::string metric;
  std::filesystem::path csv;
  std::filesystem::path svg;
};

// Reads every JSONL file (fail-closed), then writes <metric>.csv and
// <metric>.svg into out_dir for each selected metric.
std::vector<ChartFiles> emit_plots(const std::vector<std::filesystem::path>& result_files,
                                   const std::vector<std::string>& metrics,
                                   const std::filesystem::path& out_dir);

}  // namespace suq
