#pragma once

// Minimal SVG line/scatter plots for the CLI reports.

#include <string>
#include <vector>

namespace syncsde::svg {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool markers = false;  // draw points as well as the polyline
  bool line = true;
};

struct Plot {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
};

// Non-finite points (and non-positive ones on log axes) are skipped.
std::string render(const Plot& plot, const std::vector<Series>& series);

}  // namespace syncsde::svg
