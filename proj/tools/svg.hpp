#pragma once

#include <string>
#include <vector>

namespace hyperada::cli {

struct Series {
  std::string name;
  std::vector<double> y;  // plotted at x = 0, 1, 2, ...
};

/// Standalone SVG line chart. Numbers are printed with fixed precision so the
/// output bytes depend only on the data.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series);

}  // namespace hyperada::cli
