#pragma once

#include <string>
#include <vector>

namespace somnus::plot {

struct Series {
  std::string label;
  std::vector<double> x, y;
  std::string color = "#1f6fb2";
};

// Self-contained line chart with auto-scaled axes and a legend. Output is
// deterministic for identical input.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label,
                           const std::vector<Series>& series, int width = 860,
                           int height = 500);

}  // namespace somnus::plot
