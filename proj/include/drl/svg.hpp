#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace drl {

struct PlotSeries {
  std::string name;
  std::vector<double> xs;  // ignored by bar charts
  std::vector<double> ys;
};

enum class PlotKind { Line, Bar };

struct PlotSpec {
  PlotKind kind = PlotKind::Line;
  std::string title;
  std::string x_label;
  std::string y_label;
  // Bar charts: one label per group. Line charts: optional tick labels placed
  // at x = 0, 1, 2, ...
  std::vector<std::string> categories;
};

// Fixed canvas geometry.
struct PlotFrame {
  static constexpr double kWidth = 640.0;
  static constexpr double kHeight = 400.0;
  static constexpr double kLeft = 70.0;
  static constexpr double kRight = 170.0;  // legend column
  static constexpr double kTop = 40.0;
  static constexpr double kBottom = 60.0;
  static constexpr double kPlotWidth = kWidth - kLeft - kRight;
  static constexpr double kPlotHeight = kHeight - kTop - kBottom;
};

// Standalone SVG document. Line charts map [min x, max x] and [min y, max y]
// of the data onto the plot area (degenerate ranges widened by 0.5 each way);
// bar charts use [min(0, min y), max(0, max y)].
std::string render_svg(const PlotSpec& spec, const std::vector<PlotSeries>& series);

// Throws std::invalid_argument on empty input and std::runtime_error when the
// file cannot be written.
void emit_svg_plot(const PlotSpec& spec, const std::vector<PlotSeries>& series, const std::filesystem::path& path);

}  // namespace drl
