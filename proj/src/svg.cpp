#include "drl/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "drl/checkpoint.hpp"

namespace drl {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string label_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo;
  double hi;
};

Range widen(double lo, double hi) {
  if (hi - lo <= 0.0) return {lo - 0.5, hi + 0.5};
  return {lo, hi};
}

std::string text(double x, double y, const std::string& body, const char* anchor, int size = 12,
                 const std::string& extra = "") {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" + std::to_string(size) +
         "\" text-anchor=\"" + anchor + "\"" + extra + ">" + escape(body) + "</text>\n";
}

}  // namespace

std::string render_svg(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
  using F = PlotFrame;
  if (series.empty()) throw std::invalid_argument("svg: no series");
  double ylo = std::numeric_limits<double>::infinity(), yhi = -ylo;
  double xlo = ylo, xhi = -ylo;
  std::size_t longest = 0;
  for (const auto& s : series) {
    if (s.ys.empty()) throw std::invalid_argument("svg: series '" + s.name + "' is empty");
    if (spec.kind == PlotKind::Line && s.xs.size() != s.ys.size())
      throw std::invalid_argument("svg: series '" + s.name + "' has mismatched x/y lengths");
    for (double y : s.ys) ylo = std::min(ylo, y), yhi = std::max(yhi, y);
    for (double x : s.xs) xlo = std::min(xlo, x), xhi = std::max(xhi, x);
    longest = std::max(longest, s.ys.size());
  }
  if (spec.kind == PlotKind::Bar) ylo = std::min(ylo, 0.0), yhi = std::max(yhi, 0.0);
  const Range yr = widen(ylo, yhi);
  const Range xr = spec.kind == PlotKind::Line ? widen(xlo, xhi) : Range{0.0, 1.0};
  auto px = [&](double x) { return F::kLeft + (x - xr.lo) / (xr.hi - xr.lo) * F::kPlotWidth; };
  auto py = [&](double y) { return F::kTop + F::kPlotHeight - (y - yr.lo) / (yr.hi - yr.lo) * F::kPlotHeight; };

  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(F::kWidth) + "\" height=\"" + num(F::kHeight) +
         "\" viewBox=\"0 0 " + num(F::kWidth) + " " + num(F::kHeight) + "\">\n";
  out += "<rect x=\"0\" y=\"0\" width=\"" + num(F::kWidth) + "\" height=\"" + num(F::kHeight) + "\" fill=\"white\"/>\n";
  out += text(F::kLeft + F::kPlotWidth / 2, 22, spec.title, "middle", 14);

  // Axes and y ticks.
  const double x0 = F::kLeft, x1 = F::kLeft + F::kPlotWidth;
  const double y0 = F::kTop + F::kPlotHeight, y1 = F::kTop;
  out += "<g class=\"axes\" stroke=\"black\" stroke-width=\"1\">\n";
  out += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y0) + "\"/>\n";
  out += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(y1) + "\"/>\n";
  out += "</g>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = yr.lo + (yr.hi - yr.lo) * t / 4.0;
    out += "<line x1=\"" + num(x0 - 4) + "\" y1=\"" + num(py(v)) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(py(v)) +
           "\" stroke=\"black\"/>\n";
    out += text(x0 - 6, py(v) + 4, label_num(v), "end", 10);
  }
  out += text(F::kLeft + F::kPlotWidth / 2, F::kHeight - 12, spec.x_label, "middle");
  out += text(16, F::kTop + F::kPlotHeight / 2, spec.y_label, "middle", 12,
              " transform=\"rotate(-90 16 " + num(F::kTop + F::kPlotHeight / 2) + ")\"");

  if (spec.kind == PlotKind::Line) {
    if (!spec.categories.empty()) {
      for (std::size_t i = 0; i < spec.categories.size(); ++i)
        out += text(px(static_cast<double>(i)), y0 + 16, spec.categories[i], "middle", 10);
    } else {
      for (int t = 0; t <= 4; ++t) {
        const double v = xr.lo + (xr.hi - xr.lo) * t / 4.0;
        out += text(px(v), y0 + 16, label_num(v), "middle", 10);
      }
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
      const char* colour = kPalette[s % std::size(kPalette)];
      out += "<g class=\"series\" data-name=\"" + escape(series[s].name) + "\">\n";
      if (series[s].ys.size() > 1) {
        out += "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < series[s].ys.size(); ++i)
          out += (i ? " " : "") + num(px(series[s].xs[i])) + "," + num(py(series[s].ys[i]));
        out += "\"/>\n";
      }
      for (std::size_t i = 0; i < series[s].ys.size(); ++i)
        out += "<circle cx=\"" + num(px(series[s].xs[i])) + "\" cy=\"" + num(py(series[s].ys[i])) +
               "\" r=\"3\" fill=\"" + colour + "\"/>\n";
      out += "</g>\n";
    }
  } else {
    const std::size_t groups = std::max(longest, spec.categories.size());
    const double group_w = F::kPlotWidth / static_cast<double>(groups);
    const double bar_w = group_w * 0.8 / static_cast<double>(series.size());
    for (std::size_t g = 0; g < spec.categories.size(); ++g)
      out += text(F::kLeft + (static_cast<double>(g) + 0.5) * group_w, y0 + 16, spec.categories[g], "middle", 10);
    const double base = py(0.0);
    for (std::size_t s = 0; s < series.size(); ++s) {
      const char* colour = kPalette[s % std::size(kPalette)];
      out += "<g class=\"series\" data-name=\"" + escape(series[s].name) + "\">\n";
      for (std::size_t g = 0; g < series[s].ys.size(); ++g) {
        const double x = F::kLeft + static_cast<double>(g) * group_w + 0.1 * group_w + static_cast<double>(s) * bar_w;
        const double top = py(series[s].ys[g]);
        out += "<rect x=\"" + num(x) + "\" y=\"" + num(std::min(top, base)) + "\" width=\"" + num(bar_w) +
               "\" height=\"" + num(std::abs(base - top)) + "\" fill=\"" + colour + "\"/>\n";
      }
      out += "</g>\n";
    }
  }

  // Legend.
  out += "<g class=\"legend\">\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double ly = F::kTop + 10 + 18.0 * static_cast<double>(s);
    const double lx = F::kLeft + F::kPlotWidth + 15;
    out += "<rect x=\"" + num(lx) + "\" y=\"" + num(ly - 9) + "\" width=\"10\" height=\"10\" fill=\"" +
           kPalette[s % std::size(kPalette)] + "\"/>\n";
    out += text(lx + 15, ly, series[s].name, "start", 11);
  }
  out += "</g>\n</svg>\n";
  return out;
}

void emit_svg_plot(const PlotSpec& spec, const std::vector<PlotSeries>& series, const std::filesystem::path& path) {
  write_file(path, render_svg(spec, series));
}

}  // namespace drl
