#pragma once

// Minimal SVG line chart: axes with ticks, one polyline per series, legend.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace specsense::plot {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (x, y), drawn in order
};

struct ChartOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  double y_min = 0.0;
  double y_max = 1.0;
  int width = 720;
  int height = 480;
};

namespace detail {

inline std::string fmt(double v, int prec = 2) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

inline std::string escape(const std::string& s) {
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

}  // namespace detail

inline std::string line_chart(const std::vector<Series>& series, const ChartOptions& opt) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  const double left = 70, right = 150, top = 40, bottom = 60;
  const double pw = opt.width - left - right;
  const double ph = opt.height - top - bottom;

  double x_min = INFINITY, x_max = -INFINITY;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
    }
  }
  if (!std::isfinite(x_min)) x_min = 0.0, x_max = 1.0;
  if (x_max == x_min) x_min -= 0.5, x_max += 0.5;
  const double y_span = opt.y_max - opt.y_min;

  auto sx = [&](double x) { return left + (x - x_min) / (x_max - x_min) * pw; };
  auto sy = [&](double y) { return top + (opt.y_max - y) / y_span * ph; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(opt.width) +
         "\" height=\"" + std::to_string(opt.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + detail::fmt(left + pw / 2, 1) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         detail::escape(opt.title) + "</text>\n";

  // Axes and ticks.
  svg += "<g stroke=\"black\" fill=\"none\">\n";
  svg += "<line x1=\"" + detail::fmt(left) + "\" y1=\"" + detail::fmt(top + ph) + "\" x2=\"" +
         detail::fmt(left + pw) + "\" y2=\"" + detail::fmt(top + ph) + "\"/>\n";
  svg += "<line x1=\"" + detail::fmt(left) + "\" y1=\"" + detail::fmt(top) + "\" x2=\"" +
         detail::fmt(left) + "\" y2=\"" + detail::fmt(top + ph) + "\"/>\n";
  svg += "</g>\n";
  const int ticks = 5;
  for (int i = 0; i <= ticks; ++i) {
    const double xv = x_min + (x_max - x_min) * i / ticks;
    const double yv = opt.y_min + y_span * i / ticks;
    svg += "<line x1=\"" + detail::fmt(sx(xv)) + "\" y1=\"" + detail::fmt(top + ph) + "\" x2=\"" +
           detail::fmt(sx(xv)) + "\" y2=\"" + detail::fmt(top + ph + 5) + "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + detail::fmt(sx(xv)) + "\" y=\"" + detail::fmt(top + ph + 20) +
           "\" text-anchor=\"middle\">" + detail::fmt(xv, 1) + "</text>\n";
    svg += "<line x1=\"" + detail::fmt(left - 5) + "\" y1=\"" + detail::fmt(sy(yv)) + "\" x2=\"" +
           detail::fmt(left + pw) + "\" y2=\"" + detail::fmt(sy(yv)) +
           "\" stroke=\"#dddddd\"/>\n";
    svg += "<text x=\"" + detail::fmt(left - 8) + "\" y=\"" + detail::fmt(sy(yv) + 4) +
           "\" text-anchor=\"end\">" + detail::fmt(yv, 1) + "</text>\n";
  }
  svg += "<text x=\"" + detail::fmt(left + pw / 2) + "\" y=\"" + detail::fmt(opt.height - 15.0) +
         "\" text-anchor=\"middle\">" + detail::escape(opt.x_label) + "</text>\n";
  svg += "<text transform=\"translate(20," + detail::fmt(top + ph / 2) +
         ") rotate(-90)\" text-anchor=\"middle\">" + detail::escape(opt.y_label) + "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kColors[k % std::size(kColors)];
    std::string pts;
    for (const auto& [x, y] : series[k].points) {
      if (!pts.empty()) pts += ' ';
      pts += detail::fmt(sx(x)) + "," + detail::fmt(sy(y));
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    const double ly = top + 10 + 18.0 * static_cast<double>(k);
    svg += "<line x1=\"" + detail::fmt(left + pw + 15) + "\" y1=\"" + detail::fmt(ly) + "\" x2=\"" +
           detail::fmt(left + pw + 40) + "\" y2=\"" + detail::fmt(ly) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + detail::fmt(left + pw + 46) + "\" y=\"" + detail::fmt(ly + 4) + "\">" +
           detail::escape(series[k].label) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace specsense::plot
