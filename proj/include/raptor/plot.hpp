// SPDX-License-Identifier: Apache-2.0
//
// Minimal static SVG line/scatter plots for the study outputs.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

namespace raptor {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool markers = false;  // scatter instead of polyline
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  int width = 640;
  int height = 420;
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace detail

inline std::string render_svg(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  const double left = 70, right = 150, top = 40, bottom = 50;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;
  auto tx = [&](double x) { return spec.log_x ? std::log10(x) : x; };

  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.y[i]) || !std::isfinite(tx(s.x[i]))) continue;
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return left + (tx(x) - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(spec.width) + "\" height=\"" +
                    std::to_string(spec.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + detail::num(left) + "\" y=\"24\" font-size=\"14\">" + detail::svg_escape(spec.title) + "</text>\n";
  svg += "<rect x=\"" + detail::num(left) + "\" y=\"" + detail::num(top) + "\" width=\"" + detail::num(pw) +
         "\" height=\"" + detail::num(ph) + "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    const double gx = left + pw * k / 4.0, gy = top + ph * (1.0 - k / 4.0);
    svg += "<text x=\"" + detail::num(gx) + "\" y=\"" + detail::num(top + ph + 16) + "\" text-anchor=\"middle\">" +
           detail::num(spec.log_x ? std::pow(10.0, xv) : xv) + "</text>\n";
    svg += "<text x=\"" + detail::num(left - 6) + "\" y=\"" + detail::num(gy + 4) + "\" text-anchor=\"end\">" +
           detail::num(yv) + "</text>\n";
  }
  svg += "<text x=\"" + detail::num(left + pw / 2) + "\" y=\"" + detail::num(spec.height - 10.0) +
         "\" text-anchor=\"middle\">" + detail::svg_escape(spec.x_label) + "</text>\n";
  svg += "<text transform=\"translate(16," + detail::num(top + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         detail::svg_escape(spec.y_label) + "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const std::string color = colors[si % (sizeof colors / sizeof *colors)];
    std::string pts;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      if (s.markers) {
        svg += "<circle cx=\"" + detail::num(px(s.x[i])) + "\" cy=\"" + detail::num(py(s.y[i])) + "\" r=\"3\" fill=\"" +
               color + "\"/>\n";
      } else {
        pts += detail::num(px(s.x[i])) + "," + detail::num(py(s.y[i])) + " ";
      }
    }
    if (!s.markers && !pts.empty())
      svg += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(si);
    svg += "<rect x=\"" + detail::num(left + pw + 12) + "\" y=\"" + detail::num(ly - 9) + "\" width=\"12\" height=\"3\" fill=\"" +
           color + "\"/>\n";
    svg += "<text x=\"" + detail::num(left + pw + 30) + "\" y=\"" + detail::num(ly - 4) + "\">" +
           detail::svg_escape(s.label) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

inline void write_svg(const std::string& path, const PlotSpec& spec, const std::vector<PlotSeries>& series) {
  std::ofstream f(path);
  f << render_svg(spec, series);
}

}  // namespace raptor
