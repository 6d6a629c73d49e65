// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "segdiff/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "segdiff/errors.hpp"

namespace segdiff {

namespace {

constexpr double kPanelWidth = 420, kPanelHeight = 300;
constexpr double kLeft = 64, kRight = 16, kTop = 36, kBottom = 48;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
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

// Round step (1, 2 or 5 times a power of ten) giving about five ticks.
double tick_step(double span) {
  if (span <= 0) return 1;
  const double raw = span / 5;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  return mag * (r < 1.5 ? 1 : r < 3.5 ? 2 : r < 7.5 ? 5 : 10);
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (lo > hi) lo = 0, hi = 1;
    if (lo == hi) {
      const double pad = lo == 0 ? 1 : std::abs(lo) * 0.1;
      lo -= pad;
      hi += pad;
    }
    const double step = tick_step(hi - lo);
    lo = std::floor(lo / step) * step;
    hi = std::ceil(hi / step) * step;
  }
};

void draw_panel(std::ostringstream& svg, const Panel& p, double ox) {
  Range xr, yr;
  for (const auto& s : p.series) {
    if (s.x.size() != s.y.size()) throw DimensionError("plot series '" + s.label + "' has mismatched x/y");
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  xr.finish();
  yr.finish();
  const double w = kPanelWidth - kLeft - kRight, h = kPanelHeight - kTop - kBottom;
  const double x0 = ox + kLeft, y0 = kTop;
  auto sx = [&](double v) { return x0 + (v - xr.lo) / (xr.hi - xr.lo) * w; };
  auto sy = [&](double v) { return y0 + h - (v - yr.lo) / (yr.hi - yr.lo) * h; };

  svg << "<g>\n";
  svg << "<text x=\"" << coord(x0 + w / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << escape(p.title) << "</text>\n";
  svg << "<rect x=\"" << coord(x0) << "\" y=\"" << coord(y0) << "\" width=\"" << coord(w)
      << "\" height=\"" << coord(h) << "\" fill=\"none\" stroke=\"#000\"/>\n";

  const double xs = tick_step(xr.hi - xr.lo), ys = tick_step(yr.hi - yr.lo);
  for (int i = 0; xr.lo + i * xs <= xr.hi + xs * 1e-9; ++i) {
    const double v = xr.lo + i * xs, x = sx(v);
    svg << "<line x1=\"" << coord(x) << "\" y1=\"" << coord(y0 + h) << "\" x2=\"" << coord(x)
        << "\" y2=\"" << coord(y0 + h + 5) << "\" stroke=\"#000\"/>"
        << "<text x=\"" << coord(x) << "\" y=\"" << coord(y0 + h + 18)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << num(v) << "</text>\n";
  }
  for (int i = 0; yr.lo + i * ys <= yr.hi + ys * 1e-9; ++i) {
    const double v = yr.lo + i * ys, y = sy(v);
    svg << "<line x1=\"" << coord(x0 - 5) << "\" y1=\"" << coord(y) << "\" x2=\"" << coord(x0)
        << "\" y2=\"" << coord(y) << "\" stroke=\"#000\"/>"
        << "<text x=\"" << coord(x0 - 8) << "\" y=\"" << coord(y + 4)
        << "\" text-anchor=\"end\" font-size=\"11\">" << num(v) << "</text>\n";
  }
  svg << "<text x=\"" << coord(x0 + w / 2) << "\" y=\"" << coord(kPanelHeight - 8)
      << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(p.x_label) << "</text>\n";
  svg << "<text transform=\"translate(" << coord(ox + 16) << "," << coord(y0 + h / 2)
      << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"12\">" << escape(p.y_label) << "</text>\n";

  for (std::size_t k = 0; k < p.series.size(); ++k) {
    const auto& s = p.series[k];
    const char* color = kColors[k % std::size(kColors)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i) svg << ' ';
      svg << coord(sx(s.x[i])) << ',' << coord(sy(s.y[i]));
    }
    svg << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      svg << "<circle cx=\"" << coord(sx(s.x[i])) << "\" cy=\"" << coord(sy(s.y[i]))
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = y0 + 14 + 16 * static_cast<double>(k);
    svg << "<line x1=\"" << coord(x0 + 8) << "\" y1=\"" << coord(ly - 4) << "\" x2=\"" << coord(x0 + 28)
        << "\" y2=\"" << coord(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>"
        << "<text x=\"" << coord(x0 + 32) << "\" y=\"" << coord(ly) << "\" font-size=\"11\">"
        << escape(s.label) << "</text>\n";
  }
  svg << "</g>\n";
}

}  // namespace

std::string render_svg(const std::vector<Panel>& panels) {
  const double total_w = kPanelWidth * static_cast<double>(std::max<std::size_t>(1, panels.size()));
  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << coord(total_w) << "\" height=\""
      << coord(kPanelHeight) << "\" viewBox=\"0 0 " << coord(total_w) << ' ' << coord(kPanelHeight)
      << "\" font-family=\"sans-serif\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i) draw_panel(svg, panels[i], kPanelWidth * static_cast<double>(i));
  svg << "</svg>\n";
  return svg.str();
}

std::vector<double> CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ConfigError("csv has no column '" + name + "'");
  const auto c = static_cast<std::size_t>(it - header.begin());
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(c < r.size() ? r[c] : std::nan(""));
  return out;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    return cells;
  };
  if (!std::getline(in, line)) return t;
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& c : split(line)) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      row.push_back(end != c.c_str() && *end == '\0' ? v : std::nan(""));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace segdiff
