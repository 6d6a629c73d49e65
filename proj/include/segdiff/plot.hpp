// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace segdiff {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

/// Renders panels side by side as a standalone SVG document with axes, ticks,
/// polylines with point markers and a legend. The output depends only on the
/// inputs, so identical data gives identical bytes.
std::string render_svg(const std::vector<Panel>& panels);

/// Minimal CSV reader for numeric tables written by this tool: returns the
/// header names and rows of doubles. Non-numeric cells become NaN.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::vector<double> column(const std::string& name) const;
};
CsvTable parse_csv(const std::string& text);

}  // namespace segdiff
