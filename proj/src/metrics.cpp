// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "segdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace segdiff {

namespace {

struct Plane {
  std::vector<std::uint8_t> px;
  Index h = 0, w = 0;
};

Plane to_plane(const Tensor& t, const char* what) {
  if (!t.defined() || t.rank() < 2) throw DimensionError(std::string(what) + " must be at least 2-D");
  Plane p;
  p.h = t.dim(t.rank() - 2);
  p.w = t.dim(t.rank() - 1);
  if (p.h * p.w != t.numel()) {
    throw DimensionError(std::string(what) + " must hold a single plane, got " + shape_string(t.shape()));
  }
  p.px.resize(static_cast<std::size_t>(t.numel()));
  for (Index i = 0; i < t.numel(); ++i) {
    const double v = t.values()[i];
    if (v != 0.0 && v != 1.0) throw ConfigError(std::string(what) + " is not a binary mask");
    p.px[static_cast<std::size_t>(i)] = v == 1.0;
  }
  return p;
}

std::pair<Plane, Plane> to_planes(const Tensor& pred, const Tensor& gt) {
  Plane a = to_plane(pred, "prediction"), b = to_plane(gt, "ground truth");
  if (a.h != b.h || a.w != b.w) {
    throw DimensionError("prediction " + shape_string(pred.shape()) + " and ground truth " +
                         shape_string(gt.shape()) + " differ in size");
  }
  return {std::move(a), std::move(b)};
}

double ratio_or_one(std::int64_t num, std::int64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionCounts confusion(const Tensor& pred, const Tensor& gt) {
  const auto [p, g] = to_planes(pred, gt);
  ConfusionCounts c;
  for (std::size_t i = 0; i < p.px.size(); ++i) {
    if (p.px[i] && g.px[i]) ++c.tp;
    else if (p.px[i]) ++c.fp;
    else if (g.px[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double iou(const Tensor& pred, const Tensor& gt) {
  const ConfusionCounts c = confusion(pred, gt);
  return ratio_or_one(c.tp, c.tp + c.fp + c.fn);
}

double miou(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts) {
  if (preds.size() != gts.size() || preds.empty()) {
    throw DimensionError("miou: need equally many (and at least one) predictions and masks");
  }
  double total = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += iou(preds[i], gts[i]);
  return total / static_cast<double>(preds.size());
}

double f1(const Tensor& pred, const Tensor& gt) {
  const ConfusionCounts c = confusion(pred, gt);
  return ratio_or_one(2 * c.tp, 2 * c.tp + c.fp + c.fn);
}

Components label_components(const std::vector<std::uint8_t>& mask, Index height, Index width) {
  Components out;
  out.labels.assign(mask.size(), 0);
  std::vector<Index> stack;
  for (Index start = 0; start < height * width; ++start) {
    if (!mask[start] || out.labels[start]) continue;
    const int label = ++out.count;
    out.labels[start] = label;
    stack.push_back(start);
    while (!stack.empty()) {
      const Index i = stack.back();
      stack.pop_back();
      const Index y = i / width, x = i % width;
      const Index nbrs[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : nbrs) {
        if (n[0] < 0 || n[1] < 0 || n[0] >= height || n[1] >= width) continue;
        const Index j = n[0] * width + n[1];
        if (mask[j] && !out.labels[j]) {
          out.labels[j] = label;
          stack.push_back(j);
        }
      }
    }
  }
  return out;
}

double wcov(const Tensor& pred, const Tensor& gt) {
  const auto [p, g] = to_planes(pred, gt);
  const Components gc = label_components(g.px, g.h, g.w);
  const Components pc = label_components(p.px, p.h, p.w);
  if (gc.count == 0) return pc.count == 0 ? 1.0 : 0.0;

  const auto ng = static_cast<std::size_t>(gc.count) + 1, np = static_cast<std::size_t>(pc.count) + 1;
  std::vector<std::int64_t> garea(ng, 0), parea(np, 0), inter(ng * np, 0);
  for (std::size_t i = 0; i < g.px.size(); ++i) {
    const auto a = static_cast<std::size_t>(gc.labels[i]), b = static_cast<std::size_t>(pc.labels[i]);
    ++garea[a];
    ++parea[b];
    if (a && b) ++inter[a * np + b];
  }
  std::int64_t total_area = 0;
  double weighted = 0;
  for (std::size_t a = 1; a < ng; ++a) {
    double best = 0;
    for (std::size_t b = 1; b < np; ++b) {
      const std::int64_t in = inter[a * np + b];
      if (in == 0) continue;
      best = std::max(best, static_cast<double>(in) / static_cast<double>(garea[a] + parea[b] - in));
    }
    weighted += best * static_cast<double>(garea[a]);
    total_area += garea[a];
  }
  return weighted / static_cast<double>(total_area);
}

std::vector<std::uint8_t> boundary_pixels(const std::vector<std::uint8_t>& mask, Index height,
                                          Index width) {
  std::vector<std::uint8_t> out(mask.size(), 0);
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      if (!mask[y * width + x]) continue;
      const bool edge = (y > 0 && !mask[(y - 1) * width + x]) ||
                        (y + 1 < height && !mask[(y + 1) * width + x]) ||
                        (x > 0 && !mask[y * width + x - 1]) ||
                        (x + 1 < width && !mask[y * width + x + 1]);
      out[y * width + x] = edge;
    }
  }
  return out;
}

namespace {

// 1-D lower envelope of parabolas (Felzenszwalb & Huttenlocher).
void edt_1d(const double* f, double* d, Index n, std::vector<Index>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0);
  Index k = -1;
  for (Index q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    while (true) {
      const Index p = v[static_cast<std::size_t>(k)];
      s = ((f[q] + static_cast<double>(q * q)) - (f[p] + static_cast<double>(p * p))) /
          (2.0 * static_cast<double>(q - p));
      if (s <= z[static_cast<std::size_t>(k)] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    if (s <= z[static_cast<std::size_t>(k)]) {
      // k == 0 and the new parabola dominates everywhere.
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = inf;
  }
  if (k < 0) {
    std::fill(d, d + n, inf);
    return;
  }
  Index j = 0;
  for (Index q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j) + 1] < static_cast<double>(q)) ++j;
    const Index p = v[static_cast<std::size_t>(j)];
    d[q] = static_cast<double>((q - p) * (q - p)) + f[p];
  }
}

}  // namespace

std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& sites, Index height,
                                               Index width) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) grid[i] = sites[i] ? 0.0 : inf;
  std::vector<Index> v;
  std::vector<double> z;
  const Index n = std::max(height, width);
  std::vector<double> f(static_cast<std::size_t>(n)), d(static_cast<std::size_t>(n));
  for (Index x = 0; x < width; ++x) {
    for (Index y = 0; y < height; ++y) f[y] = grid[y * width + x];
    edt_1d(f.data(), d.data(), height, v, z);
    for (Index y = 0; y < height; ++y) grid[y * width + x] = d[y];
  }
  for (Index y = 0; y < height; ++y) {
    edt_1d(grid.data() + y * width, d.data(), width, v, z);
    std::copy(d.begin(), d.begin() + width, grid.begin() + y * width);
  }
  return grid;
}

namespace {

struct BoundaryMatch {
  std::vector<double> pred_to_gt, gt_to_pred;  // squared distances per boundary pixel
  bool pred_empty, gt_empty;
};

BoundaryMatch match_boundaries(const Tensor& pred, const Tensor& gt) {
  const auto [p, g] = to_planes(pred, gt);
  const auto pb = boundary_pixels(p.px, p.h, p.w), gb = boundary_pixels(g.px, g.h, g.w);
  const auto dist_to_g = squared_distance_transform(gb, g.h, g.w);
  const auto dist_to_p = squared_distance_transform(pb, p.h, p.w);
  BoundaryMatch m;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    if (pb[i]) m.pred_to_gt.push_back(dist_to_g[i]);
    if (gb[i]) m.gt_to_pred.push_back(dist_to_p[i]);
  }
  m.pred_empty = m.pred_to_gt.empty();
  m.gt_empty = m.gt_to_pred.empty();
  return m;
}

double f_at(const BoundaryMatch& m, double distance) {
  if (m.pred_empty && m.gt_empty) return 1.0;
  if (m.pred_empty || m.gt_empty) return 0.0;
  const double r2 = distance * distance;
  const auto within = [r2](const std::vector<double>& d) {
    return static_cast<double>(std::count_if(d.begin(), d.end(), [r2](double x) { return x <= r2; }));
  };
  const double precision = within(m.pred_to_gt) / static_cast<double>(m.pred_to_gt.size());
  const double recall = within(m.gt_to_pred) / static_cast<double>(m.gt_to_pred.size());
  return precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

}  // namespace

double fbound_at(const Tensor& pred, const Tensor& gt, double distance) {
  return f_at(match_boundaries(pred, gt), distance);
}

double fbound(const Tensor& pred, const Tensor& gt, int max_distance) {
  if (max_distance < 1) throw ConfigError("fbound: max_distance must be >= 1");
  const BoundaryMatch m = match_boundaries(pred, gt);
  double total = 0;
  for (int d = 1; d <= max_distance; ++d) total += f_at(m, d);
  return total / max_distance;
}

CalibrationReport calibration_score(const std::vector<Tensor>& maps, const std::vector<Tensor>& gts) {
  if (maps.size() != gts.size()) throw DimensionError("calibration: maps and masks differ in count");
  CalibrationReport r;
  for (int k = 0; k <= 10; ++k) r.bin_edges[static_cast<std::size_t>(k)] = k / 10.0;
  std::array<double, 10> conf_sum{}, pos_sum{};
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const Plane g = to_plane(gts[i], "ground truth");
    if (maps[i].numel() != static_cast<Index>(g.px.size())) {
      throw DimensionError("calibration: map " + shape_string(maps[i].shape()) +
                           " does not match its mask");
    }
    for (Index j = 0; j < maps[i].numel(); ++j) {
      const double p = maps[i].values()[j];
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("calibration: probabilities must lie in [0, 1]");
      auto bin = static_cast<std::size_t>(std::min(9, static_cast<int>(std::floor(p * 10.0))));
      if (p < r.bin_edges[bin]) --bin;
      else if (bin < 9 && p >= r.bin_edges[bin + 1]) ++bin;
      ++r.bins[bin].count;
      conf_sum[bin] += p;
      pos_sum[bin] += g.px[static_cast<std::size_t>(j)];
    }
  }
  int nonempty = 0;
  std::int64_t total = 0;
  double gap_sum = 0, weighted_sum = 0;
  for (std::size_t b = 0; b < 10; ++b) {
    auto& bin = r.bins[b];
    if (bin.count == 0) continue;
    bin.mean_confidence = conf_sum[b] / static_cast<double>(bin.count);
    bin.positive_fraction = pos_sum[b] / static_cast<double>(bin.count);
    const double gap = bin.mean_confidence - bin.positive_fraction;
    gap_sum += gap * gap;
    weighted_sum += gap * gap * static_cast<double>(bin.count);
    ++nonempty;
    total += bin.count;
  }
  r.score = nonempty ? gap_sum / nonempty : 0.0;
  r.weighted_score = total ? weighted_sum / static_cast<double>(total) : 0.0;
  return r;
}

void to_json(nlohmann::json& j, const CalibrationReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (std::size_t b = 0; b < r.bins.size(); ++b) {
    bins.push_back({{"lower", r.bin_edges[b]},
                    {"upper", r.bin_edges[b + 1]},
                    {"count", r.bins[b].count},
                    {"mean_confidence", r.bins[b].mean_confidence},
                    {"positive_fraction", r.bins[b].positive_fraction}});
  }
  j = nlohmann::json{{"bin_edges", r.bin_edges},
                     {"bins", bins},
                     {"score", r.score},
                     {"weighted_score", r.weighted_score}};
}

}  // namespace segdiff
