// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "segdiff/tensor.hpp"

namespace segdiff {

/// Masks are tensors whose last two extents are (H, W) and whose values are
/// exactly 0 or 1; leading extents must multiply to 1.

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::int64_t total() const { return tp + fp + fn + tn; }
};

ConfusionCounts confusion(const Tensor& pred, const Tensor& gt);

/// TP / (TP + FP + FN); 1.0 when both masks are empty.
double iou(const Tensor& pred, const Tensor& gt);
/// Mean of per-sample IoU.
double miou(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts);
/// Dice: 2TP / (2TP + FP + FN); 1.0 when both masks are empty.
double f1(const Tensor& pred, const Tensor& gt);

/// Weighted coverage: for each 4-connected ground-truth component, the best
/// IoU against any predicted component, averaged with component-area weights.
/// Empty ground truth scores 1 if the prediction is empty too, else 0.
double wcov(const Tensor& pred, const Tensor& gt);

/// Boundary F-score averaged over integer pixel tolerances 1..max_distance.
/// Boundary pixels are foreground pixels with a 4-neighbour in the background
/// (pixels outside the image do not count as background). Both boundaries
/// empty scores 1; exactly one empty scores 0.
double fbound(const Tensor& pred, const Tensor& gt, int max_distance = 5);
/// Boundary F-score at a single tolerance.
double fbound_at(const Tensor& pred, const Tensor& gt, double distance);

/// 4-connected component labels (0 = background, 1..count) in row-major order.
struct Components {
  std::vector<int> labels;
  int count = 0;
};
Components label_components(const std::vector<std::uint8_t>& mask, Index height, Index width);

std::vector<std::uint8_t> boundary_pixels(const std::vector<std::uint8_t>& mask, Index height,
                                          Index width);

/// Exact squared Euclidean distance from every pixel to the nearest site.
/// Pixels are +inf when there are no sites.
std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& sites,
                                               Index height, Index width);

struct CalibrationBin {
  std::int64_t count = 0;
  double mean_confidence = 0;
  double positive_fraction = 0;
};

struct CalibrationReport {
  std::array<double, 11> bin_edges{};
  std::array<CalibrationBin, 10> bins{};
  /// Unweighted mean over non-empty bins of (mean_confidence - positive_fraction)^2.
  double score = 0;
  /// Same squared gaps weighted by bin population.
  double weighted_score = 0;
};

/// Pools every pixel of `maps` (probabilities in [0,1]) against the matching
/// binary ground truth into ten bins [k/10, (k+1)/10), the last one closed.
CalibrationReport calibration_score(const std::vector<Tensor>& maps, const std::vector<Tensor>& gts);

void to_json(nlohmann::json& j, const CalibrationReport& r);

}  // namespace segdiff
