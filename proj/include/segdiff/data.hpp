// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "segdiff/tensor.hpp"

namespace segdiff {

/// An image in [0,1] ([3,H,W]) with its binary mask ([1,H,W]).
struct Sample {
  Tensor image;
  Tensor mask;
  std::string id;
};

/// Analytic foreground region used to rasterize a synthetic mask.
struct ShapeSpec {
  enum class Kind { ellipse, polygon };
  Kind kind = Kind::ellipse;
  // Ellipse: center, semi-axes and rotation (radians). Polygon: vertices in
  // counter-clockwise order, convex.
  double cx = 0, cy = 0, rx = 0, ry = 0, angle = 0;
  std::vector<std::pair<double, double>> vertices;

  /// Point-in-shape test; (x, y) in pixel units with pixel centers at +0.5.
  bool contains(double x, double y) const;
};

void to_json(nlohmann::json& j, const ShapeSpec& s);
void from_json(const nlohmann::json& j, ShapeSpec& s);

struct SyntheticParams {
  int height = 32;
  int width = 32;
  double min_foreground = 0.05;
  double max_foreground = 0.60;
  int distractors = 3;         // thin strokes drawn over the background only
  double texture_amplitude = 0.12;
  double pixel_noise = 0.04;
  double min_color_gap = 0.35;  // min Chebyshev distance between fg and bg colors
  // The foreground is brighter (mean over channels) than the background and
  // the distractors by at least this much. -1 lets any polarity through.
  double min_luminance_gap = 0.3;
};

void to_json(nlohmann::json& j, const SyntheticParams& p);
void from_json(const nlohmann::json& j, SyntheticParams& p);

struct ManifestEntry {
  std::string id;
  std::string image;  // relative to the manifest directory
  std::string mask;
  ShapeSpec shape;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::string split = "train";
  std::uint64_t seed = 0;
  SyntheticParams params;
  std::vector<ManifestEntry> entries;
};

inline constexpr int kManifestVersion = 1;

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j, std::filesystem::path root);
void write_manifest(const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& root);

/// Renders one image/mask pair: a single ellipse or convex polygon over a
/// textured background with distractor strokes. The mask is the exact
/// point-in-shape test at pixel centers.
std::pair<Sample, ShapeSpec> render_synthetic(std::mt19937_64& rng, const SyntheticParams& params,
                                              std::string id);

/// Writes `n` samples to root/images/*.ppm, root/masks/*.pgm and
/// root/manifest.json. Each sample is seeded from (seed, split, index).
DatasetManifest gen_synthetic(const std::filesystem::path& root, std::uint64_t seed, int n,
                              const SyntheticParams& params, const std::string& split = "train");

std::vector<Sample> load_dataset(const DatasetManifest& manifest);

struct AugmentFlags {
  bool hflip = false;
  bool vflip = false;
  bool rotate = false;
  bool scale = false;
  bool color_jitter = false;  // reserved; currently has no effect
};

void to_json(nlohmann::json& j, const AugmentFlags& f);
void from_json(const nlohmann::json& j, AugmentFlags& f);

/// Rotates (counter-clockwise as displayed, degrees) and scales about the
/// image center. Bilinear with edge clamping for the image, nearest with zero
/// fill for the mask.
Sample affine_resample(const Sample& s, double degrees, double scale);
Sample flip_horizontal(const Sample& s);
Sample flip_vertical(const Sample& s);

/// Random flips (p = 0.5 each), rotation in [0, 360) and scale in
/// [0.75, 1.25], each only when enabled in `flags`.
Sample augment(const Sample& s, std::mt19937_64& rng, const AugmentFlags& flags);

}  // namespace segdiff
