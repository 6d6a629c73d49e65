// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "segdiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "segdiff/pnm.hpp"

namespace segdiff {

namespace fs = std::filesystem;
using nlohmann::json;

bool ShapeSpec::contains(double x, double y) const {
  if (kind == Kind::ellipse) {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (dx * c + dy * s) / rx, v = (-dx * s + dy * c) / ry;
    return u * u + v * v <= 1.0;
  }
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const auto& [x0, y0] = vertices[i];
    const auto& [x1, y1] = vertices[(i + 1) % vertices.size()];
    const double cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0);
    pos |= cross > 0;
    neg |= cross < 0;
  }
  return !(pos && neg);
}

void to_json(json& j, const ShapeSpec& s) {
  if (s.kind == ShapeSpec::Kind::ellipse) {
    j = json{{"kind", "ellipse"}, {"cx", s.cx}, {"cy", s.cy}, {"rx", s.rx}, {"ry", s.ry},
             {"angle", s.angle}};
  } else {
    json verts = json::array();
    for (const auto& [x, y] : s.vertices) verts.push_back({x, y});
    j = json{{"kind", "polygon"}, {"vertices", verts}};
  }
}

void from_json(const json& j, ShapeSpec& s) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "ellipse") {
    s.kind = ShapeSpec::Kind::ellipse;
    j.at("cx").get_to(s.cx);
    j.at("cy").get_to(s.cy);
    j.at("rx").get_to(s.rx);
    j.at("ry").get_to(s.ry);
    j.at("angle").get_to(s.angle);
  } else if (kind == "polygon") {
    s.kind = ShapeSpec::Kind::polygon;
    s.vertices.clear();
    for (const auto& v : j.at("vertices")) s.vertices.emplace_back(v.at(0), v.at(1));
  } else {
    throw ConfigError("unknown shape kind '" + kind + "'");
  }
}

void to_json(json& j, const SyntheticParams& p) {
  j = json{{"height", p.height},
           {"width", p.width},
           {"min_foreground", p.min_foreground},
           {"max_foreground", p.max_foreground},
           {"distractors", p.distractors},
           {"texture_amplitude", p.texture_amplitude},
           {"pixel_noise", p.pixel_noise},
           {"min_color_gap", p.min_color_gap},
           {"min_luminance_gap", p.min_luminance_gap}};
}

void from_json(const json& j, SyntheticParams& p) {
  SyntheticParams d;
  p.height = j.value("height", d.height);
  p.width = j.value("width", d.width);
  p.min_foreground = j.value("min_foreground", d.min_foreground);
  p.max_foreground = j.value("max_foreground", d.max_foreground);
  p.distractors = j.value("distractors", d.distractors);
  p.texture_amplitude = j.value("texture_amplitude", d.texture_amplitude);
  p.pixel_noise = j.value("pixel_noise", d.pixel_noise);
  p.min_color_gap = j.value("min_color_gap", d.min_color_gap);
  p.min_luminance_gap = j.value("min_luminance_gap", d.min_luminance_gap);
}

json manifest_to_json(const DatasetManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"id", e.id}, {"image", e.image}, {"mask", e.mask}, {"shape", e.shape}});
  }
  return json{{"version", kManifestVersion},
              {"split", m.split},
              {"seed", m.seed},
              {"params", m.params},
              {"entries", entries}};
}

DatasetManifest manifest_from_json(const json& j, fs::path root) {
  if (j.value("version", 0) != kManifestVersion) {
    throw ConfigError("manifest version " + j.value("version", json()).dump() + " unsupported");
  }
  DatasetManifest m;
  m.root = std::move(root);
  m.split = j.at("split").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.params = j.at("params").get<SyntheticParams>();
  for (const auto& e : j.at("entries")) {
    m.entries.push_back({e.at("id").get<std::string>(), e.at("image").get<std::string>(),
                         e.at("mask").get<std::string>(), e.at("shape").get<ShapeSpec>()});
  }
  return m;
}

void write_manifest(const DatasetManifest& m) {
  const fs::path path = m.root / "manifest.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << manifest_to_json(m).dump(2) << '\n';
}

DatasetManifest read_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
  DatasetManifest m = manifest_from_json(j, root);
  std::vector<std::string> ids;
  for (const auto& e : m.entries) ids.push_back(e.id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw ConfigError(path.string() + ": duplicate sample ids");
  }
  return m;
}

namespace {

using Color = std::array<double, 3>;

double chebyshev(const Color& a, const Color& b) {
  return std::max({std::abs(a[0] - b[0]), std::abs(a[1] - b[1]), std::abs(a[2] - b[2])});
}

Color random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {u(rng), u(rng), u(rng)};
}

double luminance(const Color& c) { return (c[0] + c[1] + c[2]) / 3.0; }

// Draws a color at least `gap` from `other` (Chebyshev) whose luminance is at
// least `lum_gap` below `brighter` (pass -inf to skip the luminance test).
Color darker_color_apart(std::mt19937_64& rng, const Color& other, double gap, const Color& brighter,
                         double lum_gap) {
  for (int i = 0; i < 100000; ++i) {
    Color c = random_color(rng);
    if (chebyshev(c, other) >= gap && luminance(brighter) - luminance(c) >= lum_gap) return c;
  }
  throw ConfigError("synthetic: cannot satisfy the color constraints");
}

ShapeSpec random_shape(std::mt19937_64& rng, const SyntheticParams& p) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double side = std::min(p.height, p.width);
  ShapeSpec s;
  s.kind = u(rng) < 0.5 ? ShapeSpec::Kind::ellipse : ShapeSpec::Kind::polygon;
  const double radius = side * (0.15 + 0.30 * u(rng));
  s.rx = radius * (0.6 + 0.4 * u(rng));
  s.ry = radius * (0.6 + 0.4 * u(rng));
  s.cx = p.width * (0.25 + 0.5 * u(rng));
  s.cy = p.height * (0.25 + 0.5 * u(rng));
  s.angle = std::numbers::pi * u(rng);
  if (s.kind == ShapeSpec::Kind::polygon) {
    const int k = 3 + static_cast<int>(u(rng) * 5);
    const double c = std::cos(s.angle), sn = std::sin(s.angle);
    for (int i = 0; i < k; ++i) {
      // Vertices on a rotated ellipse in angular order form a convex polygon.
      const double phi = 2.0 * std::numbers::pi * (i + 0.6 * (u(rng) - 0.5)) / k;
      const double lx = s.rx * std::cos(phi), ly = s.ry * std::sin(phi);
      s.vertices.emplace_back(s.cx + lx * c - ly * sn, s.cy + lx * sn + ly * c);
    }
  }
  return s;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

}  // namespace

std::pair<Sample, ShapeSpec> render_synthetic(std::mt19937_64& rng, const SyntheticParams& p,
                                              std::string id) {
  const Index h = p.height, w = p.width, plane = h * w;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, p.pixel_noise);

  ShapeSpec shape;
  Tensor mask({1, h, w});
  for (int attempt = 0;; ++attempt) {
    if (attempt == 10000) throw ConfigError("synthetic: cannot satisfy foreground bounds");
    shape = random_shape(rng, p);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) mask.values()[y * w + x] = shape.contains(x + 0.5, y + 0.5);
    const double frac = mask.values().mean();
    if (frac >= p.min_foreground && frac <= p.max_foreground) break;
  }

  Color fg, bg;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 100000) throw ConfigError("synthetic: cannot satisfy the color constraints");
    bg = random_color(rng);
    fg = random_color(rng);
    if (chebyshev(fg, bg) >= p.min_color_gap && luminance(fg) - luminance(bg) >= p.min_luminance_gap) break;
  }
  // Background texture: an oriented sinusoid grating with per-channel gain.
  const double freq = 2.0 + 4.0 * u(rng), theta = std::numbers::pi * u(rng),
               phase = 2.0 * std::numbers::pi * u(rng);
  const Color gain{u(rng) * 2 - 1, u(rng) * 2 - 1, u(rng) * 2 - 1};

  Tensor image({3, h, w});
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const bool inside = mask.values()[y * w + x] > 0.5;
      const double wave =
          std::sin(2.0 * std::numbers::pi * freq * (x * std::cos(theta) + y * std::sin(theta)) / w + phase);
      for (int c = 0; c < 3; ++c) {
        const double base = inside ? fg[c] : bg[c] + p.texture_amplitude * gain[c] * wave;
        image.values()[c * plane + y * w + x] = base + noise(rng);
      }
    }
  }

  // Distractor strokes never touch the foreground, so the mask stays exact.
  for (int d = 0; d < p.distractors; ++d) {
    const Color col = darker_color_apart(rng, fg, p.min_color_gap, fg, p.min_luminance_gap);
    double x = u(rng) * w, y = u(rng) * h;
    const double dir = 2.0 * std::numbers::pi * u(rng);
    const int len = 5 + static_cast<int>(u(rng) * 10);
    for (int i = 0; i < len; ++i, x += std::cos(dir), y += std::sin(dir)) {
      const Index px = static_cast<Index>(std::floor(x)), py = static_cast<Index>(std::floor(y));
      if (px < 0 || py < 0 || px >= w || py >= h) break;
      if (mask.values()[py * w + px] > 0.5) continue;
      for (int c = 0; c < 3; ++c) image.values()[c * plane + py * w + px] = col[c];
    }
  }
  image.values() = image.values().cwiseMax(0.0).cwiseMin(1.0);
  return {Sample{image, mask, std::move(id)}, shape};
}

DatasetManifest gen_synthetic(const fs::path& root, std::uint64_t seed, int n,
                              const SyntheticParams& params, const std::string& split) {
  if (n < 1) throw ConfigError("synthetic dataset needs n >= 1");
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  fs::create_directories(root / "masks", ec);
  if (ec) throw IoError("cannot create dataset directory '" + root.string() + "': " + ec.message());

  DatasetManifest m;
  m.root = root;
  m.split = split;
  m.seed = seed;
  m.params = params;
  const std::uint64_t tag = fnv1a(split);
  for (int i = 0; i < n; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    std::ostringstream id;
    id << split << '_' << std::setw(4) << std::setfill('0') << i;
    auto [sample, shape] = render_synthetic(rng, params, id.str());
    ManifestEntry e{sample.id, "images/" + sample.id + ".ppm", "masks/" + sample.id + ".pgm", shape};
    save_pnm(root / e.image, sample.image, 255);
    save_pnm(root / e.mask, sample.mask, 255);
    m.entries.push_back(std::move(e));
  }
  write_manifest(m);
  return m;
}

std::vector<Sample> load_dataset(const DatasetManifest& manifest) {
  std::vector<Sample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    Tensor image = load_pnm(manifest.root / e.image);
    Tensor mask = load_pnm(manifest.root / e.mask);
    if (image.dim(0) != 3 || mask.dim(0) != 1 || image.dim(1) != mask.dim(1) ||
        image.dim(2) != mask.dim(2)) {
      throw DimensionError("sample '" + e.id + "': image " + shape_string(image.shape()) +
                           " and mask " + shape_string(mask.shape()) + " are inconsistent");
    }
    if (((mask.values() != 0.0) && (mask.values() != 1.0)).any()) {
      throw ConfigError("sample '" + e.id + "': mask is not binary");
    }
    out.push_back({image, mask, e.id});
  }
  return out;
}

void to_json(json& j, const AugmentFlags& f) {
  j = json{{"hflip", f.hflip}, {"vflip", f.vflip}, {"rotate", f.rotate}, {"scale", f.scale},
           {"color_jitter", f.color_jitter}};
}

void from_json(const json& j, AugmentFlags& f) {
  f.hflip = j.value("hflip", false);
  f.vflip = j.value("vflip", false);
  f.rotate = j.value("rotate", false);
  f.scale = j.value("scale", false);
  f.color_jitter = j.value("color_jitter", false);
}

namespace {

Tensor flip_planes(const Tensor& t, bool horizontal) {
  const Index planes = t.dim(0), h = t.dim(1), w = t.dim(2);
  Tensor out(t.shape());
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const Index sy = horizontal ? y : h - 1 - y, sx = horizontal ? w - 1 - x : x;
        out.values()[(p * h + y) * w + x] = t.values()[(p * h + sy) * w + sx];
      }
  return out;
}

}  // namespace

Sample flip_horizontal(const Sample& s) {
  return {flip_planes(s.image, true), flip_planes(s.mask, true), s.id};
}

Sample flip_vertical(const Sample& s) {
  return {flip_planes(s.image, false), flip_planes(s.mask, false), s.id};
}

Sample affine_resample(const Sample& s, double degrees, double scale) {
  if (scale <= 0) throw ConfigError("affine_resample: scale must be positive");
  const Index h = s.image.dim(1), w = s.image.dim(2), plane = h * w;
  const Index channels = s.image.dim(0);
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad), sn = std::sin(rad);
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  Tensor image(s.image.shape()), mask(s.mask.shape());
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      // Inverse map from output pixel to source location.
      const double u = (x - cx) / scale, v = (y - cy) / scale;
      const double sx = u * c - v * sn + cx, sy = u * sn + v * c + cy;

      const long nx = std::lround(sx), ny = std::lround(sy);
      mask.values()[y * w + x] =
          (nx >= 0 && ny >= 0 && nx < w && ny < h) ? s.mask.values()[ny * w + nx] : 0.0;

      const double fx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      const double fy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
      const Index x0 = static_cast<Index>(std::floor(fx)), y0 = static_cast<Index>(std::floor(fy));
      const Index x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double ax = fx - x0, ay = fy - y0;
      for (Index ch = 0; ch < channels; ++ch) {
        const double* p = s.image.data() + ch * plane;
        image.values()[ch * plane + y * w + x] =
            (1 - ay) * ((1 - ax) * p[y0 * w + x0] + ax * p[y0 * w + x1]) +
            ay * ((1 - ax) * p[y1 * w + x0] + ax * p[y1 * w + x1]);
      }
    }
  }
  return {image, mask, s.id};
}

Sample augment(const Sample& s, std::mt19937_64& rng, const AugmentFlags& flags) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // Draw every variate unconditionally so the stream position does not depend on flags.
  const bool hflip = u(rng) < 0.5, vflip = u(rng) < 0.5;
  const double degrees = 360.0 * u(rng);
  const double scale = 0.75 + 0.5 * u(rng);

  Sample out = s;
  if (flags.rotate || flags.scale) {
    out = affine_resample(out, flags.rotate ? degrees : 0.0, flags.scale ? scale : 1.0);
  }
  if (flags.hflip && hflip) out = flip_horizontal(out);
  if (flags.vflip && vflip) out = flip_vertical(out);
  return out;
}

}  // namespace segdiff
