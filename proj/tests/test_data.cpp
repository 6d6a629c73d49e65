// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "doctest.h"
#include "segdiff/data.hpp"
#include "segdiff/errors.hpp"
#include "segdiff/pnm.hpp"

using namespace segdiff;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("segdiff_data_" + name);
  fs::remove_all(d);
  return d;
}

std::size_t offset_of(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_pnm(bytes);
  } catch (const ParseError& e) {
    return e.offset();
  }
  return static_cast<std::size_t>(-1);
}

}  // namespace

TEST_CASE("PNM decoding of hand-written files") {
  // 2x2 P6: red, green / blue, white.
  std::string p6 = "P6\n# comment\n2 2\n255\n";
  p6 += std::string("\xff\x00\x00\x00\xff\x00\x00\x00\xff\xff\xff\xff", 12);
  const Tensor rgb = decode_pnm(bytes_of(p6));
  CHECK(rgb.shape() == Shape{3, 2, 2});
  CHECK(rgb.values()[0] == 1.0);
  CHECK(rgb.values()[4] == 0.0);
  CHECK(rgb.values()[5] == 1.0);
  CHECK(rgb.values()[10] == 1.0);
  CHECK(rgb.values()[3] == 1.0);

  const Tensor g = decode_pnm(bytes_of(std::string("P5 1 2 255\n\xff\x00", 13)));
  CHECK(g.shape() == Shape{1, 2, 1});
  CHECK(g.values()[0] == 1.0);
  CHECK(g.values()[1] == 0.0);

  const Tensor wide = decode_pnm(bytes_of(std::string("P5 1 1 1000\n\x01\xf4", 14)));
  CHECK(wide.values()[0] == 0.5);
}

TEST_CASE("PNM parse errors carry byte offsets") {
  CHECK(offset_of(bytes_of("P4 1 1 255\n")) == 0);
  CHECK(offset_of(bytes_of("P5 x")) == 3);
  CHECK(offset_of(bytes_of("P5 1 1 0\nA")) == 7);
  CHECK(offset_of(bytes_of("P5 1 1 70000\nA")) == 7);
  CHECK(offset_of(bytes_of("P5 2 2 255\nAB")) == 13);
  CHECK(offset_of(bytes_of("P5 1 1 255")) == 10);
  CHECK(offset_of(bytes_of(std::string("P5 1 1 10\n\x0b", 11))) == 10);
  CHECK_THROWS_AS(load_pnm("/nonexistent/x.pgm"), IoError);
}

TEST_CASE("PNM round trips") {
  std::mt19937_64 r(1);
  std::uniform_int_distribution<int> level(0, 255);
  Tensor img({3, 4, 5});
  for (Index i = 0; i < img.numel(); ++i) img.values()[i] = level(r) / 255.0;
  const auto enc = encode_pnm(img);
  CHECK(std::string(enc.begin(), enc.begin() + 2) == "P6");
  CHECK((decode_pnm(enc).values() == img.values()).all());
  CHECK(encode_pnm(decode_pnm(enc)) == enc);

  Tensor mask({1, 3, 3});
  mask.values()[4] = 1.0;
  CHECK((decode_pnm(encode_pnm(mask)).values() == mask.values()).all());
  CHECK((decode_pnm(encode_pnm(mask, 65535)).values() == mask.values()).all());
  CHECK_THROWS_AS(encode_pnm(Tensor({2, 2, 2})), DimensionError);

  const fs::path dir = scratch("pnm");
  fs::create_directories(dir);
  save_pnm(dir / "a.ppm", img);
  CHECK((load_pnm(dir / "a.ppm").values() == img.values()).all());
  fs::remove_all(dir);
}

TEST_CASE("synthetic generation, manifests and determinism") {
  SyntheticParams p;
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  const DatasetManifest m = gen_synthetic(a, 7, 12, p, "train");
  gen_synthetic(b, 7, 12, p, "train");
  REQUIRE(m.entries.size() == 12);
  for (const auto& e : m.entries) {
    CHECK(slurp(a / e.image) == slurp(b / e.image));
    CHECK(slurp(a / e.mask) == slurp(b / e.mask));
  }
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));

  const DatasetManifest back = read_manifest(a);
  CHECK(manifest_to_json(back).dump() == manifest_to_json(m).dump());
  const std::string before = slurp(a / "manifest.json");
  write_manifest(back);
  CHECK(slurp(a / "manifest.json") == before);

  const auto samples = load_dataset(back);
  REQUIRE(samples.size() == 12);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const ShapeSpec& shape = back.entries[i].shape;
    CAPTURE(s.id);
    CHECK(s.image.shape() == Shape{3, 32, 32});
    CHECK(s.mask.shape() == Shape{1, 32, 32});
    double fg = 0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const double v = s.mask.values()[y * 32 + x];
        CHECK((v == 0.0 || v == 1.0));
        CHECK((v == 1.0) == shape.contains(x + 0.5, y + 0.5));
        fg += v;
      }
    fg /= 1024.0;
    CHECK(fg >= p.min_foreground);
    CHECK(fg <= p.max_foreground);
    CHECK(s.image.values().minCoeff() >= 0.0);
    CHECK(s.image.values().maxCoeff() <= 1.0);
  }

  const DatasetManifest other = gen_synthetic(b, 8, 12, p, "train");
  CHECK(slurp(a / m.entries[0].image) != slurp(b / other.entries[0].image));
  CHECK_THROWS_AS(read_manifest(scratch("missing")), IoError);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("synthetic images put a brighter foreground over the background") {
  SyntheticParams p;
  std::mt19937_64 r(3);
  for (int i = 0; i < 20; ++i) {
    const Sample s = render_synthetic(r, p, "x").first;
    double fg = 0, bg = 0, nf = 0, nb = 0;
    for (Index k = 0; k < 1024; ++k) {
      const double lum = (s.image.values()[k] + s.image.values()[1024 + k] + s.image.values()[2048 + k]) / 3;
      if (s.mask.values()[k] == 1.0) fg += lum, ++nf;
      else bg += lum, ++nb;
    }
    CHECK(fg / nf > bg / nb);
  }
  SyntheticParams bad = p;
  bad.min_foreground = 0.9;
  bad.max_foreground = 0.95;
  CHECK_THROWS_AS(render_synthetic(r, bad, "x"), ConfigError);
}

TEST_CASE("augmentation fixtures") {
  Sample s;
  s.image = Tensor({3, 4, 4});
  s.mask = Tensor({1, 4, 4});
  for (Index i = 0; i < 48; ++i) s.image.values()[i] = i / 48.0;
  s.mask.values()[0 * 4 + 3] = 1.0;  // top-right pixel
  s.mask.values()[1 * 4 + 3] = 1.0;

  std::mt19937_64 r(4);
  const Sample same = augment(s, r, AugmentFlags{});
  CHECK((same.image.values() == s.image.values()).all());
  CHECK((same.mask.values() == s.mask.values()).all());

  const Sample hh = flip_horizontal(flip_horizontal(s));
  CHECK((hh.image.values() == s.image.values()).all());
  const Sample h = flip_horizontal(s);
  CHECK(h.mask.values()[0] == 1.0);
  CHECK(h.mask.values()[3] == 0.0);
  const Sample v = flip_vertical(s);
  CHECK(v.mask.values()[3 * 4 + 3] == 1.0);
  CHECK((flip_vertical(v).mask.values() == s.mask.values()).all());

  // A quarter turn counter-clockwise moves the right column to the top row.
  const Sample q = affine_resample(s, 90.0, 1.0);
  CHECK(q.mask.values()[0 * 4 + 0] == 1.0);
  CHECK(q.mask.values()[0 * 4 + 1] == 1.0);
  CHECK(q.mask.values().sum() == 2.0);
  Sample full = s;
  for (int k = 0; k < 4; ++k) full = affine_resample(full, 90.0, 1.0);
  CHECK((full.mask.values() == s.mask.values()).all());
  CHECK((full.image.values() - s.image.values()).abs().maxCoeff() < 1e-12);

  AugmentFlags all;
  all.hflip = all.vflip = all.rotate = all.scale = true;
  for (int i = 0; i < 20; ++i) {
    const Sample a = augment(s, r, all);
    CHECK(a.image.shape() == s.image.shape());
    CHECK(((a.mask.values() == 0.0) || (a.mask.values() == 1.0)).all());
  }
}
