// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "segdiff/pnm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace segdiff {

namespace {

class HeaderReader {
 public:
  HeaderReader(std::span<const std::uint8_t> bytes, std::size_t start) : bytes_(bytes), pos_(start) {}

  std::size_t pos() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = static_cast<char>(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  long number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) throw ParseError(std::string("pnm: ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("pnm: expected ") + what, start);
    return value;
  }

  void single_whitespace() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw ParseError("pnm: expected whitespace before raster", pos_);
    }
    ++pos_;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
};

}  // namespace

Tensor decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError("pnm: expected magic P5 or P6", 0);
  }
  const Index channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader reader(bytes, 2);
  const long width = reader.number("width");
  const long height = reader.number("height");
  reader.skip_space_and_comments();
  const std::size_t maxval_at = reader.pos();
  const long maxval = reader.number("maxval");
  if (width < 1 || height < 1) throw ParseError("pnm: empty image", maxval_at);
  if (maxval < 1 || maxval > 65535) {
    throw ParseError("pnm: maxval must be in [1, 65535], got " + std::to_string(maxval), maxval_at);
  }
  reader.single_whitespace();
  const std::size_t raster = reader.pos();
  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  const std::size_t count = static_cast<std::size_t>(width * height * channels);
  if (bytes.size() - raster < count * sample_bytes) {
    throw ParseError("pnm: raster truncated, need " + std::to_string(count * sample_bytes) +
                         " bytes",
                     bytes.size());
  }

  Tensor out({channels, height, width});
  const auto denom = static_cast<double>(maxval);
  const Index plane = height * width;
  for (Index p = 0; p < plane; ++p) {
    for (Index c = 0; c < channels; ++c) {
      const std::size_t at = raster + (p * channels + c) * sample_bytes;
      unsigned v = bytes[at];
      if (sample_bytes == 2) v = (v << 8) | bytes[at + 1];
      if (v > static_cast<unsigned>(maxval)) {
        throw ParseError("pnm: sample exceeds maxval", at);
      }
      out.values()[c * plane + p] = v / denom;
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_pnm(const Tensor& image, int maxval) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw DimensionError("encode_pnm: expected [1,H,W] or [3,H,W], got " +
                         shape_string(image.shape()));
  }
  if (maxval < 1 || maxval > 65535) throw ConfigError("encode_pnm: maxval must be in [1, 65535]");
  const Index channels = image.dim(0), height = image.dim(1), width = image.dim(2);
  const std::string header = std::string(channels == 3 ? "P6" : "P5") + "\n" +
                             std::to_string(width) + " " + std::to_string(height) + "\n" +
                             std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const Index plane = height * width;
  for (Index p = 0; p < plane; ++p) {
    for (Index c = 0; c < channels; ++c) {
      const double v = std::clamp(image.values()[c * plane + p], 0.0, 1.0);
      const auto q = static_cast<unsigned>(std::lround(v * maxval));
      if (maxval > 255) out.push_back(static_cast<std::uint8_t>(q >> 8));
      out.push_back(static_cast<std::uint8_t>(q & 0xff));
    }
  }
  return out;
}

Tensor load_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  try {
    return decode_pnm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.offset());
  }
}

void save_pnm(const std::filesystem::path& path, const Tensor& image, int maxval) {
  const auto bytes = encode_pnm(image, maxval);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

}  // namespace segdiff
