// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "segdiff/tensor.hpp"

namespace segdiff {

/// Decodes a binary PGM (P5) or PPM (P6) into a [C,H,W] tensor with samples
/// mapped linearly to [0,1]. Throws ParseError carrying the failing byte offset.
Tensor decode_pnm(std::span<const std::uint8_t> bytes);

/// Encodes a [1,H,W] tensor as P5 or a [3,H,W] tensor as P6. Values are
/// clamped to [0,1] and rounded to the nearest level of `maxval`
/// (1..65535; above 255 uses two big-endian bytes per sample).
std::vector<std::uint8_t> encode_pnm(const Tensor& image, int maxval = 255);

Tensor load_pnm(const std::filesystem::path& path);
void save_pnm(const std::filesystem::path& path, const Tensor& image, int maxval = 255);

}  // namespace segdiff
