// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "segdiff/tensor.hpp"

namespace segdiff {

inline constexpr double kDefaultLeakySlope = 0.01;
inline constexpr double kDefaultNormEps = 1e-5;

/// 2-D cross-correlation (no kernel flip) of x[B,Cin,H,W] with w[Cout,Cin,kh,kw].
/// Output extent per axis is floor((H + 2*padding - kh) / stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride = 1,
              int padding = 0);

/// Normalizes each (batch, group) slice to zero mean and unit variance, then
/// applies a per-channel affine map.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps = kDefaultNormEps);

/// Multi-head spatial self-attention over the H*W positions of x[B,C,H,W].
/// Projections are bias-free C x C matrices; the result is added back to x.
Tensor attention(const Tensor& x, int heads, const Tensor& wq, const Tensor& wk,
                 const Tensor& wv, const Tensor& wo);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& x, double s);
Tensor silu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = kDefaultLeakySlope);
Tensor nearest_upsample_x2(const Tensor& x);

/// y[B,out] = x[B,in] * W[out,in]^T + b[out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Gathers table rows: result[i] = table[indices[i]].
Tensor embedding_lookup(const Tensor& table, const std::vector<Index>& indices);

/// Adds v[B,C] to every spatial position of x[B,C,H,W].
Tensor add_channel_bias(const Tensor& x, const Tensor& v);

/// Concatenates 4-D tensors along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& parts);

/// Tiles a batch-1 tensor n times along the batch axis.
Tensor repeat_batch(const Tensor& x, Index n);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse_loss(const Tensor& a, const Tensor& b);

}  // namespace segdiff
