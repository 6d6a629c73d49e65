// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>

#include "segdiff/schedule.hpp"
#include "segdiff/tensor.hpp"

namespace segdiff {

struct NoisedSample {
  Tensor x_t;
  Tensor epsilon;  // regression target for the denoiser
  int t = 0;
};

/// x_t = sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * epsilon with the given noise.
Tensor noise_to(const Tensor& x0, const Tensor& epsilon, int t, const DiffusionSchedule& sched);

/// Draws epsilon ~ N(0, I) from `rng` and noises x0 to step t.
NoisedSample sample_xt(const Tensor& x0, int t, const DiffusionSchedule& sched,
                       std::mt19937_64& rng);

}  // namespace segdiff
