// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "segdiff/model.hpp"
#include "segdiff/schedule.hpp"
#include "segdiff/tensor.hpp"

namespace segdiff {

/// x_{t-1} = (x_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
///           + [t > 1] * sqrt(beta_tilde_t) * z
Tensor reverse_step(const Tensor& x_t, const Tensor& eps_hat, int t, const DiffusionSchedule& sched,
                    const Tensor& z);

/// Same update with eps_hat taken from the conditioned denoiser.
Tensor reverse_step(const Tensor& x_t, const Tensor& image, int t, const ModelParams& params,
                    const ModelConfig& config, const DiffusionSchedule& sched, const Tensor& z);

struct GenerationTrace {
  Tensor x_final;                  // [1,1,H,W] x0 estimate
  std::map<int, Tensor> snapshots;  // x_t captured after reaching step t
  std::uint64_t seed = 0;
  int steps_used = 0;
  double wall_seconds = 0;
};

/// Runs the reverse chain from x_T ~ N(0, I) for one [1,3,H,W] image. All
/// randomness (x_T, then one z per step t = T..2) comes from a generator
/// seeded with `seed`. `snapshot_steps` lists t values whose x_t to keep.
GenerationTrace generate(const Tensor& image, const ModelParams& params, const ModelConfig& config,
                         const DiffusionSchedule& sched, std::uint64_t seed,
                         const std::set<int>& snapshot_steps = {});

struct EnsembleResult {
  Tensor mean_map;                  // clamp(mean of generations, 0, 1), [1,1,H,W]
  std::vector<GenerationTrace> generations;  // ordered by seed
  int n = 0;
};

/// Clamped per-pixel mean of x0 estimates, summed in the given order.
Tensor ensemble_mean(const std::vector<Tensor>& generations);

struct EnsembleOptions {
  int threads = 1;        // worker threads across generation chunks
  int chunk_size = 10;    // generations batched through one forward pass
};

/// n generations with seeds base_seed .. base_seed + n - 1. Each generation is
/// identical to generate() with its seed, regardless of batching or threads.
EnsembleResult ensemble_generate(const Tensor& image, const ModelParams& params,
                                 const ModelConfig& config, const DiffusionSchedule& sched, int n,
                                 std::uint64_t base_seed, const EnsembleOptions& options = {});

/// 1 where map >= threshold, else 0.
Tensor binarize(const Tensor& map, double threshold = 0.5);

/// Worker count from SEGDIFF_THREADS, defaulting to the hardware concurrency.
int worker_threads_from_env();

}  // namespace segdiff
