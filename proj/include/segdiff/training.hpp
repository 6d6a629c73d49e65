// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segdiff/data.hpp"
#include "segdiff/model.hpp"
#include "segdiff/schedule.hpp"

namespace segdiff {

struct TrainConfig {
  int T = 100;
  int batch_size = 8;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_steps = 1000;
  std::uint64_t seed = 0;
  AugmentFlags augment;
  int log_every = 50;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// AdamW moments, index-aligned with ModelParams entries.
struct OptimizerState {
  std::vector<Array> m;
  std::vector<Array> v;
  std::int64_t step = 0;

  static OptimizerState zeros_like(const ModelParams& params);
};

/// One AdamW update from the gradients currently stored on `params`.
/// Decoupled decay: theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta).
void adamw_step(ModelParams& params, OptimizerState& opt, const TrainConfig& cfg);

/// Draws t ~ U{1..T}.
int sample_timestep(std::mt19937_64& rng, int T);

/// Noise-prediction objective on one minibatch followed by one AdamW update.
/// Each element gets its own t ~ U{1..T} and epsilon; x0 is the ground-truth mask.
/// Returns the mean squared error before the update.
double training_step(std::span<const Sample> batch, ModelParams& params, const ModelConfig& model,
                     OptimizerState& opt, const DiffusionSchedule& sched, const TrainConfig& cfg,
                     std::mt19937_64& rng);

/// Per-step generator derived from (seed, step); the whole run is reproducible
/// from the step counter alone, which is what makes resuming exact.
std::mt19937_64 step_rng(std::uint64_t seed, std::int64_t step);

/// Dataset indices for minibatch `step`: consecutive slices of per-epoch
/// permutations seeded by (seed, epoch).
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::int64_t step, int batch_size,
                                       std::size_t dataset_size);

struct LossPoint {
  std::int64_t step;
  double loss;
};

struct TrainState {
  ModelConfig model;
  TrainConfig train;
  ModelParams params;
  OptimizerState opt;
  std::vector<LossPoint> losses;  // every step
};

struct TrainHooks {
  std::function<void(std::int64_t step, double loss)> on_log;
  std::function<void(const TrainState&)> on_checkpoint;
};

/// Fresh state: params from init_params(model, train.seed), zeroed moments.
TrainState start_training(const ModelConfig& model, const TrainConfig& train);

/// Runs steps until opt.step reaches train.max_steps.
void train_loop(TrainState& state, std::span<const Sample> dataset, const TrainHooks& hooks = {});

/// Mean loss over windows of the curve; used for trend checks and the CSV.
double mean_loss(std::span<const LossPoint> points);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace segdiff
