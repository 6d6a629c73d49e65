// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "segdiff/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "segdiff/forward_process.hpp"
#include "segdiff/ops.hpp"

namespace segdiff {

using nlohmann::json;

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (T < 2) fail("T must be >= 2");
  if (batch_size < 1) fail("batch_size must be positive");
  if (!(lr > 0)) fail("lr must be positive");
  if (weight_decay < 0) fail("weight_decay must be non-negative");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) fail("betas must lie in [0, 1)");
  if (!(adam_eps > 0)) fail("adam_eps must be positive");
  if (max_steps < 1) fail("max_steps must be >= 1");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"T", c.T},
           {"batch_size", c.batch_size},
           {"lr", c.lr},
           {"weight_decay", c.weight_decay},
           {"adam_betas", {c.beta1, c.beta2}},
           {"adam_eps", c.adam_eps},
           {"max_steps", c.max_steps},
           {"seed", c.seed},
           {"augment", c.augment},
           {"log_every", c.log_every},
           {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.T = j.value("T", d.T);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  if (j.contains("adam_betas")) {
    c.beta1 = j.at("adam_betas").at(0).get<double>();
    c.beta2 = j.at("adam_betas").at(1).get<double>();
  }
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.seed = j.value("seed", d.seed);
  c.augment = j.value("augment", d.augment);
  c.log_every = j.value("log_every", d.log_every);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
}

OptimizerState OptimizerState::zeros_like(const ModelParams& params) {
  OptimizerState s;
  for (const auto& [name, t] : params) {
    s.m.push_back(Array::Zero(t.numel()));
    s.v.push_back(Array::Zero(t.numel()));
  }
  return s;
}

void adamw_step(ModelParams& params, OptimizerState& opt, const TrainConfig& cfg) {
  if (opt.m.size() != params.size() || opt.v.size() != params.size()) {
    throw DimensionError("optimizer state does not match parameter list");
  }
  ++opt.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  std::size_t i = 0;
  for (auto& [name, p] : params.entries()) {
    Array& m = opt.m[i];
    Array& v = opt.v[i];
    ++i;
    if (m.size() != p.numel()) throw DimensionError("moment shape mismatch for '" + name + "'");
    const Array g = p.grad();
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.square();
    p.values() -= cfg.lr * ((m / c1) / ((v / c2).sqrt() + cfg.adam_eps) + cfg.weight_decay * p.values());
  }
}

std::mt19937_64 step_rng(std::uint64_t seed, std::int64_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                    0x5eedu};
  return std::mt19937_64(seq);
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::int64_t step, int batch_size,
                                       std::size_t dataset_size) {
  std::vector<std::size_t> out;
  std::int64_t epoch = -1;
  std::vector<std::size_t> perm(dataset_size);
  const auto n = static_cast<std::int64_t>(dataset_size);
  for (std::int64_t pos = step * batch_size; pos < (step + 1) * batch_size; ++pos) {
    if (pos / n != epoch) {
      epoch = pos / n;
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32),
                        0xe90cu};
      std::mt19937_64 rng(seq);
      std::shuffle(perm.begin(), perm.end(), rng);
    }
    out.push_back(perm[static_cast<std::size_t>(pos % n)]);
  }
  return out;
}

int sample_timestep(std::mt19937_64& rng, int T) {
  return std::uniform_int_distribution<int>(1, T)(rng);
}

double training_step(std::span<const Sample> batch, ModelParams& params, const ModelConfig& model,
                     OptimizerState& opt, const DiffusionSchedule& sched, const TrainConfig& cfg,
                     std::mt19937_64& rng) {
  if (batch.empty()) throw ConfigError("training_step: empty batch");
  const Index b = static_cast<Index>(batch.size());
  const Index h = batch[0].image.dim(1), w = batch[0].image.dim(2);
  const Index img_len = batch[0].image.numel(), mask_len = h * w;

  Tensor images({b, batch[0].image.dim(0), h, w});
  Tensor x_t({b, 1, h, w}), eps({b, 1, h, w});
  std::vector<int> steps(static_cast<std::size_t>(b));
  for (Index i = 0; i < b; ++i) {
    const Sample s = augment(batch[i], rng, cfg.augment);
    if (s.image.numel() != img_len || s.mask.numel() != mask_len) {
      throw DimensionError("training_step: sample '" + s.id + "' has inconsistent size");
    }
    if (((s.mask.values() != 0.0) && (s.mask.values() != 1.0)).any()) {
      throw ConfigError("training_step: mask of '" + s.id + "' is not binary");
    }
    images.values().segment(i * img_len, img_len) = s.image.values();
    const int t = sample_timestep(rng, sched.steps());
    steps[static_cast<std::size_t>(i)] = t;
    const NoisedSample ns = sample_xt(s.mask, t, sched, rng);
    x_t.values().segment(i * mask_len, mask_len) = ns.x_t.values();
    eps.values().segment(i * mask_len, mask_len) = ns.epsilon.values();
  }

  params.zero_grad();
  Tensor pred = epsilon_theta(x_t, images, steps, params, model);
  Tensor loss = mse_loss(pred, eps);
  const double value = loss.item();
  if (!std::isfinite(value)) {
    throw DivergenceError("training diverged at step " + std::to_string(opt.step + 1) +
                          ": loss is " + std::to_string(value));
  }
  backward(loss);
  adamw_step(params, opt, cfg);
  return value;
}

TrainState start_training(const ModelConfig& model, const TrainConfig& train) {
  model.validate();
  train.validate();
  if (model.time_steps != train.T) {
    throw ConfigError("model time table has " + std::to_string(model.time_steps) +
                      " rows but training uses T = " + std::to_string(train.T));
  }
  TrainState s{model, train, init_params(model, train.seed), {}, {}};
  s.opt = OptimizerState::zeros_like(s.params);
  return s;
}

void train_loop(TrainState& state, std::span<const Sample> dataset, const TrainHooks& hooks) {
  if (dataset.empty()) throw ConfigError("train_loop: empty dataset");
  state.train.validate();
  const DiffusionSchedule sched(state.train.T);
  std::vector<Sample> batch;
  while (state.opt.step < state.train.max_steps) {
    const std::int64_t step = state.opt.step;
    batch.clear();
    for (std::size_t idx : batch_indices(state.train.seed, step, state.train.batch_size, dataset.size()))
      batch.push_back(dataset[idx]);
    std::mt19937_64 rng = step_rng(state.train.seed, step);
    const double loss = training_step(batch, state.params, state.model, state.opt, sched, state.train, rng);
    state.losses.push_back({step + 1, loss});
    if (hooks.on_log && state.train.log_every > 0 && (step + 1) % state.train.log_every == 0) {
      hooks.on_log(step + 1, loss);
    }
    if (hooks.on_checkpoint && state.train.checkpoint_every > 0 &&
        (step + 1) % state.train.checkpoint_every == 0) {
      hooks.on_checkpoint(state);
    }
  }
  state.params.zero_grad();
}

double mean_loss(std::span<const LossPoint> points) {
  if (points.empty()) return 0.0;
  double total = 0;
  for (const auto& p : points) total += p.loss;
  return total / static_cast<double>(points.size());
}

}  // namespace segdiff
