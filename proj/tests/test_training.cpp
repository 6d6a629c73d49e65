// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "doctest.h"
#include "segdiff/errors.hpp"
#include "segdiff/ops.hpp"
#include "segdiff/training.hpp"

using namespace segdiff;
namespace fs = std::filesystem;

namespace {

std::vector<Sample> synthetic_set(int n, int size, std::uint64_t seed) {
  SyntheticParams p;
  p.height = p.width = size;
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) out.push_back(render_synthetic(rng, p, "s" + std::to_string(i)).first);
  return out;
}

TrainConfig tiny_train(int steps) {
  TrainConfig t;
  t.T = 10;
  t.batch_size = 3;
  t.lr = 1e-3;
  t.max_steps = steps;
  t.seed = 17;
  t.augment.hflip = t.augment.rotate = true;
  return t;
}

bool same_bits(const ModelParams& a, const ModelParams& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !(ia->second.values() == ib->second.values()).all()) return false;
  }
  return true;
}

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("segdiff_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("AdamW decouples weight decay from the adaptive step") {
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.1;
  ModelParams p;
  p.add("w", Tensor::full({1}, 1.0));
  OptimizerState opt = OptimizerState::zeros_like(p);

  // Reference: explicit scalar recursion, gradient fixed at 0.5.
  double theta = 1.0, m = 0, v = 0;
  for (int k = 1; k <= 5; ++k) {
    p.zero_grad();
    backward(sum(mul_scalar(p.at("w"), 0.5)));
    adamw_step(p, opt, cfg);
    m = 0.9 * m + 0.1 * 0.5;
    v = 0.999 * v + 0.001 * 0.25;
    const double mh = m / (1 - std::pow(0.9, k)), vh = v / (1 - std::pow(0.999, k));
    theta -= 0.1 * (mh / (std::sqrt(vh) + 1e-8) + 0.1 * theta);
    CHECK(p.at("w").values()[0] == doctest::Approx(theta).epsilon(1e-14));
  }
  CHECK(opt.step == 5);
  // First step by hand: 1 - 0.1 * (1 + 0.1) = 0.89. Folding the decay into
  // the gradient instead would give exactly 0.9.
  ModelParams q;
  q.add("w", Tensor::full({1}, 1.0));
  OptimizerState o2 = OptimizerState::zeros_like(q);
  backward(sum(mul_scalar(q.at("w"), 0.5)));
  adamw_step(q, o2, cfg);
  CHECK(q.at("w").values()[0] == doctest::Approx(0.89).epsilon(1e-7));
}

TEST_CASE("optimizer rejects mismatched state") {
  ModelParams p;
  p.add("w", Tensor::full({2}, 1.0));
  OptimizerState opt;
  CHECK_THROWS_AS(adamw_step(p, opt, TrainConfig{}), DimensionError);
}

TEST_CASE("timesteps are uniform on 1..T") {
  const int T = 25, draws = 100000;
  std::mt19937_64 rng(5);
  std::vector<int> hist(T + 1, 0);
  for (int i = 0; i < draws; ++i) {
    const int t = sample_timestep(rng, T);
    REQUIRE(t >= 1);
    REQUIRE(t <= T);
    ++hist[t];
  }
  const double expect = static_cast<double>(draws) / T;
  double chi2 = 0;
  for (int t = 1; t <= T; ++t) chi2 += (hist[t] - expect) * (hist[t] - expect) / expect;
  CHECK(chi2 < 51.18);  // 24 degrees of freedom, p = 0.001
}

TEST_CASE("batch indices cover each epoch once") {
  std::map<std::size_t, int> seen;
  for (int step = 0; step < 4; ++step)
    for (std::size_t i : batch_indices(3, step, 5, 20)) ++seen[i];
  CHECK(seen.size() == 20);
  for (const auto& [i, c] : seen) CHECK(c == 1);
  CHECK(batch_indices(3, 2, 5, 20) == batch_indices(3, 2, 5, 20));
  CHECK(batch_indices(3, 2, 5, 20) != batch_indices(4, 2, 5, 20));
}

TEST_CASE("initial loss is the noise variance") {
  const ModelConfig model = ModelConfig::toy();
  TrainConfig cfg;
  cfg.T = model.time_steps;
  const auto data = synthetic_set(8, 32, 1);
  ModelParams params = init_params(model, 0);
  OptimizerState opt = OptimizerState::zeros_like(params);
  std::mt19937_64 rng(2);
  const double loss = training_step(data, params, model, opt, DiffusionSchedule(cfg.T), cfg, rng);
  CHECK(loss == doctest::Approx(1.0).epsilon(0.08));
}

TEST_CASE("every parameter group receives gradient by the second step") {
  ModelConfig model = ModelConfig::tiny();
  TrainConfig cfg = tiny_train(2);
  const auto data = synthetic_set(4, 8, 3);
  TrainState s = start_training(model, cfg);
  const ModelParams before = s.params.clone();
  DiffusionSchedule sched(cfg.T);
  std::mt19937_64 rng(4);
  training_step(data, s.params, model, s.opt, sched, cfg, rng);
  training_step(data, s.params, model, s.opt, sched, cfg, rng);
  std::map<std::string, double> grad2, moved;
  auto it = before.begin();
  for (const auto& [name, t] : s.params) {
    grad2[parameter_group(name)] += t.grad().square().sum();
    moved[parameter_group(name)] += (t.values() - (it++)->second.values()).abs().sum();
  }
  for (const char* g : {"G", "F", "E", "D", "time_table"}) {
    CAPTURE(g);
    CHECK(grad2[g] > 0);
    CHECK(moved[g] > 0);
  }
}

TEST_CASE("training is deterministic and resumes exactly") {
  const auto data = synthetic_set(5, 8, 9);
  const ModelConfig model = ModelConfig::tiny();

  TrainState a = start_training(model, tiny_train(6));
  train_loop(a, data);
  TrainState b = start_training(model, tiny_train(6));
  train_loop(b, data);
  CHECK(same_bits(a.params, b.params));
  REQUIRE(a.losses.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(a.losses[i].loss == b.losses[i].loss);

  const fs::path dir = temp_dir("resume");
  TrainState half = start_training(model, tiny_train(3));
  int checkpoints = 0;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const TrainState&) { ++checkpoints; };
  half.train.checkpoint_every = 1;
  train_loop(half, data, hooks);
  CHECK(checkpoints == 3);
  save_checkpoint(dir / "half.ckpt", half);
  TrainState resumed = load_checkpoint(dir / "half.ckpt");
  resumed.train.max_steps = 6;
  train_loop(resumed, data);
  CHECK(resumed.opt.step == 6);
  CHECK(same_bits(resumed.params, a.params));
  for (std::size_t i = 0; i < 6; ++i) CHECK(resumed.losses[i].loss == a.losses[i].loss);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip, version check and size bound") {
  const auto data = synthetic_set(3, 8, 21);
  TrainState s = start_training(ModelConfig::tiny(), tiny_train(2));
  train_loop(s, data);
  const fs::path dir = temp_dir("ckpt");
  const fs::path path = dir / "a.ckpt";
  save_checkpoint(path, s);

  const TrainState r = load_checkpoint(path);
  CHECK(same_bits(r.params, s.params));
  CHECK(r.opt.step == s.opt.step);
  for (std::size_t i = 0; i < s.opt.m.size(); ++i) {
    CHECK((r.opt.m[i] == s.opt.m[i]).all());
    CHECK((r.opt.v[i] == s.opt.v[i]).all());
  }
  CHECK(nlohmann::json(r.model) == nlohmann::json(s.model));
  CHECK(nlohmann::json(r.train) == nlohmann::json(s.train));
  REQUIRE(r.losses.size() == 2);
  CHECK(r.losses[1].loss == s.losses[1].loss);

  // Three float64 arrays per parameter plus a bounded header.
  const auto bytes = static_cast<Index>(fs::file_size(path));
  const Index payload = 8 * (3 * s.params.parameter_count() + 4 * (s.train.T + 1) + 2);
  CHECK(bytes >= payload);
  CHECK(bytes <= payload + 64 * 1024);

  std::vector<char> raw(static_cast<std::size_t>(bytes));
  std::ifstream(path, std::ios::binary).read(raw.data(), bytes);
  CHECK(std::string(raw.data(), 8) == "SEGDCKPT");

  auto write_variant = [&](const std::string& name, std::size_t at, char value) {
    std::vector<char> copy = raw;
    copy[at] = value;
    std::ofstream(dir / name, std::ios::binary).write(copy.data(), bytes);
    return dir / name;
  };
  CHECK_THROWS_AS(load_checkpoint(write_variant("v2.ckpt", 8, 2)), ParseError);
  CHECK_THROWS_AS(load_checkpoint(write_variant("magic.ckpt", 0, 'X')), ParseError);
  {
    std::ofstream(dir / "short.ckpt", std::ios::binary).write(raw.data(), bytes / 2);
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), ParseError);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("train config validation") {
  TrainConfig t;
  CHECK_NOTHROW(t.validate());
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.T = 1;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  const TrainConfig back = nlohmann::json(tiny_train(4)).get<TrainConfig>();
  CHECK(nlohmann::json(back) == nlohmann::json(tiny_train(4)));
  ModelConfig m = ModelConfig::tiny();
  m.time_steps = 7;
  CHECK_THROWS_AS(start_training(m, tiny_train(1)), ConfigError);
}
