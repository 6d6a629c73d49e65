// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "segdiff/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <random>
#include <string>
#include <thread>

#include "segdiff/ops.hpp"

namespace segdiff {

Tensor reverse_step(const Tensor& x_t, const Tensor& eps_hat, int t, const DiffusionSchedule& sched,
                    const Tensor& z) {
  const double alpha = sched.alpha(t);  // range-checks t
  if (x_t.shape() != eps_hat.shape() || (t > 1 && x_t.shape() != z.shape())) {
    throw DimensionError("reverse_step: x_t, eps_hat and z must share a shape");
  }
  const double coef = (1.0 - alpha) / std::sqrt(1.0 - sched.alpha_bar(t));
  Array next = (x_t.values() - coef * eps_hat.values()) / std::sqrt(alpha);
  if (t > 1) next += std::sqrt(sched.beta_tilde(t)) * z.values();
  return Tensor(x_t.shape(), std::move(next));
}

Tensor reverse_step(const Tensor& x_t, const Tensor& image, int t, const ModelParams& params,
                    const ModelConfig& config, const DiffusionSchedule& sched, const Tensor& z) {
  NoGradGuard no_grad;
  return reverse_step(x_t, epsilon_theta(x_t, image, t, params, config), t, sched, z);
}

namespace {

// Runs one reverse chain per seed, batched through the denoiser.
std::vector<GenerationTrace> run_chains(const Tensor& condition, const ModelParams& params,
                                        const ModelConfig& config, const DiffusionSchedule& sched,
                                        const std::vector<std::uint64_t>& seeds,
                                        const std::set<int>& snapshot_steps) {
  NoGradGuard no_grad;
  const auto start = std::chrono::steady_clock::now();
  const Index k = static_cast<Index>(seeds.size());
  const Index h = condition.dim(2), w = condition.dim(3), len = h * w;
  std::vector<std::mt19937_64> rngs;
  for (auto s : seeds) rngs.emplace_back(s);

  auto draw = [&](Tensor& target) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index i = 0; i < k; ++i)
      for (Index j = 0; j < len; ++j) target.values()[i * len + j] = normal(rngs[i]);
  };

  std::vector<GenerationTrace> traces(seeds.size());
  Tensor x({k, 1, h, w});
  draw(x);
  const Tensor cond = condition.dim(0) == k ? condition : repeat_batch(condition, k);
  Tensor z({k, 1, h, w});
  const int T = sched.steps();
  for (int t = T; t >= 1; --t) {
    std::vector<int> steps(static_cast<std::size_t>(k), t);
    Tensor eps = epsilon_from_condition(x, cond, steps, params, config);
    if (t > 1) draw(z);
    x = reverse_step(x, eps, t, sched, z);
    if (!x.values().allFinite()) {
      throw DivergenceError("sampling produced non-finite values at step t=" + std::to_string(t));
    }
    if (snapshot_steps.count(t - 1)) {
      for (Index i = 0; i < k; ++i)
        traces[i].snapshots[t - 1] = Tensor({1, 1, h, w}, x.values().segment(i * len, len));
    }
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (Index i = 0; i < k; ++i) {
    auto& tr = traces[i];
    tr.x_final = Tensor({1, 1, h, w}, x.values().segment(i * len, len));
    tr.seed = seeds[i];
    tr.steps_used = T;
    tr.wall_seconds = seconds / static_cast<double>(k);
  }
  return traces;
}

void check_image(const Tensor& image, const ModelConfig& config) {
  if (!image.defined() || image.rank() != 4 || image.dim(0) != 1 ||
      image.dim(1) != config.image_channels) {
    throw DimensionError("generation expects a single [1," + std::to_string(config.image_channels) +
                         ",H,W] image");
  }
}

}  // namespace

GenerationTrace generate(const Tensor& image, const ModelParams& params, const ModelConfig& config,
                         const DiffusionSchedule& sched, std::uint64_t seed,
                         const std::set<int>& snapshot_steps) {
  check_image(image, config);
  NoGradGuard no_grad;
  const Tensor cond = encode_condition(image, params, config);
  return std::move(run_chains(cond, params, config, sched, {seed}, snapshot_steps).front());
}

Tensor ensemble_mean(const std::vector<Tensor>& generations) {
  if (generations.empty()) throw ConfigError("ensemble_mean: need at least one generation");
  Array acc = generations.front().values();
  for (std::size_t i = 1; i < generations.size(); ++i) {
    if (generations[i].shape() != generations.front().shape()) {
      throw DimensionError("ensemble_mean: generations differ in shape");
    }
    acc += generations[i].values();
  }
  acc /= static_cast<double>(generations.size());
  return Tensor(generations.front().shape(), acc.cwiseMax(0.0).cwiseMin(1.0));
}

EnsembleResult ensemble_generate(const Tensor& image, const ModelParams& params,
                                 const ModelConfig& config, const DiffusionSchedule& sched, int n,
                                 std::uint64_t base_seed, const EnsembleOptions& options) {
  if (n < 1) throw ConfigError("ensemble_generate: n must be >= 1, got " + std::to_string(n));
  check_image(image, config);
  Tensor cond;
  {
    NoGradGuard no_grad;
    cond = encode_condition(image, params, config);
  }
  const int chunk = std::max(1, options.chunk_size);
  std::vector<std::vector<std::uint64_t>> chunks;
  for (int i = 0; i < n; i += chunk) {
    std::vector<std::uint64_t> seeds;
    for (int j = i; j < std::min(n, i + chunk); ++j) seeds.push_back(base_seed + static_cast<std::uint64_t>(j));
    chunks.push_back(std::move(seeds));
  }

  std::vector<std::vector<GenerationTrace>> results(chunks.size());
  const int workers = std::clamp(options.threads, 1, static_cast<int>(chunks.size()));
  if (workers == 1) {
    for (std::size_t c = 0; c < chunks.size(); ++c)
      results[c] = run_chains(cond, params, config, sched, chunks[c], {});
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int wkr = 0; wkr < workers; ++wkr) {
      pool.emplace_back([&, wkr] {
        try {
          for (std::size_t c = static_cast<std::size_t>(wkr); c < chunks.size(); c += static_cast<std::size_t>(workers))
            results[c] = run_chains(cond, params, config, sched, chunks[c], {});
        } catch (...) {
          errors[static_cast<std::size_t>(wkr)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  EnsembleResult out;
  out.n = n;
  for (auto& r : results)
    for (auto& tr : r) out.generations.push_back(std::move(tr));
  std::vector<Tensor> finals;
  for (const auto& g : out.generations) finals.push_back(g.x_final);
  out.mean_map = ensemble_mean(finals);
  return out;
}

Tensor binarize(const Tensor& map, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("binarize: threshold must lie in (0, 1)");
  }
  return Tensor(map.shape(), (map.values() >= threshold).cast<double>());
}

int worker_threads_from_env() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SEGDIFF_THREADS")) {
    try {
      n = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("SEGDIFF_THREADS must be an integer, got '") + env + "'");
    }
  }
  return std::max(1, n);
}

}  // namespace segdiff
