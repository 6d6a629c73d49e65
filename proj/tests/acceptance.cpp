// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

// Runs the nine acceptance criteria and prints one PASS/FAIL line for each.
//
// Environment:
//   SEGDIFF_ACCEPTANCE_DIR   work directory for the toy training run; an
//                            existing run with the same configuration is
//                            resumed instead of retrained
//   SEGDIFF_ACCEPTANCE_ONLY  comma-separated criterion numbers to run

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "segdiff/experiment.hpp"
#include "segdiff/forward_process.hpp"
#include "segdiff/metrics.hpp"
#include "segdiff/ops.hpp"
#include "segdiff/plot.hpp"

using namespace segdiff;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, const char* f = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor probe_loss(const Tensor& out) {
  Tensor target(out.shape());
  for (Index i = 0; i < target.numel(); ++i) target.values()[i] = std::cos(0.37 * static_cast<double>(i));
  return mse_loss(out, target);
}

// ---------------------------------------------------------------- criterion 1

Outcome gradients() {
  std::mt19937_64 r(1);
  double worst_op = 0;
  std::string worst_name;
  auto check = [&](const std::string& name, const std::function<Tensor()>& f,
                   std::vector<std::pair<std::string, Tensor>> inputs) {
    const auto rep = oracle::gradcheck(f, std::move(inputs));
    if (rep.worst >= worst_op) worst_op = rep.worst, worst_name = name + "/" + rep.worst_name;
  };
  Tensor x = Tensor::randn({2, 3, 5, 4}, r), w = Tensor::randn({4, 3, 3, 3}, r, 0.3), b = Tensor::randn({4}, r);
  check("conv2d", [&] { return probe_loss(conv2d(x, w, b, 1, 1)); }, {{"x", x}, {"w", w}, {"b", b}});
  check("conv2d_s2", [&] { return probe_loss(conv2d(x, w, b, 2, 1)); }, {{"x", x}, {"w", w}, {"b", b}});
  Tensor xg = Tensor::randn({2, 4, 3, 3}, r, 2.0), gm = Tensor::randn({4}, r), bt = Tensor::randn({4}, r);
  check("group_norm", [&] { return probe_loss(group_norm(xg, 2, gm, bt)); }, {{"x", xg}, {"g", gm}, {"b", bt}});
  Tensor wq = Tensor::randn({4, 4}, r, 0.5), wk = Tensor::randn({4, 4}, r, 0.5);
  Tensor wv = Tensor::randn({4, 4}, r, 0.5), wo = Tensor::randn({4, 4}, r, 0.5);
  check("attention", [&] { return probe_loss(attention(xg, 2, wq, wk, wv, wo)); },
        {{"x", xg}, {"wq", wq}, {"wk", wk}, {"wv", wv}, {"wo", wo}});
  Tensor a = Tensor::randn({2, 3, 2, 2}, r), c = Tensor::randn({2, 3, 2, 2}, r);
  check("add", [&] { return probe_loss(add(a, c)); }, {{"a", a}, {"b", c}});
  check("sub", [&] { return probe_loss(sub(a, c)); }, {{"a", a}, {"b", c}});
  check("mul_scalar", [&] { return probe_loss(mul_scalar(a, 1.3)); }, {{"x", a}});
  check("silu", [&] { return probe_loss(silu(a)); }, {{"x", a}});
  check("leaky_relu", [&] { return probe_loss(leaky_relu(a, 0.2)); }, {{"x", a}});
  check("upsample", [&] { return probe_loss(nearest_upsample_x2(a)); }, {{"x", a}});
  check("concat", [&] { return probe_loss(concat_channels({a, c})); }, {{"a", a}, {"b", c}});
  check("reshape", [&] { return probe_loss(a.reshape({6, 4})); }, {{"x", a}});
  Tensor one = Tensor::randn({1, 3, 2, 2}, r), v = Tensor::randn({2, 3}, r);
  check("repeat_batch", [&] { return probe_loss(repeat_batch(one, 3)); }, {{"x", one}});
  check("add_channel_bias", [&] { return probe_loss(add_channel_bias(a, v)); }, {{"x", a}, {"v", v}});
  Tensor in = Tensor::randn({3, 5}, r), lw = Tensor::randn({4, 5}, r), lb = Tensor::randn({4}, r);
  check("linear", [&] { return probe_loss(linear(in, lw, lb)); }, {{"x", in}, {"w", lw}, {"b", lb}});
  Tensor table = Tensor::randn({5, 3}, r);
  check("embedding", [&] { return probe_loss(embedding_lookup(table, {4, 1, 4})); }, {{"t", table}});
  check("sum", [&] { return sum(silu(a)); }, {{"x", a}});
  check("mean", [&] { return mean(silu(a)); }, {{"x", a}});
  check("mse", [&] { return mse_loss(a, c); }, {{"a", a}, {"b", c}});

  const ModelConfig cfg = ModelConfig::tiny();
  ModelParams p = init_params(cfg, 2);
  for (auto& [name, t] : p.entries())
    if (name.rfind("D.out", 0) == 0) t.values() = Tensor::randn(t.shape(), r, 0.3).values();
  Tensor xt = Tensor::randn({2, 1, 8, 8}, r), img = Tensor::randn({2, 3, 8, 8}, r);
  Tensor target = Tensor::randn({2, 1, 8, 8}, r);
  std::vector<std::pair<std::string, Tensor>> inputs;
  for (const auto& [name, t] : p) inputs.emplace_back(name, t);
  const auto rep = oracle::gradcheck([&] { return mse_loss(epsilon_theta(xt, img, {2, 9}, p, cfg), target); },
                                     inputs);
  const bool pass = worst_op < 1e-4 && rep.worst < 1e-3;
  return {pass, "ops worst " + num(worst_op) + " (" + worst_name + "), tiny model worst " + num(rep.worst) + " over " +
                    std::to_string(p.parameter_count()) + " parameters (" + rep.worst_name + ")"};
}

// ---------------------------------------------------------------- criterion 2

Outcome schedule_exactness() {
  bool ok = true;
  for (int T : {2, 25, 100, 1000}) {
    const DiffusionSchedule s(T);
    ok &= s.beta(1) == 1e-4 && s.beta(T) == 2e-2 && s.beta_tilde(1) == 0.0;
    for (int t = 1; t <= T; ++t) ok &= s.alpha_bar(t) < s.alpha_bar(t - 1);
  }
  return {ok, "T in {2,25,100,1000}: endpoints exact, beta_tilde_1 = 0, alpha_bar strictly decreasing"};
}

// ---------------------------------------------------------------- criterion 3

Outcome forward_moments() {
  const int T = 100, draws = 10000;
  const DiffusionSchedule s(T);
  Tensor x0({1, 1, 1, 2}, (Array(2) << 0.0, 1.0).finished());
  std::mt19937_64 rng(3);
  bool ok = true;
  double worst_z = 0, worst_var = 0;
  for (int t : {1, T / 2, T}) {
    Array sum = Array::Zero(2), sq = Array::Zero(2);
    for (int i = 0; i < draws; ++i) {
      const Array v = sample_xt(x0, t, s, rng).x_t.values();
      sum += v;
      sq += v.square();
    }
    const double var = 1 - s.alpha_bar(t), se = std::sqrt(var / draws);
    for (int k = 0; k < 2; ++k) {
      const double m = sum[k] / draws, vv = sq[k] / draws - m * m;
      const double z = std::abs(m - std::sqrt(s.alpha_bar(t)) * x0.values()[k]) / se;
      const double rel = std::abs(vv - var) / var;
      worst_z = std::max(worst_z, z);
      worst_var = std::max(worst_var, rel);
      ok &= z < 3 && rel < 0.05;
    }
  }
  return {ok, "T=100, t in {1,50,100}: worst mean deviation " + num(worst_z, "%.2f") + " SE, worst variance error " +
                  num(100 * worst_var, "%.2f") + "%"};
}

// ---------------------------------------------------------------- criterion 4

Outcome sampler_equivalence() {
  const int T = 100;
  const DiffusionSchedule s(T);
  std::mt19937_64 r(4);
  double worst = 0;
  for (int t = 1; t <= T; ++t) {
    const double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1);
    for (int i = 0; i < 1000; ++i) {
      Tensor x = Tensor::randn({1, 1, 2, 2}, r), eps = Tensor::randn({1, 1, 2, 2}, r), z = Tensor::randn({1, 1, 2, 2}, r);
      // Posterior mean of q(x_{t-1} | x_t, x0) at the x0 implied by eps, plus sigma_t z.
      const Array x0 = (x.values() - std::sqrt(1 - ab) * eps.values()) / std::sqrt(ab);
      Array mu = std::sqrt(ab_prev) * s.beta(t) / (1 - ab) * x0 +
                 std::sqrt(s.alpha(t)) * (1 - ab_prev) / (1 - ab) * x.values();
      if (t > 1) mu += s.sigma(t) * z.values();
      worst = std::max(worst, (reverse_step(x, eps, t, s, z).values() - mu).abs().maxCoeff());
    }
  }
  return {worst < 1e-12, "T=100, 1000 instances per t: max deviation " + num(worst)};
}

// ---------------------------------------------------------------- criterion 5

Outcome metric_oracles() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0;
  bool exact = true;
  std::vector<std::vector<double>> maps;
  std::vector<oracle::Grid> gts;
  std::vector<Tensor> map_t, gt_t;
  for (int trial = 0; trial < 1000; ++trial) {
    const oracle::Grid p = oracle::random_grid(rng, 8, 8), g = oracle::random_grid(rng, 8, 8);
    const Tensor pt = oracle::to_tensor(p, 8, 8), gtt = oracle::to_tensor(g, 8, 8);
    const double i = iou(pt, gtt), f = f1(pt, gtt);
    exact &= i == oracle::iou(p, g) && f == oracle::f1(p, g);
    worst = std::max({worst, std::abs(f - 2 * i / (1 + i)), std::abs(wcov(pt, gtt) - oracle::wcov(p, g, 8, 8)),
                      std::abs(fbound(pt, gtt) - oracle::fbound(p, g, 8, 8))});
    std::vector<double> m(64);
    for (auto& val : m) val = u(rng) < 0.1 ? std::round(u(rng) * 10) / 10 : u(rng);
    Tensor mt({1, 8, 8});
    for (int k = 0; k < 64; ++k) mt.values()[k] = m[static_cast<std::size_t>(k)];
    maps.push_back(m);
    gts.push_back(g);
    map_t.push_back(mt);
    gt_t.push_back(gtt);
    worst = std::max(worst, std::abs(calibration_score({mt}, {gtt}).score - oracle::calibration({m}, {g})));
  }
  worst = std::max(worst, std::abs(calibration_score(map_t, gt_t).score - oracle::calibration(maps, gts)));
  return {exact && worst < 1e-12, std::string("1000 random 8x8 pairs: iou/f1 ") + (exact ? "exact" : "MISMATCH") +
                                      ", worst deviation elsewhere " + num(worst)};
}

// ---------------------------------------------------------- criteria 6 and 7

struct ToyRun {
  bool ok = false;
  std::string error;
  std::int64_t steps = 0;
  double train_seconds = 0;
  EnsembleEvaluation eval;
  double eval_seconds = 0;
};

ToyRun train_and_evaluate(const fs::path& work) {
  ToyRun run;
  const ExperimentConfig cfg = resolve_config(json::object());  // seed 7, 200/50, 32x32, T=25, toy model
  CommandContext ctx;
  ctx.out = work;
  ctx.resume = true;
  std::ostringstream log;
  ctx.log = &log;
  try {
    fs::create_directories(work);
    cmd_gen(cfg, ctx);
    const auto t0 = std::chrono::steady_clock::now();
    const TrainState state = cmd_train(cfg, ctx);
    run.train_seconds = seconds_since(t0);
    run.steps = state.opt.step;
    const DatasetManifest val = read_manifest(work / "data" / "val");
    const auto samples = load_dataset(val);
    const auto t1 = std::chrono::steady_clock::now();
    run.eval = evaluate_ensembles(samples, state.params, state.model, DiffusionSchedule(cfg.T), 30,
                                  cfg.infer.base_seed, cfg.infer.chunk_size);
    run.eval_seconds = seconds_since(t1);
    run.ok = true;
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  return run;
}

Outcome toy_end_to_end(const ToyRun& run) {
  if (!run.ok) return {false, "toy run failed: " + run.error};
  const double single = run.eval.miou_at(1), ens = run.eval.miou_at(30);
  const bool pass = run.steps <= 20000 && single >= 0.80 && ens >= single - 0.01;
  return {pass, std::to_string(run.steps) + " steps (" + num(run.train_seconds, "%.0f") + "s this session): single-generation mIoU " +
                    num(single, "%.4f") + ", 30-generation mIoU " + num(ens, "%.4f") + " (need >= 0.80 and >= single - 0.01)"};
}

Outcome ensemble_trends(const ToyRun& run) {
  if (!run.ok) return {false, "toy run failed: " + run.error};
  std::string curve;
  bool monotone = true;
  double best = -1;
  for (int n = 1; n <= 9; ++n) {
    const double m = run.eval.miou_at(n);
    curve += (n > 1 ? " " : "") + num(m, "%.4f");
    if (best >= 0 && m < best - 0.01) monotone = false;
    best = std::max(best, m);
  }
  const double c1 = run.eval.calibration_at(1), c9 = run.eval.calibration_at(9);
  return {monotone && c9 <= c1, "mIoU n=1..9: " + curve + "; calibration n=1 " + num(c1, "%.5f") + ", n=9 " + num(c9, "%.5f") +
                                    " (eval " + num(run.eval_seconds, "%.0f") + "s)"};
}

// ---------------------------------------------------------------- criterion 8

Outcome timing_linearity() {
  std::vector<double> Ts, secs;
  std::mt19937_64 r(8);
  Tensor image = Tensor::randn({1, 3, 32, 32}, r);
  for (int T : {25, 50, 75, 100}) {
    ModelConfig cfg = ModelConfig::toy();
    cfg.time_steps = T;
    const ModelParams p = init_params(cfg, 0);
    const DiffusionSchedule s(T);
    double best = 1e300;
    for (int rep = 0; rep < 3; ++rep) best = std::min(best, generate(image, p, cfg, s, 11 + rep).wall_seconds);
    Ts.push_back(T);
    secs.push_back(best);
  }
  const LinearFit f = fit_line(Ts, secs);
  std::string pts;
  for (std::size_t i = 0; i < Ts.size(); ++i) pts += (i ? ", " : "") + num(Ts[i], "%.0f") + ":" + num(secs[i], "%.3f") + "s";
  return {f.r_squared > 0.99, "T:seconds " + pts + "; R^2 = " + num(f.r_squared, "%.5f")};
}

// ---------------------------------------------------------------- criterion 9

json tiny_patch() {
  return json::parse(R"({
    "T": 5,
    "data": {"n_train": 8, "n_val": 4, "size": 16},
    "model": {"base_channels": 4, "depth": 2, "channel_multipliers": [1, 2],
              "attention_resolutions": [8], "heads": 2, "norm_groups": 2, "time_embed_dim": 16},
    "train": {"max_steps": 6, "batch_size": 3, "checkpoint_every": 3, "log_every": 3},
    "infer": {"n": 3, "chunk_size": 2},
    "sweep_steps": {"T_values": [3, 5]},
    "sweep_instances": {"n_values": [1, 3]}
  })");
}

// Drops timing fields, which measure the machine rather than the computation.
std::string canonical(const fs::path& rel, const std::string& text) {
  const std::string name = rel.filename().string();
  if (name == "predictions.json") {
    json j = json::parse(text);
    j.erase("timing");
    return j.dump();
  }
  if (name == "sweep_steps.csv") {
    std::stringstream in(text);
    std::string out;
    for (std::string line; std::getline(in, line);) out += line.substr(0, line.rfind(',')) + "\n";
    return out;
  }
  return text;
}

bool compared(const fs::path& rel) {
  const std::string name = rel.filename().string(), ext = rel.extension().string();
  if (name == "fit.json" || name == "sweep_steps.svg") return false;  // built from timing
  return ext == ".csv" || ext == ".ckpt" || ext == ".json" || ext == ".pgm" || ext == ".ppm" || ext == ".svg" ||
         ext == ".txt";
}

Outcome determinism(const fs::path& scratch) {
  const fs::path a = scratch / "det_a", b = scratch / "det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  fs::create_directories(a);
  fs::create_directories(b);
  const json patch = tiny_patch();
  const ExperimentConfig cfg = resolve_config(patch);
  write_text_atomic(scratch / "det_config.json", patch.dump(2));
  const char* commands[] = {"gen", "train", "infer", "eval", "sweep-steps", "sweep-instances"};
  std::ostringstream err;
  for (const char* c : commands) {
    CommandContext ctx;
    ctx.out = a;
    if (run_command(c, cfg, ctx, err) != 0) return {false, std::string("in-process ") + c + " failed: " + err.str()};
    const std::string cmd = std::string(SEGDIFF_CLI_PATH) + " " + c + " --quiet --config " +
                            (scratch / "det_config.json").string() + " --out " + b.string() + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return {false, std::string("cli ") + c + " failed"};
  }
  int files = 0, csvs = 0, ckpts = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    if (!compared(rel)) continue;
    if (!fs::exists(b / rel)) return {false, "second run lacks " + rel.string()};
    if (canonical(rel, read_text(a / rel)) != canonical(rel, read_text(b / rel)))
      return {false, rel.string() + " differs between runs"};
    ++files;
    csvs += rel.extension() == ".csv";
    ckpts += rel.extension() == ".ckpt";
  }
  fs::remove_all(a);
  fs::remove_all(b);
  return {files > 0 && csvs >= 4 && ckpts >= 3,
          "library run vs CLI run of all six commands: " + std::to_string(files) + " files identical (" +
              std::to_string(csvs) + " CSVs, " + std::to_string(ckpts) + " checkpoints; timing fields excluded)"};
}

std::set<int> criteria_from_env(const char* name) {
  std::set<int> out;
  if (const char* env = std::getenv(name)) {
    std::stringstream ss(env);
    for (std::string tok; std::getline(ss, tok, ',');)
      if (!tok.empty()) out.insert(std::stoi(tok));
  }
  return out;
}

}  // namespace

// SEGDIFF_ACCEPTANCE_KNOWN_FAIL lists criteria whose failure is documented; they still
// print FAIL but do not change the exit status.
int main() {
  const std::set<int> only = criteria_from_env("SEGDIFF_ACCEPTANCE_ONLY");
  const std::set<int> known = criteria_from_env("SEGDIFF_ACCEPTANCE_KNOWN_FAIL");
  auto wanted = [&](int k) { return only.empty() || only.count(k) != 0; };
  const fs::path work = std::getenv("SEGDIFF_ACCEPTANCE_DIR") ? fs::path(std::getenv("SEGDIFF_ACCEPTANCE_DIR"))
                                                              : fs::path(SEGDIFF_ACCEPTANCE_DEFAULT_DIR);
  fs::create_directories(work);

  int failed = 0, excused = 0;
  auto report = [&](int k, const char* title, const std::function<Outcome()>& fn) {
    if (!wanted(k)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    excused += !o.pass && known.count(k) != 0;
    std::printf("criterion %d [%s] %s: %s (%.1fs)%s\n", k, o.pass ? "PASS" : "FAIL", title, o.detail.c_str(),
                seconds_since(t0), !o.pass && known.count(k) ? " [known failure]" : "");
    std::fflush(stdout);
  };

  report(1, "gradient correctness", gradients);
  report(2, "schedule exactness", schedule_exactness);
  report(3, "forward-process moments", forward_moments);
  report(4, "sampler equivalence", sampler_equivalence);
  report(5, "metric oracles", metric_oracles);
  ToyRun toy;
  if (wanted(6) || wanted(7)) toy = train_and_evaluate(work / "toy");
  report(6, "end-to-end toy training", [&] { return toy_end_to_end(toy); });
  report(7, "ensemble trends", [&] { return ensemble_trends(toy); });
  report(8, "timing linearity", timing_linearity);
  report(9, "determinism", [&] { return determinism(work); });
  std::printf("%d criteria failed (%d known)\n", failed, excused);
  return failed == excused ? 0 : 1;
}
