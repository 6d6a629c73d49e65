// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "segdiff/errors.hpp"
#include "segdiff/experiment.hpp"
#include "segdiff/plot.hpp"

using namespace segdiff;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("segdiff_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Small enough that the whole pipeline runs in seconds.
json tiny_patch() {
  return json::parse(R"({
    "T": 4,
    "data": {"n_train": 6, "n_val": 3, "size": 8},
    "model": {"base_channels": 4, "depth": 2, "channel_multipliers": [1, 2],
              "attention_resolutions": [4], "heads": 2, "norm_groups": 2, "time_embed_dim": 16},
    "train": {"max_steps": 4, "batch_size": 2, "checkpoint_every": 2, "log_every": 2},
    "infer": {"n": 2, "chunk_size": 2},
    "sweep_steps": {"T_values": [2, 3, 4]},
    "sweep_instances": {"n_values": [1, 2]}
  })");
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SEGDIFF_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) { return read_text(p); }

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

}  // namespace

TEST_CASE("config resolution") {
  const ExperimentConfig d = resolve_config(json::object());
  CHECK(d.T == 25);
  CHECK(d.model.time_steps == 25);
  CHECK(d.train.T == 25);
  CHECK(d.data.seed == 7);
  CHECK(d.data.n_train == 200);
  CHECK(d.data.n_val == 50);

  const ExperimentConfig c = resolve_config(json{{"T", 50}, {"data", {{"size", 16}}}});
  CHECK(c.model.time_steps == 50);
  CHECK(c.train.T == 50);
  CHECK(c.model.input_height == 16);
  CHECK(c.data.params.width == 16);

  CHECK_THROWS_AS(resolve_config(json{{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(json{{"train", {{"nope", 1}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(json{{"T", 50}, {"train", {{"T", 30}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(json{{"train", {{"lr", -1.0}}}}), ConfigError);

  // Round trip through JSON is stable.
  const json j = c;
  CHECK(json(resolve_config(j)) == j);
}

TEST_CASE("overrides become merge patches") {
  const json p = overrides_to_patch("train", {{"seed", "3"}, {"lr", "5e-4"}, {"train.batch_size", "4"}});
  CHECK(p["train"]["seed"] == 3);
  CHECK(p["train"]["lr"] == 5e-4);
  CHECK(p["train"]["batch_size"] == 4);
  const json g = overrides_to_patch("gen", {{"seed", "7"}, {"n", "200"}, {"size", "32"}});
  CHECK(g["data"]["seed"] == 7);
  CHECK(g["data"]["n_train"] == 200);
  CHECK(g["data"]["size"] == 32);
  const json s = overrides_to_patch("sweep-steps", {{"T-values", "25,50"}, {"reuse-model", "true"}});
  CHECK(s["sweep_steps"]["T_values"] == json::array({25, 50}));
  CHECK(s["sweep_steps"]["reuse_model"] == true);
  const json i = overrides_to_patch("infer", {{"checkpoint", "x/y.ckpt"}});
  CHECK(i["infer"]["checkpoint"] == "x/y.ckpt");
}

TEST_CASE("line fit") {
  const LinearFit f = fit_line({1, 2, 3, 4}, {3, 5, 7, 9});
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.intercept == doctest::Approx(1.0));
  CHECK(f.r_squared == doctest::Approx(1.0));
  CHECK(fit_line({1, 2, 3}, {1, 3, 2}).r_squared == doctest::Approx(0.25));
}

TEST_CASE("SVG emission is pure") {
  Panel p{"loss", "step", "value", {{"train", {1, 2, 3}, {0.5, 0.25, 0.125}}}};
  const std::string a = render_svg({p}), b = render_svg({p});
  CHECK(a == b);
  CHECK(a.find("<svg") != std::string::npos);
  CHECK(a.find("<polyline") != std::string::npos);
  const CsvTable t = parse_csv("n,miou\n1,0.5\n3,0.75\n");
  CHECK(t.header == std::vector<std::string>{"n", "miou"});
  CHECK(t.column("miou") == std::vector<double>{0.5, 0.75});
}

TEST_CASE("gen twice gives identical directories") {
  const fs::path a = fresh("gen_a"), b = fresh("gen_b");
  REQUIRE(run_cli("gen --out " + a.string() + " --seed 7 --n 20 --n-val 5 --size 32") == 0);
  REQUIRE(run_cli("gen --out " + b.string() + " --seed 7 --n 20 --n-val 5 --size 32") == 0);
  const auto ta = tree(a), tb = tree(b);
  CHECK(ta.size() == 20 * 2 + 5 * 2 + 2 + 2);
  CHECK(ta == tb);
  CHECK(ta.count("data/config.json") == 1);
  CHECK(ta.count("data/version.txt") == 1);
  CHECK(ta.at("data/version.txt").find(build_version()) != std::string::npos);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("exit codes and failure markers") {
  const fs::path d = fresh("codes");
  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("gen --out " + d.string() + " --no-such-key 3") == 1);
  CHECK(run_cli("gen --config /nonexistent.json") == 1);
  CHECK(run_cli("gen --out " + d.string() + " --seed") == 1);
  CHECK(run_cli("eval --out " + d.string()) == 2);
  CHECK_FALSE(fs::exists(d / "eval"));
  // A stale output directory is marked rather than left looking valid.
  fs::create_directories(d / "eval");
  CHECK(run_cli("eval --out " + d.string()) == 2);
  CHECK(fs::exists(d / "eval" / "FAILED"));
  CHECK(run_cli("--version") == 0);
  fs::remove_all(d);
}

TEST_CASE("eval on ground-truth copies scores 1") {
  const fs::path d = fresh("eval_gt");
  const ExperimentConfig cfg = resolve_config(tiny_patch());
  CommandContext ctx;
  ctx.out = d;
  cmd_gen(cfg, ctx);
  const DatasetManifest m = read_manifest(d / "data" / "val");
  json samples = json::array();
  for (const auto& e : m.entries) {
    const std::string rel = "../data/val/" + e.mask;
    samples.push_back({{"id", e.id}, {"mask", rel}, {"map", rel}});
  }
  fs::create_directories(d / "infer");
  write_text_atomic(d / "infer" / "predictions.json", json{{"split", "val"}, {"samples", samples}}.dump());
  cmd_eval(cfg, ctx);
  const CsvTable t = parse_csv(slurp(d / "eval" / "metrics.csv"));
  CHECK(t.header == std::vector<std::string>{"sample_id", "miou", "f1", "wcov", "fbound"});
  for (const char* col : {"miou", "f1", "wcov", "fbound"})
    for (double v : t.column(col)) CHECK(v == 1.0);
  CHECK(json::parse(slurp(d / "eval" / "calibration.json")).at("score") == 0.0);
  fs::remove_all(d);
}

TEST_CASE("tiny pipeline produces every artifact, reproducibly") {
  const fs::path a = fresh("pipe_a"), b = fresh("pipe_b");
  const ExperimentConfig cfg = resolve_config(tiny_patch());
  std::ostringstream err;
  for (const fs::path& root : {a, b}) {
    CommandContext ctx;
    ctx.out = root;
    for (const char* c : {"gen", "train", "infer", "eval", "sweep-steps", "sweep-instances"}) {
      CAPTURE(c);
      REQUIRE(run_command(c, cfg, ctx, err) == 0);
    }
  }
  for (const char* f : {"train/loss.csv", "train/checkpoints/final.ckpt", "train/checkpoints/step_0000002.ckpt",
                        "infer/predictions.json", "eval/metrics.csv", "eval/calibration.json",
                        "sweep_steps/sweep_steps.csv", "sweep_steps/sweep_steps.svg", "sweep_steps/fit.json",
                        "sweep_instances/sweep_instances.csv", "sweep_instances/sweep_instances.svg"}) {
    CAPTURE(f);
    CHECK(fs::exists(a / f));
  }
  for (const char* dir : {"train", "infer", "eval", "sweep_steps", "sweep_instances"}) {
    CHECK(fs::exists(a / dir / "config.json"));
    CHECK(json::parse(slurp(a / dir / "config.json")) == json(cfg));
  }
  for (const char* f : {"train/loss.csv", "train/checkpoints/final.ckpt", "eval/metrics.csv",
                        "eval/calibration.json", "sweep_instances/sweep_instances.csv",
                        "sweep_instances/sweep_instances.svg"}) {
    CAPTURE(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(parse_csv(slurp(a / "sweep_steps/sweep_steps.csv")).column("T") == std::vector<double>{2, 3, 4});
  CHECK(parse_csv(slurp(a / "sweep_instances/sweep_instances.csv")).column("n") == std::vector<double>{1, 2});

  // SVG is a pure function of the CSV it plots.
  CHECK(slurp(a / "sweep_instances/sweep_instances.svg") == slurp(b / "sweep_instances/sweep_instances.svg"));

  // Resuming a finished run changes nothing; extending it continues from the last checkpoint.
  CommandContext rc;
  rc.out = a;
  rc.resume = true;
  ExperimentConfig longer = cfg;
  longer.train.max_steps = 6;
  const TrainState resumed = cmd_train(longer, rc);
  CHECK(resumed.opt.step == 6);
  CommandContext fc;
  fc.out = b;
  const TrainState direct = cmd_train(longer, fc);
  auto ia = resumed.params.begin();
  for (const auto& [name, t] : direct.params) CHECK(((ia++)->second.values() == t.values()).all());
  fs::remove_all(a);
  fs::remove_all(b);
}
