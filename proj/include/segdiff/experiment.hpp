// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "segdiff/data.hpp"
#include "segdiff/inference.hpp"
#include "segdiff/model.hpp"
#include "segdiff/training.hpp"

namespace segdiff {

struct DataSection {
  std::uint64_t seed = 7;
  int n_train = 200;
  int n_val = 50;
  int size = 32;
  SyntheticParams params;
};

struct InferSection {
  std::string checkpoint = "train/checkpoints/final.ckpt";
  std::string split = "val";
  int n = 30;
  std::uint64_t base_seed = 1000;
  double threshold = 0.5;
  int chunk_size = 10;
  int limit = 0;  // 0 = every sample in the split
};

struct SweepStepsSection {
  std::vector<int> T_values{25, 50, 75, 100};
  bool reuse_model = false;   // resample the infer checkpoint instead of one model per T
  bool train_missing = true;  // train absent per-T checkpoints instead of skipping them
  int n = 1;
  int limit = 0;
};

struct SweepInstancesSection {
  std::vector<int> n_values{1, 3, 9, 25, 30};
  int limit = 0;
};

/// Everything a command needs. `T` is authoritative: model.time_steps and
/// train.T are overwritten with it during resolution.
struct ExperimentConfig {
  int T = 25;
  DataSection data;
  ModelConfig model = ModelConfig::toy();
  TrainConfig train = default_toy_train();
  InferSection infer;
  SweepStepsSection sweep_steps;
  SweepInstancesSection sweep_instances;

  static TrainConfig default_toy_train();
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Applies `patch` (a JSON merge patch) on top of the defaults, rejecting
/// keys the defaults do not have, then syncs T and validates.
ExperimentConfig resolve_config(const nlohmann::json& patch);

/// Turns `--key value` pairs into a merge patch. Keys are dotted paths into
/// the config (`train.lr`) or command-specific aliases (`seed`, `n`, ...).
/// Values are parsed as JSON when possible, otherwise taken as strings.
nlohmann::json overrides_to_patch(const std::string& command,
                                  const std::vector<std::pair<std::string, std::string>>& overrides);

/// Build identifier: project version plus `git describe` at configure time.
std::string build_version();

/// Logging sink for progress messages; null silences them.
struct CommandContext {
  std::filesystem::path out = ".";
  std::ostream* log = nullptr;
  bool resume = false;
};

/// data/{train,val}: synthetic splits.
void cmd_gen(const ExperimentConfig& cfg, const CommandContext& ctx);
/// train/: checkpoints/step_*.ckpt, checkpoints/final.ckpt, loss.csv.
TrainState cmd_train(const ExperimentConfig& cfg, const CommandContext& ctx);
/// infer/: maps/*.pgm (16-bit), masks/*.pgm, predictions.json.
void cmd_infer(const ExperimentConfig& cfg, const CommandContext& ctx);
/// eval/: metrics.csv, calibration.json.
void cmd_eval(const ExperimentConfig& cfg, const CommandContext& ctx);
/// sweep_steps/: sweep_steps.csv, sweep_steps.svg, fit.json.
void cmd_sweep_steps(const ExperimentConfig& cfg, const CommandContext& ctx);
/// sweep_instances/: sweep_instances.csv, sweep_instances.svg.
void cmd_sweep_instances(const ExperimentConfig& cfg, const CommandContext& ctx);

/// Output subdirectory used by each command name.
std::filesystem::path command_dir(const std::string& command);

/// Runs `command` with error capture: returns the exit code (0 ok, 1 usage,
/// 2 runtime) and writes a FAILED marker into the command directory on error.
int run_command(const std::string& command, const ExperimentConfig& cfg, const CommandContext& ctx,
                std::ostream& err);

/// Least-squares line through (x, y) and its coefficient of determination.
struct LinearFit {
  double slope = 0, intercept = 0, r_squared = 0;
};
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

/// Per-image ensembles: `per_image[i]` holds the x0 estimates of image i in
/// seed order. Prefix means give every smaller ensemble size for free.
struct EnsembleEvaluation {
  std::vector<std::vector<Tensor>> per_image;
  std::vector<Tensor> gts;
  double seconds = 0;

  std::vector<Tensor> mean_maps(int n) const;
  double miou_at(int n, double threshold = 0.5) const;
  double calibration_at(int n) const;
};
EnsembleEvaluation evaluate_ensembles(const std::vector<Sample>& samples, const ModelParams& params,
                                      const ModelConfig& config, const DiffusionSchedule& sched,
                                      int n, std::uint64_t base_seed, int chunk_size = 10);

/// Writes `text` to `path` through a temporary file and rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace segdiff
