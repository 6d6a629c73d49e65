// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "segdiff/experiment.hpp"

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

Overrides pair_up(const std::vector<std::string>& rest) {
  Overrides out;
  for (std::size_t i = 0; i < rest.size(); ++i) {
    const std::string& arg = rest[i];
    if (arg.rfind("--", 0) != 0 || arg.size() < 3) {
      throw segdiff::ConfigError("expected --key value, got '" + arg + "'");
    }
    const std::string body = arg.substr(2);
    if (const auto eq = body.find('='); eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else if (i + 1 < rest.size()) {
      out.emplace_back(body, rest[++i]);
    } else {
      throw segdiff::ConfigError("override '" + arg + "' has no value");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segdiff: conditional diffusion segmentation at desk scale"};
  app.require_subcommand(1);
  app.set_version_flag("--version", segdiff::build_version());

  std::string config_path;
  std::string out = ".";
  bool resume = false;
  bool quiet = false;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen", "Generate the synthetic train/val splits"},
      {"train", "Train the denoiser and write checkpoints and loss.csv"},
      {"infer", "Sample ensembles for a split and write maps, masks and predictions.json"},
      {"eval", "Score the inferred masks: metrics.csv and calibration.json"},
      {"sweep-steps", "mIoU and generation time versus diffusion steps T"},
      {"sweep-instances", "mIoU and calibration versus ensemble size n"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON config (merged over the built-in defaults)")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Output root; every path is relative to it");
    sub->add_flag("--quiet", quiet, "Suppress progress messages");
    if (name == "train") sub->add_flag("--resume", resume, "Continue from the latest checkpoint");
    sub->allow_extras();
    sub->footer("Any other --key value pair overrides a config entry, e.g. --train.lr 5e-4.");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  segdiff::ExperimentConfig cfg;
  try {
    nlohmann::json patch = nlohmann::json::object();
    if (!config_path.empty()) {
      try {
        patch = nlohmann::json::parse(segdiff::read_text(config_path));
      } catch (const nlohmann::json::parse_error& e) {
        throw segdiff::ConfigError("config '" + config_path + "' is not valid JSON: " + e.what());
      }
    }
    patch.merge_patch(segdiff::overrides_to_patch(command, pair_up(sub->remaining())));
    cfg = segdiff::resolve_config(patch);
  } catch (const std::exception& e) {
    std::cerr << "segdiff " << command << ": " << e.what() << "\n";
    return 1;
  }

  segdiff::CommandContext ctx;
  ctx.out = out;
  ctx.resume = resume;
  ctx.log = quiet ? nullptr : &std::cout;
  return segdiff::run_command(command, cfg, ctx, std::cerr);
}
