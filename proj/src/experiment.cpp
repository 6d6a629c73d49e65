// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "segdiff/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <ostream>
#include <sstream>

#include "segdiff/metrics.hpp"
#include "segdiff/plot.hpp"
#include "segdiff/pnm.hpp"

#ifndef SEGDIFF_VERSION
#define SEGDIFF_VERSION "unknown"
#endif

namespace segdiff {

namespace fs = std::filesystem;
using nlohmann::json;

TrainConfig ExperimentConfig::default_toy_train() {
  TrainConfig t;
  t.T = 25;
  t.batch_size = 8;
  t.lr = 1e-3;
  t.max_steps = 4000;
  t.seed = 7;
  t.log_every = 100;
  t.checkpoint_every = 1000;
  return t;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("experiment config: " + msg); };
  model.validate();
  train.validate();
  if (data.n_train < 1 || data.n_val < 1) fail("data.n_train and data.n_val must be >= 1");
  if (infer.n < 1) fail("infer.n must be >= 1");
  if (!(infer.threshold > 0 && infer.threshold < 1)) fail("infer.threshold must lie in (0, 1)");
  if (infer.chunk_size < 1) fail("infer.chunk_size must be >= 1");
  if (infer.limit < 0 || sweep_steps.limit < 0 || sweep_instances.limit < 0) fail("limit must be >= 0");
  if (sweep_steps.T_values.empty()) fail("sweep_steps.T_values is empty");
  for (int t : sweep_steps.T_values)
    if (t < 2) fail("sweep_steps.T_values entries must be >= 2");
  if (sweep_steps.n < 1) fail("sweep_steps.n must be >= 1");
  if (sweep_instances.n_values.empty()) fail("sweep_instances.n_values is empty");
  for (int n : sweep_instances.n_values)
    if (n < 1) fail("sweep_instances.n_values entries must be >= 1");
}

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"T", c.T},
           {"data",
            {{"seed", c.data.seed},
             {"n_train", c.data.n_train},
             {"n_val", c.data.n_val},
             {"size", c.data.size},
             {"params", c.data.params}}},
           {"model", c.model},
           {"train", c.train},
           {"infer",
            {{"checkpoint", c.infer.checkpoint},
             {"split", c.infer.split},
             {"n", c.infer.n},
             {"base_seed", c.infer.base_seed},
             {"threshold", c.infer.threshold},
             {"chunk_size", c.infer.chunk_size},
             {"limit", c.infer.limit}}},
           {"sweep_steps",
            {{"T_values", c.sweep_steps.T_values},
             {"reuse_model", c.sweep_steps.reuse_model},
             {"train_missing", c.sweep_steps.train_missing},
             {"n", c.sweep_steps.n},
             {"limit", c.sweep_steps.limit}}},
           {"sweep_instances",
            {{"n_values", c.sweep_instances.n_values}, {"limit", c.sweep_instances.limit}}}};
}

void from_json(const json& j, ExperimentConfig& c) {
  const ExperimentConfig d;
  c.T = j.value("T", d.T);
  const json data = j.value("data", json::object());
  c.data.seed = data.value("seed", d.data.seed);
  c.data.n_train = data.value("n_train", d.data.n_train);
  c.data.n_val = data.value("n_val", d.data.n_val);
  c.data.size = data.value("size", d.data.size);
  c.data.params = data.value("params", d.data.params);
  c.model = j.value("model", d.model);
  c.train = j.value("train", d.train);
  const json inf = j.value("infer", json::object());
  c.infer.checkpoint = inf.value("checkpoint", d.infer.checkpoint);
  c.infer.split = inf.value("split", d.infer.split);
  c.infer.n = inf.value("n", d.infer.n);
  c.infer.base_seed = inf.value("base_seed", d.infer.base_seed);
  c.infer.threshold = inf.value("threshold", d.infer.threshold);
  c.infer.chunk_size = inf.value("chunk_size", d.infer.chunk_size);
  c.infer.limit = inf.value("limit", d.infer.limit);
  const json ss = j.value("sweep_steps", json::object());
  c.sweep_steps.T_values = ss.value("T_values", d.sweep_steps.T_values);
  c.sweep_steps.reuse_model = ss.value("reuse_model", d.sweep_steps.reuse_model);
  c.sweep_steps.train_missing = ss.value("train_missing", d.sweep_steps.train_missing);
  c.sweep_steps.n = ss.value("n", d.sweep_steps.n);
  c.sweep_steps.limit = ss.value("limit", d.sweep_steps.limit);
  const json si = j.value("sweep_instances", json::object());
  c.sweep_instances.n_values = si.value("n_values", d.sweep_instances.n_values);
  c.sweep_instances.limit = si.value("limit", d.sweep_instances.limit);
}

namespace {

void reject_unknown_keys(const json& patch, const json& known, const std::string& prefix) {
  if (!patch.is_object() || !known.is_object()) return;
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!known.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    reject_unknown_keys(value, known.at(key), path);
  }
}

const json* find_path(const json& j, std::initializer_list<const char*> keys) {
  const json* cur = &j;
  for (const char* k : keys) {
    if (!cur->is_object() || !cur->contains(k)) return nullptr;
    cur = &cur->at(k);
  }
  return cur;
}

}  // namespace

ExperimentConfig resolve_config(const json& patch) {
  if (!patch.is_object()) throw ConfigError("config must be a JSON object");
  const json defaults = ExperimentConfig{};
  reject_unknown_keys(patch, defaults, "");
  json merged = defaults;
  merged.merge_patch(patch);
  ExperimentConfig c;
  try {
    c = merged.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config has a value of the wrong type: ") + e.what());
  }

  // T and size are set once at the top level and propagated.
  for (auto path : {std::initializer_list<const char*>{"model", "time_steps"},
                    std::initializer_list<const char*>{"train", "T"}}) {
    if (const json* v = find_path(patch, path); v && v->is_number() && v->get<int>() != c.T) {
      throw ConfigError("set the top-level T instead of model.time_steps / train.T");
    }
  }
  c.model.time_steps = c.T;
  c.train.T = c.T;
  c.model.input_height = c.model.input_width = c.data.size;
  c.data.params.height = c.data.params.width = c.data.size;
  c.validate();
  return c;
}

json overrides_to_patch(const std::string& command,
                        const std::vector<std::pair<std::string, std::string>>& overrides) {
  static const std::map<std::string, std::map<std::string, std::string>> aliases{
      {"gen", {{"seed", "data.seed"}, {"n", "data.n_train"}, {"n-val", "data.n_val"}, {"size", "data.size"}}},
      {"train",
       {{"seed", "train.seed"}, {"steps", "train.max_steps"}, {"lr", "train.lr"}, {"batch", "train.batch_size"}}},
      {"infer",
       {{"n", "infer.n"},
        {"seed", "infer.base_seed"},
        {"checkpoint", "infer.checkpoint"},
        {"threshold", "infer.threshold"},
        {"split", "infer.split"},
        {"limit", "infer.limit"}}},
      {"eval", {{"threshold", "infer.threshold"}, {"split", "infer.split"}}},
      {"sweep-steps",
       {{"T-values", "sweep_steps.T_values"},
        {"reuse-model", "sweep_steps.reuse_model"},
        {"n", "sweep_steps.n"},
        {"limit", "sweep_steps.limit"}}},
      {"sweep-instances", {{"n-values", "sweep_instances.n_values"}, {"limit", "sweep_instances.limit"}}},
  };
  json patch = json::object();
  for (const auto& [raw_key, raw_value] : overrides) {
    std::string key = raw_key;
    if (auto cmd = aliases.find(command); cmd != aliases.end()) {
      if (auto a = cmd->second.find(key); a != cmd->second.end()) key = a->second;
    }
    std::replace(key.begin(), key.end(), '-', '_');

    json value;
    std::string text = raw_value;
    if (text.find(',') != std::string::npos && text.front() != '[' && text.front() != '{') {
      text = "[" + text + "]";
    }
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = raw_value;
    }

    json* cur = &patch;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = key.find('.', start);
      const std::string part = key.substr(start, dot - start);
      if (part.empty()) throw ConfigError("malformed override key '--" + raw_key + "'");
      if (dot == std::string::npos) {
        (*cur)[part] = value;
        break;
      }
      cur = &(*cur)[part];
      start = dot + 1;
    }
  }
  return patch;
}

std::string build_version() { return SEGDIFF_VERSION; }

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path command_dir(const std::string& command) {
  static const std::map<std::string, std::string> dirs{
      {"gen", "data"},           {"train", "train"},
      {"infer", "infer"},        {"eval", "eval"},
      {"sweep-steps", "sweep_steps"}, {"sweep-instances", "sweep_instances"}};
  const auto it = dirs.find(command);
  if (it == dirs.end()) throw UsageError("unknown command '" + command + "'");
  return it->second;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void log_line(const CommandContext& ctx, const std::string& msg) {
  if (ctx.log) *ctx.log << msg << std::endl;
}

// Creates the directory, clears any failure marker and records provenance.
void prepare_dir(const fs::path& dir, const ExperimentConfig& cfg) {
  fs::create_directories(dir);
  fs::remove(dir / "FAILED");
  write_text_atomic(dir / "config.json", json(cfg).dump(2) + "\n");
  write_text_atomic(dir / "version.txt", build_version() + "\n");
}

std::vector<Sample> load_split(const fs::path& out, const std::string& split, int limit) {
  const fs::path root = out / "data" / split;
  if (!fs::exists(root / "manifest.json")) {
    throw IoError("dataset split '" + split + "' not found at " + root.string() + " (run gen first)");
  }
  std::vector<Sample> samples = load_dataset(read_manifest(root));
  if (limit > 0 && static_cast<std::size_t>(limit) < samples.size()) samples.resize(static_cast<std::size_t>(limit));
  return samples;
}

json comparable_train_config(const TrainConfig& t) {
  json j = t;
  j.erase("max_steps");
  j.erase("log_every");
  j.erase("checkpoint_every");
  return j;
}

std::string step_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%07lld.ckpt", static_cast<long long>(step));
  return buf;
}

fs::path latest_checkpoint(const fs::path& dir) {
  if (fs::exists(dir / "final.ckpt")) return dir / "final.ckpt";
  fs::path best;
  if (!fs::exists(dir)) return best;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("step_", 0) == 0 && e.path().extension() == ".ckpt" && name > best.filename().string()) {
      best = e.path();
    }
  }
  return best;
}

std::string loss_csv(const std::vector<LossPoint>& losses) {
  std::string s = "step,loss\n";
  for (const auto& p : losses) s += std::to_string(p.step) + "," + fmt(p.loss) + "\n";
  return s;
}

TrainState train_into(const ExperimentConfig& cfg, const fs::path& out, const fs::path& run_dir,
                      const CommandContext& ctx) {
  const std::vector<Sample> dataset = load_split(out, "train", 0);
  const fs::path ckdir = run_dir / "checkpoints";
  fs::create_directories(ckdir);

  TrainState state;
  const fs::path resume_from = ctx.resume ? latest_checkpoint(ckdir) : fs::path{};
  if (!resume_from.empty()) {
    state = load_checkpoint(resume_from);
    if (json(state.model) != json(cfg.model) ||
        comparable_train_config(state.train) != comparable_train_config(cfg.train)) {
      throw ConfigError("cannot resume from " + resume_from.string() + ": its configuration differs");
    }
    state.train = cfg.train;
    log_line(ctx, "resuming from " + resume_from.string() + " at step " + std::to_string(state.opt.step));
  } else {
    for (const auto& e : fs::directory_iterator(ckdir)) fs::remove(e.path());
    state = start_training(cfg.model, cfg.train);
  }

  TrainHooks hooks;
  const auto start = std::chrono::steady_clock::now();
  hooks.on_log = [&](std::int64_t step, double) {
    const std::span<const LossPoint> all(state.losses);
    const std::size_t window = std::min<std::size_t>(all.size(), static_cast<std::size_t>(cfg.train.log_every));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char buf[128];
    std::snprintf(buf, sizeof buf, "step %lld  loss %.5f  (%.1fs)", static_cast<long long>(step),
                  mean_loss(all.last(window)), secs);
    log_line(ctx, buf);
  };
  hooks.on_checkpoint = [&](const TrainState& s) {
    save_checkpoint(ckdir / step_name(s.opt.step), s);
    write_text_atomic(run_dir / "loss.csv", loss_csv(s.losses));
  };
  train_loop(state, dataset, hooks);
  save_checkpoint(ckdir / "final.ckpt", state);
  write_text_atomic(run_dir / "loss.csv", loss_csv(state.losses));
  return state;
}

Tensor as_image_batch(const Sample& s) {
  return s.image.reshape({1, s.image.dim(0), s.image.dim(1), s.image.dim(2)});
}

Tensor as_plane(const Tensor& t) { return t.reshape({1, t.dim(t.rank() - 2), t.dim(t.rank() - 1)}); }

void reset_subdir(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
}

std::string render_sweep_svg(const std::string& csv_text, const std::string& x_col,
                             const std::string& x_label,
                             const std::vector<std::pair<std::string, std::string>>& y_cols) {
  const CsvTable t = parse_csv(csv_text);
  std::vector<Panel> panels;
  for (const auto& [col, label] : y_cols) {
    panels.push_back({label + " vs " + x_label, x_label, label, {{col, t.column(x_col), t.column(col)}}});
  }
  return render_svg(panels);
}

}  // namespace

void cmd_gen(const ExperimentConfig& cfg, const CommandContext& ctx) {
  const fs::path dir = ctx.out / command_dir("gen");
  prepare_dir(dir, cfg);
  for (const auto& [split, n] : {std::pair<std::string, int>{"train", cfg.data.n_train}, {"val", cfg.data.n_val}}) {
    fs::remove_all(dir / split);
    gen_synthetic(dir / split, cfg.data.seed, n, cfg.data.params, split);
    log_line(ctx, "wrote " + std::to_string(n) + " " + split + " samples to " + (dir / split).string());
  }
}

TrainState cmd_train(const ExperimentConfig& cfg, const CommandContext& ctx) {
  const fs::path dir = ctx.out / command_dir("train");
  prepare_dir(dir, cfg);
  TrainState s = train_into(cfg, ctx.out, dir, ctx);
  log_line(ctx, "final checkpoint: " + (dir / "checkpoints" / "final.ckpt").string());
  return s;
}

void cmd_infer(const ExperimentConfig& cfg, const CommandContext& ctx) {
  const fs::path dir = ctx.out / command_dir("infer");
  const fs::path ckpt = ctx.out / cfg.infer.checkpoint;
  if (!fs::exists(ckpt)) throw IoError("checkpoint not found: " + ckpt.string() + " (run train first)");
  const std::vector<Sample> samples = load_split(ctx.out, cfg.infer.split, cfg.infer.limit);
  prepare_dir(dir, cfg);
  reset_subdir(dir / "maps");
  reset_subdir(dir / "masks");

  const TrainState state = load_checkpoint(ckpt);
  const DiffusionSchedule sched(state.model.time_steps);
  const EnsembleOptions opts{worker_threads_from_env(), cfg.infer.chunk_size};
  json entries = json::array();
  json per_sample_seconds = json::array();
  double total = 0;
  for (const Sample& s : samples) {
    const auto t0 = std::chrono::steady_clock::now();
    const EnsembleResult r = ensemble_generate(as_image_batch(s), state.params, state.model, sched,
                                               cfg.infer.n, cfg.infer.base_seed, opts);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    total += secs;
    per_sample_seconds.push_back(secs);
    save_pnm(dir / "maps" / (s.id + ".pgm"), as_plane(r.mean_map), 65535);
    save_pnm(dir / "masks" / (s.id + ".pgm"), as_plane(binarize(r.mean_map, cfg.infer.threshold)), 255);
    entries.push_back({{"id", s.id}, {"map", "maps/" + s.id + ".pgm"}, {"mask", "masks/" + s.id + ".pgm"}});
    log_line(ctx, s.id + ": " + std::to_string(cfg.infer.n) + " generations in " + fmt(secs) + "s");
  }
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < cfg.infer.n; ++i) seeds.push_back(cfg.infer.base_seed + static_cast<std::uint64_t>(i));
  const json sidecar{
      {"checkpoint", cfg.infer.checkpoint},
      {"split", cfg.infer.split},
      {"T", state.model.time_steps},
      {"n", cfg.infer.n},
      {"seeds", seeds},
      {"threshold", cfg.infer.threshold},
      {"samples", entries},
      {"timing",
       {{"total_seconds", total},
        {"per_sample_seconds", per_sample_seconds},
        {"mean_generation_seconds",
         samples.empty() ? 0.0 : total / static_cast<double>(samples.size() * static_cast<std::size_t>(cfg.infer.n))},
        {"threads", opts.threads}}}};
  write_text_atomic(dir / "predictions.json", sidecar.dump(2) + "\n");
}

void cmd_eval(const ExperimentConfig& cfg, const CommandContext& ctx) {
  const fs::path dir = ctx.out / command_dir("eval");
  const fs::path infer_dir = ctx.out / command_dir("infer");
  if (!fs::exists(infer_dir / "predictions.json")) {
    throw IoError("no predictions at " + (infer_dir / "predictions.json").string() + " (run infer first)");
  }
  json sidecar;
  try {
    sidecar = json::parse(read_text(infer_dir / "predictions.json"));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("predictions.json: ") + e.what(), e.byte);
  }
  const std::string split = sidecar.value("split", cfg.infer.split);
  std::map<std::string, Tensor> gt;
  for (Sample& s : load_split(ctx.out, split, 0)) gt.emplace(s.id, s.mask);
  prepare_dir(dir, cfg);

  std::string csv = "sample_id,miou,f1,wcov,fbound\n";
  std::vector<Tensor> maps, gts;
  double sums[4] = {0, 0, 0, 0};
  std::size_t count = 0;
  for (const auto& e : sidecar.at("samples")) {
    const std::string id = e.at("id").get<std::string>();
    const auto it = gt.find(id);
    if (it == gt.end()) throw IoError("prediction '" + id + "' has no ground truth in split '" + split + "'");
    const Tensor pred = load_pnm(infer_dir / e.at("mask").get<std::string>());
    const double m[4] = {iou(pred, it->second), f1(pred, it->second), wcov(pred, it->second),
                         fbound(pred, it->second)};
    csv += id;
    for (int k = 0; k < 4; ++k) {
      csv += "," + fmt(m[k]);
      sums[k] += m[k];
    }
    csv += "\n";
    ++count;
    maps.push_back(load_pnm(infer_dir / e.at("map").get<std::string>()));
    gts.push_back(it->second);
  }
  if (count == 0) throw IoError("predictions.json lists no samples");
  csv += "mean";
  for (double s : sums) csv += "," + fmt(s / static_cast<double>(count));
  csv += "\n";
  write_text_atomic(dir / "metrics.csv", csv);
  write_text_atomic(dir / "calibration.json", json(calibration_score(maps, gts)).dump(2) + "\n");
  log_line(ctx, "mIoU " + fmt(sums[0] / static_cast<double>(count)) + " over " + std::to_string(count) + " samples");
}

void cmd_sweep_steps(const ExperimentConfig& cfg, const CommandContext& ctx) {
  const fs::path dir = ctx.out / command_dir("sweep-steps");
  const std::vector<Sample> samples = load_split(ctx.out, cfg.infer.split, cfg.sweep_steps.limit);
  prepare_dir(dir, cfg);

  std::string csv = "T,miou,mean_generation_seconds\n";
  json skipped = json::array();
  std::vector<double> ts, secs, mious;
  for (int T : cfg.sweep_steps.T_values) {
    fs::path ckpt = cfg.sweep_steps.reuse_model ? ctx.out / cfg.infer.checkpoint
                                                : dir / ("T" + std::to_string(T)) / "checkpoints" / "final.ckpt";
    if (!fs::exists(ckpt)) {
      if (cfg.sweep_steps.reuse_model || !cfg.sweep_steps.train_missing) {
        log_line(ctx, "T=" + std::to_string(T) + ": missing checkpoint " + ckpt.string() + ", skipped");
        skipped.push_back({{"T", T}, {"reason", "missing checkpoint " + ckpt.string()}});
        continue;
      }
      ExperimentConfig sub = cfg;
      sub.T = sub.model.time_steps = sub.train.T = T;
      log_line(ctx, "T=" + std::to_string(T) + ": training");
      CommandContext fresh = ctx;
      fresh.resume = false;
      train_into(sub, ctx.out, dir / ("T" + std::to_string(T)), fresh);
    }
    const TrainState state = load_checkpoint(ckpt);
    if (state.model.time_steps < T) {
      skipped.push_back({{"T", T},
                         {"reason", "checkpoint embeds only " + std::to_string(state.model.time_steps) + " steps"}});
      continue;
    }
    const EnsembleEvaluation ev = evaluate_ensembles(samples, state.params, state.model, DiffusionSchedule(T),
                                                     cfg.sweep_steps.n, cfg.infer.base_seed, cfg.infer.chunk_size);
    const double per_gen = ev.seconds / static_cast<double>(samples.size() * static_cast<std::size_t>(cfg.sweep_steps.n));
    const double m = ev.miou_at(cfg.sweep_steps.n, cfg.infer.threshold);
    csv += std::to_string(T) + "," + fmt(m) + "," + fmt(per_gen) + "\n";
    ts.push_back(T);
    secs.push_back(per_gen);
    mious.push_back(m);
    log_line(ctx, "T=" + std::to_string(T) + ": mIoU " + fmt(m) + ", " + fmt(per_gen) + "s per generation");
  }
  write_text_atomic(dir / "sweep_steps.csv", csv);
  write_text_atomic(dir / "sweep_steps.svg",
                    render_sweep_svg(csv, "T", "diffusion steps T",
                                     {{"miou", "mIoU"}, {"mean_generation_seconds", "seconds per generation"}}));
  json summary{{"skipped", skipped}};
  if (ts.size() >= 2) {
    const LinearFit fit = fit_line(ts, secs);
    summary["time_fit"] = {{"slope", fit.slope}, {"intercept", fit.intercept}, {"r_squared", fit.r_squared}};
    summary["miou_range"] = *std::max_element(mious.begin(), mious.end()) - *std::min_element(mious.begin(), mious.end());
  }
  write_text_atomic(dir / "fit.json", summary.dump(2) + "\n");
}

void cmd_sweep_instances(const ExperimentConfig& cfg, const CommandContext& ctx) {
  const fs::path dir = ctx.out / command_dir("sweep-instances");
  const fs::path ckpt = ctx.out / cfg.infer.checkpoint;
  if (!fs::exists(ckpt)) throw IoError("checkpoint not found: " + ckpt.string() + " (run train first)");
  const std::vector<Sample> samples = load_split(ctx.out, cfg.infer.split, cfg.sweep_instances.limit);
  prepare_dir(dir, cfg);

  const TrainState state = load_checkpoint(ckpt);
  const DiffusionSchedule sched(state.model.time_steps);
  const int n_max = *std::max_element(cfg.sweep_instances.n_values.begin(), cfg.sweep_instances.n_values.end());
  const EnsembleEvaluation ev =
      evaluate_ensembles(samples, state.params, state.model, sched, n_max, cfg.infer.base_seed, cfg.infer.chunk_size);
  std::string csv = "n,miou,calibration_score\n";
  for (int n : cfg.sweep_instances.n_values) {
    const double m = ev.miou_at(n, cfg.infer.threshold), c = ev.calibration_at(n);
    csv += std::to_string(n) + "," + fmt(m) + "," + fmt(c) + "\n";
    log_line(ctx, "n=" + std::to_string(n) + ": mIoU " + fmt(m) + ", calibration " + fmt(c));
  }
  write_text_atomic(dir / "sweep_instances.csv", csv);
  write_text_atomic(dir / "sweep_instances.svg",
                    render_sweep_svg(csv, "n", "generated instances n",
                                     {{"miou", "mIoU"}, {"calibration_score", "calibration score"}}));
}

int run_command(const std::string& command, const ExperimentConfig& cfg, const CommandContext& ctx,
                std::ostream& err) {
  fs::path dir;
  try {
    dir = ctx.out / command_dir(command);
    if (command == "gen") cmd_gen(cfg, ctx);
    else if (command == "train") cmd_train(cfg, ctx);
    else if (command == "infer") cmd_infer(cfg, ctx);
    else if (command == "eval") cmd_eval(cfg, ctx);
    else if (command == "sweep-steps") cmd_sweep_steps(cfg, ctx);
    else cmd_sweep_instances(cfg, ctx);
    return 0;
  } catch (const std::exception& e) {
    const bool usage = dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e);
    err << "segdiff " << command << ": " << e.what() << "\n";
    if (!dir.empty() && fs::exists(dir)) {
      try {
        write_text_atomic(dir / "FAILED", std::string(e.what()) + "\n");
      } catch (const std::exception&) {
      }
    }
    return usage ? 1 : 2;
  }
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DimensionError("fit_line needs >= 2 paired points");
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0) throw DimensionError("fit_line: x values are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy == 0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return f;
}

std::vector<Tensor> EnsembleEvaluation::mean_maps(int n) const {
  std::vector<Tensor> out;
  for (const auto& gens : per_image) {
    if (n < 1 || static_cast<std::size_t>(n) > gens.size()) {
      throw ConfigError("ensemble size " + std::to_string(n) + " exceeds the " + std::to_string(gens.size()) +
                        " generations available");
    }
    out.push_back(ensemble_mean({gens.begin(), gens.begin() + n}));
  }
  return out;
}

double EnsembleEvaluation::miou_at(int n, double threshold) const {
  std::vector<Tensor> preds;
  for (const Tensor& m : mean_maps(n)) preds.push_back(binarize(m, threshold));
  return miou(preds, gts);
}

double EnsembleEvaluation::calibration_at(int n) const { return calibration_score(mean_maps(n), gts).score; }

EnsembleEvaluation evaluate_ensembles(const std::vector<Sample>& samples, const ModelParams& params,
                                      const ModelConfig& config, const DiffusionSchedule& sched, int n,
                                      std::uint64_t base_seed, int chunk_size) {
  EnsembleEvaluation ev;
  const EnsembleOptions opts{worker_threads_from_env(), chunk_size};
  const auto t0 = std::chrono::steady_clock::now();
  for (const Sample& s : samples) {
    EnsembleResult r = ensemble_generate(as_image_batch(s), params, config, sched, n, base_seed, opts);
    std::vector<Tensor> gens;
    for (auto& g : r.generations) gens.push_back(std::move(g.x_final));
    ev.per_image.push_back(std::move(gens));
    ev.gts.push_back(s.mask);
  }
  ev.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return ev;
}

}  // namespace segdiff
