// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "segdiff/model.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "segdiff/ops.hpp"

namespace segdiff {

std::string to_string(Conditioning mode) {
  switch (mode) {
    case Conditioning::sum: return "sum";
    case Conditioning::feature_concat: return "feature_concat";
    case Conditioning::raw_concat: return "raw_concat";
  }
  return "sum";
}

Conditioning conditioning_from_string(const std::string& name) {
  if (name == "sum") return Conditioning::sum;
  if (name == "feature_concat") return Conditioning::feature_concat;
  if (name == "raw_concat") return Conditioning::raw_concat;
  throw ConfigError("unknown conditioning mode '" + name + "'");
}

std::vector<int> ModelConfig::level_resolutions() const {
  std::vector<int> res;
  for (int i = 0; i < depth(); ++i) res.push_back(input_height >> i);
  return res;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (base_channels < 1) fail("base_channels must be positive");
  if (depth() < 1) fail("channel_multipliers must be non-empty");
  for (int m : channel_multipliers)
    if (m < 1) fail("channel multipliers must be positive");
  if (rrdb_blocks < 0 || res_blocks < 1) fail("rrdb_blocks >= 0 and res_blocks >= 1 required");
  if (time_steps < 2) fail("time_steps must be >= 2");
  if (heads < 1) fail("heads must be positive");
  if (norm_groups < 1) fail("norm_groups must be positive");
  if (image_channels < 1) fail("image_channels must be positive");
  const int div = 1 << (depth() - 1);
  if (input_height < 1 || input_width < 1 || input_height % div || input_width % div) {
    fail("input size " + std::to_string(input_height) + "x" + std::to_string(input_width) +
         " not divisible by 2^(depth-1) = " + std::to_string(div));
  }
  const auto levels = level_resolutions();
  for (int r : attention_resolutions) {
    if (std::find(levels.begin(), levels.end(), r) == levels.end()) {
      fail("attention resolution " + std::to_string(r) + " is not produced by the encoder");
    }
  }
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const int ch = base_channels * channel_multipliers[i];
    if (attention_resolutions.count(levels[i]) && ch % heads) {
      fail("channels " + std::to_string(ch) + " not divisible by heads at resolution " +
           std::to_string(levels[i]));
    }
  }
  if ((base_channels * channel_multipliers.back()) % heads) fail("bottleneck channels not divisible by heads");
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.base_channels = 4;
  c.channel_multipliers = {1, 2};
  c.attention_resolutions = {4};
  c.rrdb_blocks = 1;
  c.heads = 2;
  c.norm_groups = 2;
  c.time_steps = 10;
  c.input_height = c.input_width = 8;
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.base_channels = 16;
  c.channel_multipliers = {1, 2, 2};
  c.attention_resolutions = {16, 8};
  c.rrdb_blocks = 1;
  c.heads = 4;
  c.norm_groups = 8;
  c.time_steps = 25;
  c.input_height = c.input_width = 32;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"base_channels", c.base_channels},
                     {"depth", c.depth()},
                     {"channel_multipliers", c.channel_multipliers},
                     {"attention_resolutions", c.attention_resolutions},
                     {"rrdb_blocks", c.rrdb_blocks},
                     {"res_blocks", c.res_blocks},
                     {"heads", c.heads},
                     {"time_embed_dim", c.embed_dim()},
                     {"norm_groups", c.norm_groups},
                     {"time_steps", c.time_steps},
                     {"image_channels", c.image_channels},
                     {"input_size", {c.input_height, c.input_width}},
                     {"conditioning_mode", to_string(c.conditioning)}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.base_channels = j.value("base_channels", d.base_channels);
  c.channel_multipliers = j.value("channel_multipliers", d.channel_multipliers);
  c.attention_resolutions = j.value("attention_resolutions", d.attention_resolutions);
  c.rrdb_blocks = j.value("rrdb_blocks", d.rrdb_blocks);
  c.res_blocks = j.value("res_blocks", d.res_blocks);
  c.heads = j.value("heads", d.heads);
  c.time_embed_dim = j.value("time_embed_dim", d.time_embed_dim);
  c.norm_groups = j.value("norm_groups", d.norm_groups);
  c.time_steps = j.value("time_steps", d.time_steps);
  c.image_channels = j.value("image_channels", d.image_channels);
  if (j.contains("input_size")) {
    const auto& s = j.at("input_size");
    if (s.is_number()) {
      c.input_height = c.input_width = s.get<int>();
    } else {
      c.input_height = s.at(0).get<int>();
      c.input_width = s.at(1).get<int>();
    }
  }
  c.conditioning = conditioning_from_string(j.value("conditioning_mode", std::string("sum")));
  if (j.contains("depth") && j.at("depth").get<int>() != c.depth()) {
    throw ConfigError("model config: depth does not match channel_multipliers length");
  }
}

Tensor& ModelParams::add(const std::string& name, Tensor value) {
  if (contains(name)) throw UsageError("duplicate parameter '" + name + "'");
  value.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DimensionError("missing parameter '" + name + "'");
  return entries_[it->second].second;
}

Tensor& ModelParams::at(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ModelParams&>(*this).at(name));
}

Index ModelParams::parameter_count() const {
  Index n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams copy;
  for (const auto& [name, t] : entries_) copy.add(name, t.detach());
  return copy;
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

std::string parameter_group(const std::string& name) { return name.substr(0, name.find('.')); }

namespace {

constexpr double kDenseResidualScale = 0.2;
constexpr double kDenseInitScale = 0.1;
constexpr double kTimeTableStd = 0.02;

enum class Init { fan_in, fan_in_small, zero };

// Resolves layer parameters by name. In build mode a missing parameter is
// created from the shape of the incoming activation, so initialization and
// the forward pass share one description of the architecture.
class Layers {
 public:
  explicit Layers(const ModelParams& params) : params_(&params) {}
  Layers(ModelParams& params, std::mt19937_64& rng) : params_(&params), build_(&params), rng_(&rng) {}

  void set_trace(std::vector<LayerTrace>* trace) { trace_ = trace; }

  Tensor conv(const std::string& name, const Tensor& x, Index cout, int k, int stride = 1,
              Init init = Init::fan_in) {
    const Index cin = x.dim(1);
    Tensor w = param(name + ".weight", {cout, cin, k, k}, init, cin * k * k);
    Tensor b = param(name + ".bias", {cout}, Init::zero, 0);
    Tensor y = segdiff::conv2d(x, w, b, stride, k / 2);
    note(name, "conv", y);
    return y;
  }

  Tensor norm(const std::string& name, const Tensor& x, int max_groups) {
    const Index ch = x.dim(1);
    const int groups = std::gcd(static_cast<int>(ch), max_groups);
    Tensor gamma = param(name + ".gamma", {ch}, Init::zero, 0, 1.0);
    Tensor beta = param(name + ".beta", {ch}, Init::zero, 0);
    Tensor y = segdiff::group_norm(x, groups, gamma, beta);
    note(name, "norm", y);
    return y;
  }

  Tensor linear(const std::string& name, const Tensor& x, Index out) {
    const Index in = x.dim(1);
    Tensor w = param(name + ".weight", {out, in}, Init::fan_in, in);
    Tensor b = param(name + ".bias", {out}, Init::zero, 0);
    Tensor y = segdiff::linear(x, w, b);
    note(name, "linear", y);
    return y;
  }

  Tensor attention(const std::string& name, const Tensor& x, int heads) {
    const Index c = x.dim(1);
    Tensor wq = param(name + ".wq", {c, c}, Init::fan_in, c);
    Tensor wk = param(name + ".wk", {c, c}, Init::fan_in, c);
    Tensor wv = param(name + ".wv", {c, c}, Init::fan_in, c);
    Tensor wo = param(name + ".wo", {c, c}, Init::fan_in, c);
    Tensor y = segdiff::attention(x, heads, wq, wk, wv, wo);
    note(name, "attention", y);
    return y;
  }

  Tensor time_table(Index rows, Index dim) {
    const std::string name = "time_table";
    if (build_ && !build_->contains(name)) {
      build_->add(name, Tensor::randn({rows, dim}, *rng_, kTimeTableStd));
    }
    Tensor t = params_->at(name);
    if (t.shape() != Shape{rows, dim}) {
      throw DimensionError("time_table has shape " + shape_string(t.shape()) + ", expected " +
                           shape_string({rows, dim}));
    }
    return t;
  }

  void note(const std::string& name, const std::string& kind, const Tensor& y) {
    if (trace_) trace_->push_back({name, kind, y.shape()});
  }

 private:
  Tensor param(const std::string& name, const Shape& shape, Init init, Index fan_in,
                      double fill = 0.0) {
    if (build_ && !build_->contains(name)) {
      Tensor t = Tensor::full(shape, fill);
      if (init != Init::zero) {
        // Kaiming-uniform with a = sqrt(5): bound = 1 / sqrt(fan_in).
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        if (init == Init::fan_in_small) bound *= kDenseInitScale;
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Index i = 0; i < t.numel(); ++i) t.values()[i] = u(*rng_);
      }
      build_->add(name, std::move(t));
    }
    Tensor t = params_->at(name);
    if (t.shape() != shape) {
      throw DimensionError("parameter '" + name + "' has shape " + shape_string(t.shape()) +
                           ", layer needs " + shape_string(shape));
    }
    return t;
  }

  const ModelParams* params_;
  ModelParams* build_ = nullptr;
  std::mt19937_64* rng_ = nullptr;
  std::vector<LayerTrace>* trace_ = nullptr;
};

Tensor dense_block(Layers& L, const std::string& name, const Tensor& x, Index growth) {
  const Index c = x.dim(1);
  std::vector<Tensor> feats{x};
  for (int i = 1; i <= 4; ++i) {
    Tensor in = feats.size() == 1 ? x : concat_channels(feats);
    feats.push_back(leaky_relu(L.conv(name + ".conv" + std::to_string(i), in, growth, 3, 1,
                                      Init::fan_in_small)));
  }
  Tensor out = L.conv(name + ".conv5", concat_channels(feats), c, 3, 1, Init::fan_in_small);
  return add(x, mul_scalar(out, kDenseResidualScale));
}

Tensor rrdb(Layers& L, const std::string& name, const Tensor& x, Index growth) {
  Tensor h = x;
  for (int i = 0; i < 3; ++i) h = dense_block(L, name + ".dense" + std::to_string(i), h, growth);
  Tensor y = add(x, mul_scalar(h, kDenseResidualScale));
  L.note(name, "rrdb", y);
  return y;
}

Tensor image_encoder(Layers& L, const Tensor& image, const ModelConfig& cfg) {
  const Index c = cfg.base_channels;
  if (image.rank() != 4 || image.dim(1) != cfg.image_channels) {
    throw DimensionError("image encoder expects [B," + std::to_string(cfg.image_channels) +
                         ",H,W], got " + shape_string(image.shape()));
  }
  const Index growth = std::max<Index>(1, c / 2);
  Tensor f0 = L.conv("G.conv_in", image, c, 3);
  Tensor h = f0;
  for (int r = 0; r < cfg.rrdb_blocks; ++r) h = rrdb(L, "G.rrdb" + std::to_string(r), h, growth);
  Tensor f1 = cfg.rrdb_blocks > 0 ? add(f0, h) : f0;
  Tensor f2 = leaky_relu(L.conv("G.conv_mid", f1, c, 3));
  return L.conv("G.conv_out", f2, c, 3);
}

Tensor state_encoder(Layers& L, const Tensor& x_t, const ModelConfig& cfg) {
  if (x_t.rank() != 4 || x_t.dim(1) != 1) {
    throw DimensionError("state encoder expects a single-channel [B,1,H,W] map, got " +
                         (x_t.defined() ? shape_string(x_t.shape()) : std::string("<undefined>")));
  }
  return L.conv("F.conv", x_t, cfg.base_channels, 3);
}

Tensor res_block(Layers& L, const std::string& name, const Tensor& x, Index cout,
                 const Tensor& emb, const ModelConfig& cfg) {
  Tensor h = L.conv(name + ".conv1", silu(L.norm(name + ".norm1", x, cfg.norm_groups)), cout, 3);
  Tensor e = L.linear(name + ".emb2", silu(L.linear(name + ".emb1", emb, cfg.embed_dim())), cout);
  h = add_channel_bias(h, e);
  h = L.conv(name + ".conv2", silu(L.norm(name + ".norm2", h, cfg.norm_groups)), cout, 3);
  Tensor skip = x.dim(1) == cout ? x : L.conv(name + ".skip", x, cout, 1);
  Tensor y = add(h, skip);
  L.note(name, "resblock", y);
  return y;
}

Tensor unet(Layers& L, const Tensor& merged, const Tensor& emb, const ModelConfig& cfg) {
  const auto levels = cfg.level_resolutions();
  const int depth = cfg.depth();
  auto channels = [&](int level) -> Index { return cfg.base_channels * cfg.channel_multipliers[level]; };

  Tensor h = merged;
  std::vector<Tensor> skips;
  for (int i = 0; i < depth; ++i) {
    const std::string lvl = "E.level" + std::to_string(i);
    for (int j = 0; j < cfg.res_blocks; ++j) {
      h = res_block(L, lvl + ".res" + std::to_string(j), h, channels(i), emb, cfg);
      if (cfg.attention_resolutions.count(levels[i]))
        h = L.attention(lvl + ".attn" + std::to_string(j), h, cfg.heads);
    }
    skips.push_back(h);
    if (i + 1 < depth) h = L.conv(lvl + ".down", h, channels(i), 3, 2);
  }

  const Index cmid = channels(depth - 1);
  h = res_block(L, "E.mid.res0", h, cmid, emb, cfg);
  h = L.attention("E.mid.attn", h, cfg.heads);
  h = res_block(L, "E.mid.res1", h, cmid, emb, cfg);

  for (int i = depth - 1; i >= 0; --i) {
    const std::string lvl = "D.level" + std::to_string(i);
    h = concat_channels({h, skips[i]});
    L.note(lvl + ".skip", "concat", h);
    for (int j = 0; j < cfg.res_blocks; ++j) {
      h = res_block(L, lvl + ".res" + std::to_string(j), h, channels(i), emb, cfg);
      if (cfg.attention_resolutions.count(levels[i]))
        h = L.attention(lvl + ".attn" + std::to_string(j), h, cfg.heads);
    }
    if (i > 0) {
      h = nearest_upsample_x2(h);
      L.note(lvl + ".upsample", "upsample", h);
      h = L.conv(lvl + ".up", h, channels(i - 1), 3);
    }
  }
  h = silu(L.norm("D.out_norm", h, cfg.norm_groups));
  return L.conv("D.out", h, 1, 3, 1, Init::zero);
}

Tensor condition(Layers& L, const Tensor& image, const ModelConfig& cfg) {
  if (cfg.conditioning == Conditioning::raw_concat) {
    if (image.rank() != 4 || image.dim(1) != cfg.image_channels) {
      throw DimensionError("raw conditioning expects [B," + std::to_string(cfg.image_channels) +
                           ",H,W], got " + shape_string(image.shape()));
    }
    return image;
  }
  return image_encoder(L, image, cfg);
}

std::vector<Index> table_rows(const std::vector<int>& steps, int time_steps) {
  std::vector<Index> rows;
  rows.reserve(steps.size());
  for (int t : steps) {
    if (t < 1 || t > time_steps) {
      throw IndexError("timestep " + std::to_string(t) + " outside [1, " +
                       std::to_string(time_steps) + "]");
    }
    rows.push_back(t - 1);
  }
  return rows;
}

Tensor denoise(Layers& L, const Tensor& x_t, const Tensor& cond, const std::vector<int>& steps,
               const ModelConfig& cfg) {
  if (x_t.rank() != 4 || static_cast<std::size_t>(x_t.dim(0)) != steps.size()) {
    throw DimensionError("denoiser needs one timestep per batch element; x_t is " +
                         (x_t.defined() ? shape_string(x_t.shape()) : std::string("<undefined>")));
  }
  if (cond.rank() != 4 || cond.dim(0) != x_t.dim(0) || cond.dim(2) != x_t.dim(2) ||
      cond.dim(3) != x_t.dim(3)) {
    throw DimensionError("condition " + shape_string(cond.shape()) + " does not match x_t " +
                         shape_string(x_t.shape()));
  }
  Tensor table = L.time_table(cfg.time_steps, cfg.embed_dim());
  Tensor emb = embedding_lookup(table, table_rows(steps, cfg.time_steps));

  Tensor merged;
  switch (cfg.conditioning) {
    case Conditioning::sum:
      merged = add(state_encoder(L, x_t, cfg), cond);
      break;
    case Conditioning::feature_concat:
      merged = L.conv("E.merge", concat_channels({state_encoder(L, x_t, cfg), cond}),
                      cfg.base_channels, 1);
      break;
    case Conditioning::raw_concat:
      if (x_t.dim(1) != 1) throw DimensionError("x_t must be single-channel");
      merged = L.conv("E.conv_in", concat_channels({x_t, cond}), cfg.base_channels, 3);
      break;
  }
  L.note("merge", "merge", merged);
  return unet(L, merged, emb, cfg);
}

}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams params;
  std::mt19937_64 rng(seed);
  Layers L(params, rng);
  NoGradGuard no_grad;
  L.time_table(config.time_steps, config.embed_dim());
  Tensor image({1, config.image_channels, config.input_height, config.input_width});
  Tensor x({1, 1, config.input_height, config.input_width});
  denoise(L, x, condition(L, image, config), {1}, config);
  return params;
}

Tensor encode_image_G(const Tensor& image, const ModelParams& params, const ModelConfig& config) {
  Layers L(params);
  return image_encoder(L, image, config);
}

Tensor encode_state_F(const Tensor& x_t, const ModelParams& params, const ModelConfig& config) {
  Layers L(params);
  return state_encoder(L, x_t, config);
}

Tensor encode_condition(const Tensor& image, const ModelParams& params, const ModelConfig& config) {
  Layers L(params);
  return condition(L, image, config);
}

Tensor epsilon_from_condition(const Tensor& x_t, const Tensor& cond, const std::vector<int>& steps,
                              const ModelParams& params, const ModelConfig& config) {
  Layers L(params);
  return denoise(L, x_t, cond, steps, config);
}

Tensor epsilon_theta(const Tensor& x_t, const Tensor& image, const std::vector<int>& steps,
                     const ModelParams& params, const ModelConfig& config) {
  Layers L(params);
  return denoise(L, x_t, condition(L, image, config), steps, config);
}

Tensor epsilon_theta(const Tensor& x_t, const Tensor& image, int t, const ModelParams& params,
                     const ModelConfig& config) {
  if (!x_t.defined() || x_t.rank() != 4) throw DimensionError("x_t must be [B,1,H,W]");
  return epsilon_theta(x_t, image, std::vector<int>(static_cast<std::size_t>(x_t.dim(0)), t),
                       params, config);
}

std::vector<LayerTrace> trace_architecture(const ModelParams& params, const ModelConfig& config) {
  std::vector<LayerTrace> trace;
  Layers L(params);
  L.set_trace(&trace);
  NoGradGuard no_grad;
  Tensor image({1, config.image_channels, config.input_height, config.input_width});
  Tensor x({1, 1, config.input_height, config.input_width});
  denoise(L, x, condition(L, image, config), {1}, config);
  return trace;
}

}  // namespace segdiff
