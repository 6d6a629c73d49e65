// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "segdiff/tensor.hpp"

namespace segdiff {

/// How the image enters the denoiser.
///   sum            F(x_t) + G(I)
///   feature_concat 1x1 conv over [F(x_t), G(I)]
///   raw_concat     [x_t, I] straight into the first U-Net conv, no G or F
enum class Conditioning { sum, feature_concat, raw_concat };

std::string to_string(Conditioning mode);
Conditioning conditioning_from_string(const std::string& name);

struct ModelConfig {
  int base_channels = 32;
  std::vector<int> channel_multipliers{1, 1, 2, 2};
  std::set<int> attention_resolutions{8, 4};
  int rrdb_blocks = 2;
  int res_blocks = 1;  // residual blocks per U-Net level
  int heads = 4;
  int time_embed_dim = 0;  // 0 means 4 * base_channels
  int norm_groups = 8;     // capped by gcd with each layer's channel count
  int time_steps = 100;    // rows of the learned time table
  int image_channels = 3;
  int input_height = 32;
  int input_width = 32;
  Conditioning conditioning = Conditioning::sum;

  int depth() const { return static_cast<int>(channel_multipliers.size()); }
  int embed_dim() const { return time_embed_dim > 0 ? time_embed_dim : 4 * base_channels; }
  /// Spatial side lengths of the encoder levels, largest first.
  std::vector<int> level_resolutions() const;
  void validate() const;

  /// Compact config used by gradient checks: C=4, depth 2, 8x8 input.
  static ModelConfig tiny();
  /// Desk-scale toy config trained by the acceptance suite.
  static ModelConfig toy();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Named learnable tensors in creation order. Names are dotted paths whose
/// first component is the sub-network: G, F, E, D or time_table.
class ModelParams {
 public:
  using Entry = std::pair<std::string, Tensor>;

  Tensor& add(const std::string& name, Tensor value);
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  Index parameter_count() const;
  std::vector<Entry>::const_iterator begin() const { return entries_.begin(); }
  std::vector<Entry>::const_iterator end() const { return entries_.end(); }
  std::vector<Entry>& entries() { return entries_; }

  /// Deep copy with fresh gradient-tracking leaves.
  ModelParams clone() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Prefix naming the sub-network a parameter belongs to ("G", "F", "E", "D", "time_table").
std::string parameter_group(const std::string& name);

/// Random initialization: fan-in scaled convs and linears, a zeroed final
/// output conv (so the untrained denoiser predicts zero), time table ~ N(0, 0.02^2).
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// G(I): RRDB image encoder, [B,3,H,W] -> [B,C,H,W].
Tensor encode_image_G(const Tensor& image, const ModelParams& params, const ModelConfig& config);

/// F(x_t): single conv, [B,1,H,W] -> [B,C,H,W].
Tensor encode_state_F(const Tensor& x_t, const ModelParams& params, const ModelConfig& config);

/// Image-side conditioning that does not depend on x_t or t: G(I) for the
/// feature modes, the raw image for raw_concat. Computed once per image at
/// sampling time.
Tensor encode_condition(const Tensor& image, const ModelParams& params, const ModelConfig& config);

/// Denoiser evaluated with a precomputed condition; `steps` holds one
/// timestep in [1, T] per batch element.
Tensor epsilon_from_condition(const Tensor& x_t, const Tensor& condition,
                              const std::vector<int>& steps, const ModelParams& params,
                              const ModelConfig& config);

/// eps_theta(x_t, I, t) = D(E(F(x_t) + G(I), t), t) in the default sum mode.
Tensor epsilon_theta(const Tensor& x_t, const Tensor& image, int t, const ModelParams& params,
                     const ModelConfig& config);
Tensor epsilon_theta(const Tensor& x_t, const Tensor& image, const std::vector<int>& steps,
                     const ModelParams& params, const ModelConfig& config);

/// One entry per layer invocation of a forward pass, for structural audits.
struct LayerTrace {
  std::string name;
  std::string kind;  // conv, norm, linear, attention, resblock, concat, upsample
  Shape output_shape;
};

/// Runs one forward pass on zero inputs and records every layer it executes.
std::vector<LayerTrace> trace_architecture(const ModelParams& params, const ModelConfig& config);

}  // namespace segdiff
