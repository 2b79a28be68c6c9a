// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "gbt/geometry/ray_geometry.hpp"

namespace gbt::model {

/// GBT learns gamma per layer; GBT-fb freezes gamma at 1; GBT-nb drops the
/// bias; SRT* drops the bias and embeds rays as (origin, direction).
enum class Variant { kGbt, kGbtFixedBias, kGbtNoBias, kSrtStar };

std::string_view to_string(Variant v);
/// Accepts "gbt", "gbt-fb", "gbt-nb", "srt*" (and "srt-star").
Variant parse_variant(std::string_view name);

inline bool has_distance_bias(Variant v) { return v == Variant::kGbt || v == Variant::kGbtFixedBias; }
inline bool uses_plucker(Variant v) { return v != Variant::kSrtStar; }

struct ModelConfig {
  int image_size = 64;
  int grid = 8;
  int latent_dim = 192;
  int num_heads = 6;
  int encoder_layers = 4;
  int decoder_layers = 2;
  geom::HarmonicConfig harmonic;
  Variant variant = Variant::kGbt;
  std::vector<int> mlp_hidden{128, 64};
  /// Output channels of the three stem convolutions; the last one is C_cnn.
  std::vector<int> stem_channels{32, 64, 64};
  int ff_multiplier = 4;
  double gamma_init = 1.0;

  /// 256 px, 16x16 grid, 768-d, 12 heads, 8 + 4 layers, 256-channel stem,
  /// 256/64 color MLP.
  static ModelConfig paper_preset();
  /// Smallest configuration used by the gradient checks.
  static ModelConfig tiny();

  int head_dim() const { return latent_dim / num_heads; }
  int tokens_per_view() const { return grid * grid; }
  /// Width of the harmonic ray embedding (6 coordinates per ray).
  int ray_embedding_dim() const { return static_cast<int>(harmonic.output_dim(6)); }
  /// Stride of each stem convolution; their product is image_size / grid.
  std::vector<int> stem_strides() const;

  /// Throws ErrorCode::kInvalidArgument on an inconsistent configuration.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace gbt::model
