// SPDX-License-Identifier: Apache-2.0
#include "gbt/model/config.hpp"

#include "gbt/error.hpp"

namespace gbt::model {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kGbt: return "gbt";
    case Variant::kGbtFixedBias: return "gbt-fb";
    case Variant::kGbtNoBias: return "gbt-nb";
    case Variant::kSrtStar: return "srt*";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  if (name == "gbt") return Variant::kGbt;
  if (name == "gbt-fb") return Variant::kGbtFixedBias;
  if (name == "gbt-nb") return Variant::kGbtNoBias;
  if (name == "srt*" || name == "srt-star") return Variant::kSrtStar;
  throw Error(ErrorCode::kInvalidArgument, "unknown variant '" + std::string(name) + "'");
}

ModelConfig ModelConfig::paper_preset() {
  ModelConfig c;
  c.image_size = 256;
  c.grid = 16;
  c.latent_dim = 768;
  c.num_heads = 12;
  c.encoder_layers = 8;
  c.decoder_layers = 4;
  c.mlp_hidden = {256, 64};
  c.stem_channels = {64, 128, 256};
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.image_size = 8;
  c.grid = 2;
  c.latent_dim = 16;
  c.num_heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.harmonic = {2, 0};
  c.mlp_hidden = {8};
  c.stem_channels = {4, 4, 6};
  c.ff_multiplier = 2;
  return c;
}

std::vector<int> ModelConfig::stem_strides() const {
  int factor = image_size / grid;
  std::vector<int> strides(stem_channels.size(), 1);
  // Spread factors of two from the last layer backwards, the rest on the first.
  for (std::size_t i = strides.size(); i-- > 1 && factor % 2 == 0;) {
    strides[i] = 2;
    factor /= 2;
  }
  if (!strides.empty()) strides[0] = factor;
  return strides;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidArgument, msg); };
  if (image_size < 1 || grid < 1) fail("image_size and grid must be positive");
  if (image_size % grid != 0) fail("grid must divide image_size");
  if (latent_dim < 2 || num_heads < 1 || latent_dim % num_heads != 0) {
    fail("latent_dim must be divisible by num_heads");
  }
  if (encoder_layers < 0 || decoder_layers < 1) fail("need >= 0 encoder and >= 1 decoder layers");
  if (harmonic.num_frequencies < 1) fail("harmonic embedding needs >= 1 frequency");
  if (stem_channels.size() != 3) fail("stem has exactly three convolutions");
  for (int c : stem_channels) {
    if (c < 1) fail("stem channels must be positive");
  }
  for (int h : mlp_hidden) {
    if (h < 1) fail("mlp hidden widths must be positive");
  }
  if (ff_multiplier < 1) fail("ff_multiplier must be >= 1");
  const int factor = image_size / grid;
  if (stem_strides()[0] > 4 || (factor & (factor - 1)) != 0) {
    fail("image_size / grid must be a power of two no larger than 16");
  }
}

}  // namespace gbt::model
