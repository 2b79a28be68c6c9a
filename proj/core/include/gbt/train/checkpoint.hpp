// SPDX-License-Identifier: Apache-2.0
//
// Binary layout, all integers and floats little-endian:
//   "GBT1" | u32 version | model config | u64 step
//   u32 tensor count, then per tensor: u32 name length, name bytes,
//     u32 rank, u64 dims[rank], f32 data[numel]
//   u8 has_optimizer; if set: i64 adam step, f64 lr, beta1, beta2, eps,
//     u32 count, then (first, second) moments per parameter as tensors
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gbt/model/gbt_model.hpp"
#include "gbt/nn/adam.hpp"

namespace gbt::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  nn::Tensor<float> tensor;
};

struct Checkpoint {
  model::ModelConfig config;
  std::uint64_t step = 0;
  std::vector<NamedTensor> tensors;
  std::optional<nn::AdamState<float>> optimizer;
};

Checkpoint make_checkpoint(const model::GbtModel<float>& model, std::uint64_t step,
                           const nn::AdamState<float>* optimizer = nullptr);

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
/// Throws kBadMagic, kUnsupportedVersion or kIoError (truncated data).
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies tensors into a model built from the same config. Throws
/// kShapeMismatchOnLoad on any config, name or shape disagreement.
void apply_checkpoint(const Checkpoint& ckpt, model::GbtModel<float>& model,
                      nn::AdamState<float>* optimizer = nullptr);

}  // namespace gbt::train
