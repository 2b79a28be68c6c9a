// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "gbt/nn/tensor.hpp"

namespace gbt::synth {

/// Writes a [3, H, W] image in [0, 1] as 8-bit RGB (values are clamped and
/// rounded). Throws kIoError.
void write_png(const std::filesystem::path& path, const nn::Tensor<float>& image);

/// Reads an 8-bit PNG as [3, H, W] in [0, 1]. Gray and alpha channels are
/// expanded/stripped. Throws kIoError.
nn::Tensor<float> read_png(const std::filesystem::path& path);

/// Round-trips an image through 8-bit quantization.
nn::Tensor<float> quantize8(const nn::Tensor<float>& image);

}  // namespace gbt::synth
