// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "gbt/model/config.hpp"
#include "gbt/nn/grad_check.hpp"

namespace gbt::train {

struct ModelGradCheck {
  nn::GradCheckResult result;
  std::string worst_param;
  std::size_t params_checked = 0;
};

/// Finite-difference check of the L2 ray loss with respect to every trainable
/// parameter of a double-precision model: two rendered context views of a
/// random scene, `num_rays` query rays from a third view.
ModelGradCheck model_grad_check(const model::ModelConfig& config, std::uint64_t seed, int num_rays = 4,
                                double h = 1e-5);

}  // namespace gbt::train
