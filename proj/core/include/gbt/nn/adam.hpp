// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gbt/nn/graph.hpp"

namespace gbt::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments are indexed like the parameter list passed to adam_step and are
/// allocated lazily on the first step.
template <class T>
struct AdamState {
  AdamConfig config;
  std::int64_t step_count = 0;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
};

/// Bias-corrected Adam update of every trainable parameter using its grad.
/// Frozen parameters keep their values (their moments stay zero).
template <class T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state);

}  // namespace gbt::nn
