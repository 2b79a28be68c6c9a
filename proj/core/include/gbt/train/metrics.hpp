// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "gbt/nn/graph.hpp"
#include "gbt/nn/tensor.hpp"

namespace gbt::train {

inline constexpr double kPsnrCap = 99.0;

/// 10 * log10(1 / MSE) for images in [0, 1]; zero MSE gives kPsnrCap.
template <class T>
double psnr(const nn::Tensor<T>& pred, const nn::Tensor<T>& target);

template <class T>
double mse(const nn::Tensor<T>& pred, const nn::Tensor<T>& target);

/// Mean squared error over every entry of [Q, 3] predictions.
template <class T>
nn::Var l2_ray_loss(nn::Graph<T>& g, nn::Var pred, nn::Var target);

}  // namespace gbt::train
