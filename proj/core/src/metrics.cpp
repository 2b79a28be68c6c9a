// SPDX-License-Identifier: Apache-2.0
#include "gbt/train/metrics.hpp"

#include <cmath>

#include "gbt/error.hpp"
#include "gbt/nn/ops.hpp"

namespace gbt::train {

template <class T>
double mse(const nn::Tensor<T>& pred, const nn::Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw Error(ErrorCode::kShapeMismatch,
                "mse of " + nn::shape_str(pred.shape()) + " vs " + nn::shape_str(target.shape()));
  }
  if (pred.empty()) throw Error(ErrorCode::kShapeMismatch, "mse of empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

template <class T>
double psnr(const nn::Tensor<T>& pred, const nn::Tensor<T>& target) {
  const double e = mse(pred, target);
  if (e <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(e));
}

template <class T>
nn::Var l2_ray_loss(nn::Graph<T>& g, nn::Var pred, nn::Var target) {
  const nn::Shape& s = g.value(pred).shape();
  if (s.size() != 2 || s[1] != 3) {
    throw Error(ErrorCode::kShapeMismatch, "expected [Q,3] predictions, got " + nn::shape_str(s));
  }
  return nn::mse_loss(g, pred, target);
}

template double mse(const nn::Tensor<float>&, const nn::Tensor<float>&);
template double mse(const nn::Tensor<double>&, const nn::Tensor<double>&);
template double psnr(const nn::Tensor<float>&, const nn::Tensor<float>&);
template double psnr(const nn::Tensor<double>&, const nn::Tensor<double>&);
template nn::Var l2_ray_loss(nn::Graph<float>&, nn::Var, nn::Var);
template nn::Var l2_ray_loss(nn::Graph<double>&, nn::Var, nn::Var);

}  // namespace gbt::train
