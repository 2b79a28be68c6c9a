// SPDX-License-Identifier: Apache-2.0
#include "gbt/nn/adam.hpp"

#include <cmath>

namespace gbt::nn {

template <class T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state) {
  const AdamConfig& cfg = state.config;
  if (!(cfg.lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "Adam learning rate must be > 0");
  if (state.first_moment.empty()) {
    for (const Parameter<T>* p : params) {
      state.first_moment.emplace_back(p->value.shape());
      state.second_moment.emplace_back(p->value.shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw Error(ErrorCode::kShapeMismatch, "Adam state does not match the parameter list");
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step = static_cast<T>(cfg.lr / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    Tensor<T>& m = state.first_moment[i];
    Tensor<T>& v = state.second_moment[i];
    if (m.shape() != p.value.shape() || v.shape() != p.value.shape()) {
      throw Error(ErrorCode::kShapeMismatch, "Adam moment shape differs for " + p.name);
    }
    if (!p.trainable || p.grad.empty()) continue;
    if (p.grad.shape() != p.value.shape()) {
      throw Error(ErrorCode::kShapeMismatch, "gradient shape differs for " + p.name);
    }
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const T gk = p.grad[k];
      m[k] = b1 * m[k] + (T(1) - b1) * gk;
      v[k] = b2 * v[k] + (T(1) - b2) * gk * gk;
      p.value[k] -= step * m[k] / (std::sqrt(v[k]) * inv_sqrt_c2 + eps);
    }
  }
}

template void adam_step<float>(std::span<Parameter<float>* const>, AdamState<float>&);
template void adam_step<double>(std::span<Parameter<double>* const>, AdamState<double>&);

}  // namespace gbt::nn
