// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operators. Every op validates shapes and throws
// ErrorCode::kShapeMismatch on disagreement. Matrices are the trailing two
// axes of row-major tensors unless stated otherwise.
#pragma once

#include <span>
#include <vector>

#include "gbt/nn/graph.hpp"

namespace gbt::nn {

/// [m,k] x [k,n] -> [m,n].
template <class T>
Var matmul(Graph<T>& g, Var a, Var b);

/// [m,k] x [n,k]^T -> [m,n].
template <class T>
Var matmul_nt(Graph<T>& g, Var a, Var b);

/// x[..., in] * W[in, out] + b[out]. b may be invalid (no bias).
template <class T>
Var linear(Graph<T>& g, Var x, Var w, Var b);

template <class T>
Var add(Graph<T>& g, Var a, Var b);

template <class T>
Var scale(Graph<T>& g, Var x, T factor);

/// Elementwise square.
template <class T>
Var square(Graph<T>& g, Var x);

/// s[1] * x, broadcasting the scalar.
template <class T>
Var mul_scalar(Graph<T>& g, Var s, Var x);

/// Softmax over the last axis of logits + bias. bias has either the shape of
/// logits or the shape of its trailing axes (broadcast over leading ones).
template <class T>
Var softmax_with_bias(Graph<T>& g, Var logits, Var bias);

/// Softmax over the last axis.
template <class T>
Var softmax(Graph<T>& g, Var logits);

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Standardizes the last axis (biased variance, eps 1e-5), then gain/shift.
template <class T>
Var layernorm(Graph<T>& g, Var x, Var gain, Var shift);

/// tanh approximation.
template <class T>
Var gelu(Graph<T>& g, Var x);

template <class T>
Var sigmoid(Graph<T>& g, Var x);

template <class T>
Var relu(Graph<T>& g, Var x);

/// Concatenation along `axis`; all other extents must agree.
template <class T>
Var concat(Graph<T>& g, std::span<const Var> xs, std::size_t axis);

/// Columns [start, start+len) of a [rows, cols] view of x.
template <class T>
Var slice_cols(Graph<T>& g, Var x, std::size_t start, std::size_t len);

/// Rows [start, start+len) of a [rows, cols] view of x.
template <class T>
Var slice_rows(Graph<T>& g, Var x, std::size_t start, std::size_t len);

/// 2-D transpose.
template <class T>
Var transpose(Graph<T>& g, Var x);

template <class T>
Var reshape(Graph<T>& g, Var x, Shape shape);

/// x[N, C_in, H, W] conv kernel[C_out, C_in, k, k] + bias[C_out] with
/// symmetric zero padding -> [N, C_out, H', W'].
template <class T>
Var conv2d(Graph<T>& g, Var x, Var kernel, Var bias, int stride, int padding);

/// Mean of (pred - target)^2 over every entry.
template <class T>
Var mse_loss(Graph<T>& g, Var pred, Var target);

template <class T>
Var sum(Graph<T>& g, Var x);

template <class T>
Var mean(Graph<T>& g, Var x);

}  // namespace gbt::nn
