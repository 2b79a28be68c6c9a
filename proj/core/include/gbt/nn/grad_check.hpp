// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checker (f64 only).
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "gbt/nn/graph.hpp"

namespace gbt::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
  /// Coordinates re-measured with a smaller step because the first one
  /// straddled a non-differentiable point.
  std::size_t kink_retries = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps gradients
/// that are zero up to rounding from dominating the report.
inline constexpr double kGradCheckFloor = 1e-6;

double relative_error(double analytic, double numeric, double floor = kGradCheckFloor);

/// f builds a scalar from graph inputs bound to `inputs` (one Var each).
using GraphFn = std::function<Var(Graph<double>&, std::span<const Var>)>;

GradCheckResult grad_check(const GraphFn& f, std::vector<Tensor<double>> inputs, double h = 1e-5,
                           double floor = kGradCheckFloor);

/// Same check over parameters read by f through Graph::param. The parameter
/// values are perturbed in place and restored before returning.
GradCheckResult grad_check_params(const std::function<Var(Graph<double>&)>& f,
                                  std::span<Parameter<double>* const> params, double h = 1e-5,
                                  double floor = kGradCheckFloor);

}  // namespace gbt::nn
