// SPDX-License-Identifier: Apache-2.0
#include "gbt/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gbt::nn {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

constexpr double kKinkRatio = 1e-4;
// Band around the 0.1 asymmetry ratio expected from a smooth function.
constexpr double kSmoothShrinkLow = 0.05;
constexpr double kSmoothShrinkHigh = 0.2;

void record(GradCheckResult& r, std::size_t input, std::size_t index, double a, double n, double floor) {
  const double e = relative_error(a, n, floor);
  ++r.coordinates;
  if (e > r.max_rel_error || r.coordinates == 1) {
    r.max_rel_error = std::max(e, r.max_rel_error);
    r.worst_input = input;
    r.worst_index = index;
    r.worst_analytic = a;
    r.worst_numeric = n;
  }
}

/// Central difference of `at` around orig. If the one-sided slopes disagree
/// by more than kKinkRatio of their magnitude the step may straddle a kink
/// (relu), so the slopes are re-measured with a step ten times smaller. On a
/// smooth function the asymmetry then shrinks about tenfold (it is h * f'');
/// the smaller step is used only when it does not, which is the signature of
/// a kink. Near a stationary point this keeps the larger, less rounding-prone
/// step.
template <class At>
double central_difference(At at, double orig, double f0, double h, double floor, std::size_t& retries) {
  // Roundoff in a second difference at step s, relative to the derivative scale.
  const double eps = std::numeric_limits<double>::epsilon();
  auto noise = [&](double s) { return 8.0 * eps * std::max(std::abs(f0), 1.0) / s; };
  const double fp = at(orig + h);
  const double fm = at(orig - h);
  const double asym = std::abs(fp - 2.0 * f0 + fm) / h;
  const double scale = std::max({std::abs(fp - f0) / h, std::abs(f0 - fm) / h, floor});
  const double central = (fp - fm) / (2.0 * h);
  if (asym <= kKinkRatio * scale + noise(h)) return central;

  const double s = 0.1 * h;
  const double sp = at(orig + s);
  const double sm = at(orig - s);
  const double asym_s = std::abs(sp - 2.0 * f0 + sm) / s;
  if (asym_s > kSmoothShrinkLow * asym - noise(s) && asym_s < kSmoothShrinkHigh * asym + noise(s)) return central;
  ++retries;
  return (sp - sm) / (2.0 * s);
}

}  // namespace

GradCheckResult grad_check(const GraphFn& f, std::vector<Tensor<double>> inputs, double h, double floor) {
  auto evaluate = [&](bool with_grad, std::vector<Tensor<double>>* grads) {
    Graph<double> g(with_grad);
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.input(t, true));
    Var out = f(g, vars);
    const double value = g.value(out)[0];
    if (with_grad) {
      g.backward(out);
      for (std::size_t i = 0; i < vars.size(); ++i) {
        const Tensor<double>& gr = g.grad(vars[i]);
        grads->push_back(gr.empty() ? Tensor<double>(inputs[i].shape()) : gr);
      }
    }
    return value;
  };

  std::vector<Tensor<double>> analytic;
  const double f0 = evaluate(true, &analytic);

  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double orig = inputs[i][k];
      auto at = [&](double x) {
        inputs[i][k] = x;
        return evaluate(false, nullptr);
      };
      const double numeric = central_difference(at, orig, f0, h, floor, result.kink_retries);
      inputs[i][k] = orig;
      record(result, i, k, analytic[i][k], numeric, floor);
    }
  }
  return result;
}

GradCheckResult grad_check_params(const std::function<Var(Graph<double>&)>& f,
                                  std::span<Parameter<double>* const> params, double h, double floor) {
  for (Parameter<double>* p : params) p->zero_grad();
  double f0 = 0.0;
  {
    Graph<double> g(true);
    Var out = f(g);
    f0 = g.value(out)[0];
    g.backward(out);
  }
  std::vector<Tensor<double>> analytic;
  for (Parameter<double>* p : params) analytic.push_back(p->grad);

  auto value_of = [&] {
    Graph<double> g(false);
    return g.value(f(g))[0];
  };

  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<double>& p = *params[i];
    if (!p.trainable) continue;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double orig = p.value[k];
      auto at = [&](double x) {
        p.value[k] = x;
        return value_of();
      };
      const double numeric = central_difference(at, orig, f0, h, floor, result.kink_retries);
      p.value[k] = orig;
      record(result, i, k, analytic[i][k], numeric, floor);
    }
  }
  return result;
}

}  // namespace gbt::nn
