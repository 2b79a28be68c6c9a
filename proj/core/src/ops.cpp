// SPDX-License-Identifier: Apache-2.0
#include "gbt/nn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

namespace gbt::nn {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using ConstArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <class T>
ConstMatMap<T> as_mat(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <class T>
MatMap<T> as_mat(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return MatMap<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <class T>
ConstArrMap<T> as_arr(const Tensor<T>& t) {
  return ConstArrMap<T>(t.data(), static_cast<Eigen::Index>(t.size()));
}
template <class T>
ArrMap<T> as_arr(Tensor<T>& t) {
  return ArrMap<T>(t.data(), static_cast<Eigen::Index>(t.size()));
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

void require_matrix(const char* op, const Shape& s) {
  if (s.size() != 2) throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": expected rank 2, got " + shape_str(s));
}

// Unary elementwise op; `deriv(x, y)` gives dy/dx from input and output.
template <class T, class Fwd, class Deriv>
Var elementwise(Graph<T>& g, Var x, Fwd fwd, Deriv deriv) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return g.emit(std::move(out), {x}, [x, deriv](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dy) {
    Tensor<T>* dx = gr.grad_sink(x);
    if (!dx) return;
    const Tensor<T>& xv = gr.value(x);
    for (std::size_t i = 0; i < xv.size(); ++i) (*dx)[i] += dy[i] * deriv(xv[i]);
  });
}

}  // namespace

template <class T>
Var matmul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  require_matrix("matmul", av.shape());
  require_matrix("matmul", bv.shape());
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) mismatch("matmul", av.shape(), bv.shape());
  Tensor<T> out({m, n});
  as_mat(out, m, n).noalias() = as_mat(av, m, k) * as_mat(bv, k, n);
  return g.emit(std::move(out), {a, b}, [a, b, m, k, n](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dc) {
    auto dcm = as_mat(dc, m, n);
    if (Tensor<T>* da = gr.grad_sink(a)) {
      as_mat(*da, m, k).noalias() += dcm * as_mat(gr.value(b), k, n).transpose();
    }
    if (Tensor<T>* db = gr.grad_sink(b)) {
      as_mat(*db, k, n).noalias() += as_mat(gr.value(a), m, k).transpose() * dcm;
    }
  });
}

template <class T>
Var matmul_nt(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  require_matrix("matmul_nt", av.shape());
  require_matrix("matmul_nt", bv.shape());
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  if (bv.dim(1) != k) mismatch("matmul_nt", av.shape(), bv.shape());
  Tensor<T> out({m, n});
  as_mat(out, m, n).noalias() = as_mat(av, m, k) * as_mat(bv, n, k).transpose();
  return g.emit(std::move(out), {a, b}, [a, b, m, k, n](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dc) {
    auto dcm = as_mat(dc, m, n);
    if (Tensor<T>* da = gr.grad_sink(a)) {
      as_mat(*da, m, k).noalias() += dcm * as_mat(gr.value(b), n, k);
    }
    if (Tensor<T>* db = gr.grad_sink(b)) {
      as_mat(*db, n, k).noalias() += dcm.transpose() * as_mat(gr.value(a), m, k);
    }
  });
}

template <class T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  require_matrix("linear weight", wv.shape());
  const std::size_t in = wv.dim(0), outc = wv.dim(1);
  if (xv.cols() != in) mismatch("linear", xv.shape(), wv.shape());
  if (b.valid() && g.value(b).size() != outc) mismatch("linear bias", g.value(b).shape(), wv.shape());
  const std::size_t rows = xv.rows();
  Shape out_shape = xv.shape();
  out_shape.back() = outc;
  Tensor<T> out(out_shape);
  auto om = as_mat(out, rows, outc);
  om.noalias() = as_mat(xv, rows, in) * as_mat(wv, in, outc);
  if (b.valid()) {
    om.rowwise() += as_mat(g.value(b), 1, outc).row(0);
  }
  std::vector<Var> parents{x, w};
  if (b.valid()) parents.push_back(b);
  return g.emit(std::move(out), parents, [x, w, b, rows, in, outc](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dy) {
    auto dym = as_mat(dy, rows, outc);
    if (Tensor<T>* dx = gr.grad_sink(x)) {
      as_mat(*dx, rows, in).noalias() += dym * as_mat(gr.value(w), in, outc).transpose();
    }
    if (Tensor<T>* dw = gr.grad_sink(w)) {
      as_mat(*dw, in, outc).noalias() += as_mat(gr.value(x), rows, in).transpose() * dym;
    }
    if (b.valid()) {
      if (Tensor<T>* db = gr.grad_sink(b)) {
        as_mat(*db, 1, outc).row(0) += dym.colwise().sum();
      }
    }
  });
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  if (av.shape() != bv.shape()) mismatch("add", av.shape(), bv.shape());
  Tensor<T> out(av.shape());
  as_arr(out) = as_arr(av) + as_arr(bv);
  return g.emit(std::move(out), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dy) {
    if (Tensor<T>* da = gr.grad_sink(a)) as_arr(*da) += as_arr(dy);
    if (Tensor<T>* db = gr.grad_sink(b)) as_arr(*db) += as_arr(dy);
  });
}

template <class T>
Var scale(Graph<T>& g, Var x, T factor) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape());
  as_arr(out) = as_arr(xv) * factor;
  return g.emit(std::move(out), {x}, [x, factor](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dy) {
    if (Tensor<T>* dx = gr.grad_sink(x)) as_arr(*dx) += as_arr(dy) * factor;
  });
}

template <class T>
Var square(Graph<T>& g, Var x) {
  return elementwise(g, x, [](T v) { return v * v; }, [](T v) { return T(2) * v; });
}

template <class T>
Var mul_scalar(Graph<T>& g, Var s, Var x) {
  const Tensor<T>& sv = g.value(s);
  if (sv.size() != 1) mismatch("mul_scalar", sv.shape(), g.value(x).shape());
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape());
  as_arr(out) = as_arr(xv) * sv[0];
  return g.emit(std::move(out), {s, x}, [s, x](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dy) {
    if (Tensor<T>* ds = gr.grad_sink(s)) (*ds)[0] += (as_arr(dy) * as_arr(gr.value(x))).sum();
    if (Tensor<T>* dx = gr.grad_sink(x)) as_arr(*dx) += as_arr(dy) * gr.value(s)[0];
  });
}

namespace {

template <class T>
void softmax_rows(const T* in, const T* bias, std::size_t bias_size, std::size_t rows, std::size_t n,
                  T* out) {
  using Row = Eigen::Array<T, Eigen::Dynamic, 1>;
  const auto len = static_cast<Eigen::Index>(n);
  for (std::size_t r = 0; r < rows; ++r) {
    Eigen::Map<Row> y(out + r * n, len);
    y = Eigen::Map<const Row>(in + r * n, len);
    if (bias) y += Eigen::Map<const Row>(bias + (r * n) % bias_size, len);
    y = (y - y.maxCoeff()).exp();
    y *= T(1) / y.sum();
  }
}

// dz = y * (dy - sum(dy * y)) per row.
template <class T>
void softmax_backward_rows(const T* y, const T* dy, std::size_t rows, std::size_t n, T* dz_out,
                           std::size_t dz_size) {
  using Row = Eigen::Array<T, Eigen::Dynamic, 1>;
  const auto len = static_cast<Eigen::Index>(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const Eigen::Map<const Row> yr(y + r * n, len);
    const Eigen::Map<const Row> dyr(dy + r * n, len);
    const T dot = (dyr * yr).sum();
    Eigen::Map<Row>(dz_out + (r * n) % dz_size, len) += yr * (dyr - dot);
  }
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

template <class T>
Var softmax_with_bias(Graph<T>& g, Var logits, Var bias) {
  const Tensor<T>& zv = g.value(logits);
  const Tensor<T>& bv = g.value(bias);
  if (!is_suffix(bv.shape(), zv.shape()) || bv.cols() != zv.cols()) {
    mismatch("softmax_with_bias", zv.shape(), bv.shape());
  }
  const std::size_t n = zv.cols(), rows = zv.rows();
  Tensor<T> out(zv.shape());
  softmax_rows(zv.data(), bv.data(), bv.size(), rows, n, out.data());
  return g.emit(std::move(out), {logits, bias}, [logits, bias, rows, n](Graph<T>& gr, const Tensor<T>& y, const Tensor<T>& dy) {
    Tensor<T>* dl = gr.grad_sink(logits);
    Tensor<T>* db = gr.grad_sink(bias);
    if (dl) softmax_backward_rows(y.data(), dy.data(), rows, n, dl->data(), dl->size());
    if (db) softmax_backward_rows(y.data(), dy.data(), rows, n, db->data(), db->size());
  });
}

template <class T>
Var softmax(Graph<T>& g, Var logits) {
  const Tensor<T>& zv = g.value(logits);
  const std::size_t n = zv.cols(), rows = zv.rows();
  Tensor<T> out(zv.shape());
  softmax_rows<T>(zv.data(), nullptr, 0, rows, n, out.data());
  return g.emit(std::move(out), {logits}, [logits, rows, n](Graph<T>& gr, const Tensor<T>& y, const Tensor<T>& dy) {
    if (Tensor<T>* dl = gr.grad_sink(logits)) {
      softmax_backward_rows(y.data(), dy.data(), rows, n, dl->data(), dl->size());
    }
  });
}

template <class T>
Var layernorm(Graph<T>& g, Var x, Var gain, Var shift) {
  const Tensor<T>& xv = g.value(x);
  const std::size_t d = xv.cols(), rows = xv.rows();
  if (d < 2) throw Error(ErrorCode::kShapeMismatch, "layernorm needs at least 2 features");
  if (g.value(gain).size() != d) mismatch("layernorm gain", g.value(gain).shape(), xv.shape());
  if (g.value(shift).size() != d) mismatch("layernorm shift", g.value(shift).shape(), xv.shape());
  const T* gv = g.value(gain).data();
  const T* sv = g.value(shift).data();
  Tensor<T> out(xv.shape());
  // Normalized activations and reciprocal std per row for backward.
  auto xhat = std::make_shared<Tensor<T>>(xv.shape());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEpsilon));
    (*rstd)[r] = rs;
    T* hr = xhat->data() + r * d;
    T* orow = out.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mu) * rs;
      orow[j] = hr[j] * gv[j] + sv[j];
    }
  }
  return g.emit(std::move(out), {x, gain, shift},
                [x, gain, shift, xhat, rstd, rows, d](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dy) {
                  Tensor<T>* dx = gr.grad_sink(x);
                  Tensor<T>* dg = gr.grad_sink(gain);
                  Tensor<T>* ds = gr.grad_sink(shift);
                  const T* gv = gr.value(gain).data();
                  const T inv_d = T(1) / static_cast<T>(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const T* dyr = dy.data() + r * d;
                    const T* hr = xhat->data() + r * d;
                    if (dg) for (std::size_t j = 0; j < d; ++j) (*dg)[j] += dyr[j] * hr[j];
                    if (ds) for (std::size_t j = 0; j < d; ++j) (*ds)[j] += dyr[j];
                    if (!dx) continue;
                    T sum_dh = 0, sum_dh_h = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                      const T dh = dyr[j] * gv[j];
                      sum_dh += dh;
                      sum_dh_h += dh * hr[j];
                    }
                    T* dxr = dx->data() + r * d;
                    const T rs = (*rstd)[r];
                    for (std::size_t j = 0; j < d; ++j) {
                      const T dh = dyr[j] * gv[j];
                      dxr[j] += rs * (dh - inv_d * sum_dh - hr[j] * inv_d * sum_dh_h);
                    }
                  }
                });
}

template <class T>
Var gelu(Graph<T>& g, Var x) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = static_cast<T>(0.044715);
  const Tensor<T>& xv = g.value(x);
  // 0.5 * (1 + tanh(u)) == sigmoid(2u); the sigmoid form avoids cancellation
  // for large negative inputs.
  auto s = std::make_shared<Tensor<T>>(xv.shape());
  as_arr(*s) = T(1) / (T(1) + (T(-2) * c * (as_arr(xv) + a * as_arr(xv).cube())).exp());
  Tensor<T> out(xv.shape());
  as_arr(out) = as_arr(xv) * as_arr(*s);
  return g.emit(std::move(out), {x}, [x, s](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dy) {
    Tensor<T>* dx = gr.grad_sink(x);
    if (!dx) return;
    const auto v = as_arr(gr.value(x));
    const auto sv = as_arr(*s);
    as_arr(*dx) += as_arr(dy) * (sv + T(2) * c * v * sv * (T(1) - sv) * (T(1) + T(3) * a * v.square()));
  });
}

template <class T>
Var sigmoid(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape());
  as_arr(out) = T(1) / (T(1) + (-as_arr(xv)).exp());
  return g.emit(std::move(out), {x}, [x](Graph<T>& gr, const Tensor<T>& y, const Tensor<T>& dy) {
    if (Tensor<T>* dx = gr.grad_sink(x)) {
      as_arr(*dx) += as_arr(dy) * as_arr(y) * (T(1) - as_arr(y));
    }
  });
}

template <class T>
Var relu(Graph<T>& g, Var x) {
  return elementwise(g, x, [](T v) { return v > T(0) ? v : T(0); },
                     [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var concat(Graph<T>& g, std::span<const Var> xs, std::size_t axis) {
  if (xs.empty()) throw Error(ErrorCode::kShapeMismatch, "concat of nothing");
  const Shape& first = g.value(xs[0]).shape();
  if (axis >= first.size()) throw Error(ErrorCode::kShapeMismatch, "concat axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (Var v : xs) {
    const Shape& s = g.value(v).shape();
    if (s.size() != first.size()) mismatch("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) mismatch("concat", first, s);
    }
    out_shape[axis] += s[axis];
    widths.push_back(s[axis] * inner);
  }
  const std::size_t total = out_shape[axis] * inner;
  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const T* src = g.value(xs[k]).data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * widths[k], widths[k], out.data() + o * total + offset);
    }
    offset += widths[k];
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  return g.emit(std::move(out), parents, [parents, widths, outer, total](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dy) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parents.size(); ++k) {
      if (Tensor<T>* dx = gr.grad_sink(parents[k])) {
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = dy.data() + o * total + off;
          T* dst = dx->data() + o * widths[k];
          for (std::size_t j = 0; j < widths[k]; ++j) dst[j] += src[j];
        }
      }
      off += widths[k];
    }
  });
}

template <class T>
Var slice_cols(Graph<T>& g, Var x, std::size_t start, std::size_t len) {
  const Tensor<T>& xv = g.value(x);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (start + len > cols) throw Error(ErrorCode::kShapeMismatch, "slice_cols out of range");
  Tensor<T> out({rows, len});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.data() + r * cols + start, len, out.data() + r * len);
  }
  return g.emit(std::move(out), {x}, [x, start, len, rows, cols](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dy) {
    if (Tensor<T>* dx = gr.grad_sink(x)) {
      for (std::size_t r = 0; r < rows; ++r) {
        T* dst = dx->data() + r * cols + start;
        const T* src = dy.data() + r * len;
        for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
      }
    }
  });
}

template <class T>
Var slice_rows(Graph<T>& g, Var x, std::size_t start, std::size_t len) {
  const Tensor<T>& xv = g.value(x);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (start + len > rows) throw Error(ErrorCode::kShapeMismatch, "slice_rows out of range");
  Tensor<T> out({len, cols});
  std::copy_n(xv.data() + start * cols, len * cols, out.data());
  return g.emit(std::move(out), {x}, [x, start, len, cols](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dy) {
    if (Tensor<T>* dx = gr.grad_sink(x)) {
      T* dst = dx->data() + start * cols;
      for (std::size_t j = 0; j < len * cols; ++j) dst[j] += dy[j];
    }
  });
}

template <class T>
Var transpose(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  require_matrix("transpose", xv.shape());
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor<T> out({n, m});
  as_mat(out, n, m) = as_mat(xv, m, n).transpose();
  return g.emit(std::move(out), {x}, [x, m, n](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dy) {
    if (Tensor<T>* dx = gr.grad_sink(x)) as_mat(*dx, m, n) += as_mat(dy, n, m).transpose();
  });
}

template <class T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
  Tensor<T> out = g.value(x);
  out.reshape(std::move(shape));
  return g.emit(std::move(out), {x}, [x](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dy) {
    if (Tensor<T>* dx = gr.grad_sink(x)) as_arr(*dx) += as_arr(dy);
  });
}

template <class T>
Var conv2d(Graph<T>& g, Var x, Var kernel, Var bias, int stride, int padding) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& kv = g.value(kernel);
  if (xv.rank() != 4 || kv.rank() != 4 || kv.dim(1) != xv.dim(1) || kv.dim(2) != kv.dim(3)) {
    mismatch("conv2d", xv.shape(), kv.shape());
  }
  if (stride < 1 || padding < 0) throw Error(ErrorCode::kInvalidArgument, "conv2d stride/padding");
  const std::size_t n = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t cout = kv.dim(0);
  const int k = static_cast<int>(kv.dim(2));
  const int ho_i = (static_cast<int>(h) + 2 * padding - k) / stride + 1;
  const int wo_i = (static_cast<int>(w) + 2 * padding - k) / stride + 1;
  if (ho_i < 1 || wo_i < 1) mismatch("conv2d output", xv.shape(), kv.shape());
  if (bias.valid() && g.value(bias).size() != cout) mismatch("conv2d bias", g.value(bias).shape(), kv.shape());
  const std::size_t ho = ho_i, wo = wo_i;
  const std::size_t patch = cin * k * k, npix = ho * wo;

  // im2col buffers, one [patch, npix] block per image, kept for backward.
  auto cols = std::make_shared<std::vector<T>>(n * patch * npix, T(0));
  for (std::size_t b = 0; b < n; ++b) {
    T* cb = cols->data() + b * patch * npix;
    const T* xb = xv.data() + b * cin * h * w;
    for (std::size_t c = 0; c < cin; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          T* row = cb + ((c * k + ky) * k + kx) * npix;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const int iy = static_cast<int>(oy) * stride - padding + ky;
            if (iy < 0 || iy >= static_cast<int>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const int ix = static_cast<int>(ox) * stride - padding + kx;
              if (ix < 0 || ix >= static_cast<int>(w)) continue;
              row[oy * wo + ox] = xb[(c * h + iy) * w + ix];
            }
          }
        }
      }
    }
  }
  Tensor<T> out({n, cout, ho, wo});
  auto km = as_mat(kv, cout, patch);
  for (std::size_t b = 0; b < n; ++b) {
    MatMap<T> ob(out.data() + b * cout * npix, cout, npix);
    ConstMatMap<T> cb(cols->data() + b * patch * npix, patch, npix);
    ob.noalias() = km * cb;
    if (bias.valid()) ob.colwise() += as_mat(g.value(bias), cout, 1).col(0);
  }
  std::vector<Var> parents{x, kernel};
  if (bias.valid()) parents.push_back(bias);
  return g.emit(std::move(out), parents,
                [=](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dy) {
                  Tensor<T>* dx = gr.grad_sink(x);
                  Tensor<T>* dk = gr.grad_sink(kernel);
                  Tensor<T>* db = bias.valid() ? gr.grad_sink(bias) : nullptr;
                  auto kmat = as_mat(gr.value(kernel), cout, patch);
                  RowMat<T> dcols;
                  for (std::size_t b = 0; b < n; ++b) {
                    ConstMatMap<T> dyb(dy.data() + b * cout * npix, cout, npix);
                    ConstMatMap<T> cb(cols->data() + b * patch * npix, patch, npix);
                    if (dk) as_mat(*dk, cout, patch).noalias() += dyb * cb.transpose();
                    if (db) as_mat(*db, cout, 1).col(0) += dyb.rowwise().sum();
                    if (!dx) continue;
                    dcols.noalias() = kmat.transpose() * dyb;
                    T* dxb = dx->data() + b * cin * h * w;
                    for (std::size_t c = 0; c < cin; ++c) {
                      for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                          const T* row = dcols.data() + ((c * k + ky) * k + kx) * npix;
                          for (std::size_t oy = 0; oy < ho; ++oy) {
                            const int iy = static_cast<int>(oy) * stride - padding + ky;
                            if (iy < 0 || iy >= static_cast<int>(h)) continue;
                            for (std::size_t ox = 0; ox < wo; ++ox) {
                              const int ix = static_cast<int>(ox) * stride - padding + kx;
                              if (ix < 0 || ix >= static_cast<int>(w)) continue;
                              dxb[(c * h + iy) * w + ix] += row[oy * wo + ox];
                            }
                          }
                        }
                      }
                    }
                  }
                });
}

template <class T>
Var mse_loss(Graph<T>& g, Var pred, Var target) {
  const Tensor<T>& pv = g.value(pred);
  const Tensor<T>& tv = g.value(target);
  if (pv.shape() != tv.shape()) mismatch("mse_loss", pv.shape(), tv.shape());
  const T inv_n = T(1) / static_cast<T>(pv.size());
  const T loss = (as_arr(pv) - as_arr(tv)).square().sum() * inv_n;
  return g.emit(Tensor<T>::scalar(loss), {pred, target}, [pred, target, inv_n](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dy) {
    const T scale_factor = T(2) * inv_n * dy[0];
    const auto diff = as_arr(gr.value(pred)) - as_arr(gr.value(target));
    if (Tensor<T>* dp = gr.grad_sink(pred)) as_arr(*dp) += diff * scale_factor;
    if (Tensor<T>* dt = gr.grad_sink(target)) as_arr(*dt) -= diff * scale_factor;
  });
}

template <class T>
Var sum(Graph<T>& g, Var x) {
  const T total = as_arr(g.value(x)).sum();
  return g.emit(Tensor<T>::scalar(total), {x}, [x](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& dy) {
    if (Tensor<T>* dx = gr.grad_sink(x)) as_arr(*dx) += dy[0];
  });
}

template <class T>
Var mean(Graph<T>& g, Var x) {
  return scale(g, sum(g, x), T(1) / static_cast<T>(g.value(x).size()));
}

#define GBT_INSTANTIATE_OPS(T)                                                   \
  template Var matmul<T>(Graph<T>&, Var, Var);                                   \
  template Var matmul_nt<T>(Graph<T>&, Var, Var);                                \
  template Var linear<T>(Graph<T>&, Var, Var, Var);                              \
  template Var add<T>(Graph<T>&, Var, Var);                                      \
  template Var scale<T>(Graph<T>&, Var, T);                                      \
  template Var square<T>(Graph<T>&, Var);                                        \
  template Var mul_scalar<T>(Graph<T>&, Var, Var);                               \
  template Var softmax_with_bias<T>(Graph<T>&, Var, Var);                        \
  template Var softmax<T>(Graph<T>&, Var);                                       \
  template Var layernorm<T>(Graph<T>&, Var, Var, Var);                           \
  template Var gelu<T>(Graph<T>&, Var);                                          \
  template Var sigmoid<T>(Graph<T>&, Var);                                       \
  template Var relu<T>(Graph<T>&, Var);                                          \
  template Var concat<T>(Graph<T>&, std::span<const Var>, std::size_t);          \
  template Var slice_cols<T>(Graph<T>&, Var, std::size_t, std::size_t);          \
  template Var slice_rows<T>(Graph<T>&, Var, std::size_t, std::size_t);          \
  template Var transpose<T>(Graph<T>&, Var);                                     \
  template Var reshape<T>(Graph<T>&, Var, Shape);                                \
  template Var conv2d<T>(Graph<T>&, Var, Var, Var, int, int);                    \
  template Var mse_loss<T>(Graph<T>&, Var, Var);                                 \
  template Var sum<T>(Graph<T>&, Var);                                           \
  template Var mean<T>(Graph<T>&, Var);

GBT_INSTANTIATE_OPS(float)
GBT_INSTANTIATE_OPS(double)

#undef GBT_INSTANTIATE_OPS

}  // namespace gbt::nn
