#pragma once

// Differentiable primitives. Activations use the (N, C, T, V) layout:
// batch, channel, frame, joint. Broadcasting is limited to a shared rank-2
// right operand in matmul and per-channel vectors; everything else must
// match exactly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>
#include <utility>

#include "sttr/errors.hpp"
#include "sttr/gemm.hpp"
#include "sttr/tensor.hpp"

namespace sttr {

enum class Mode { train, eval };

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <class T>
void require_finite(std::span<const T> values, const char* op) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = Tensor<T>::zeros(a.shape());
  auto y = out.mutable_data();
  auto x0 = a.data();
  auto x1 = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x0[i] + x1[i];
  return detail::record<T>(std::move(out), {&a, &b}, [a, b](const detail::TensorImpl<T>& o) {
    for (const auto* t : {&a, &b}) {
      auto g = detail::sink(*t);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "sub: shape mismatch");
  auto out = Tensor<T>::zeros(a.shape());
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  return detail::record<T>(std::move(out), {&a, &b}, [a, b](const detail::TensorImpl<T>& o) {
    auto ga = detail::sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
    auto gb = detail::sink(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= o.grad[i];
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "mul: shape mismatch");
  auto out = Tensor<T>::zeros(a.shape());
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  return detail::record<T>(std::move(out), {&a, &b}, [a, b](const detail::TensorImpl<T>& o) {
    auto ga = detail::sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * b.data()[i];
    auto gb = detail::sink(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += o.grad[i] * a.data()[i];
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto out = Tensor<T>::zeros(a.shape());
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * factor;
  return detail::record<T>(std::move(out), {&a}, [a, factor](const detail::TensorImpl<T>& o) {
    auto g = detail::sink(a);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  auto out = Tensor<T>::zeros(a.shape());
  auto y = out.mutable_data();
  // Written so NaN passes through instead of clamping to zero.
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] < T(0) ? T(0) : a.data()[i];
  return detail::record<T>(std::move(out), {&a}, [a](const detail::TensorImpl<T>& o) {
    auto g = detail::sink(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (a.data()[i] > T(0)) g[i] += o.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  return detail::record<T>(Tensor<T>::scalar(total), {&a}, [a](const detail::TensorImpl<T>& o) {
    auto g = detail::sink(a);
    for (auto& v : g) v += o.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  detail::require(a.numel() > 0, "mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Mean over one axis; the axis is removed from the result.
template <class T>
Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis) {
  detail::require(axis < a.dim(), "mean_axis: axis out of range");
  const auto& s = a.shape();
  const std::size_t extent = s[axis];
  detail::require(extent > 0, "mean_axis: empty axis");
  const std::size_t outer = numel_of(Shape(s.begin(), s.begin() + axis));
  const std::size_t inner = numel_of(Shape(s.begin() + axis + 1, s.end()));
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + axis);
  auto out = Tensor<T>::zeros(out_shape);
  auto y = out.mutable_data();
  const T inv = T(1) / static_cast<T>(extent);
  auto x = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t e = 0; e < extent; ++e) {
      const T* src = x.data() + (o * extent + e) * inner;
      T* dst = y.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  for (auto& v : y) v *= inv;
  return detail::record<T>(std::move(out), {&a},
                           [a, outer, extent, inner, inv](const detail::TensorImpl<T>& o) {
                             auto g = detail::sink(a);
                             for (std::size_t q = 0; q < outer; ++q)
                               for (std::size_t e = 0; e < extent; ++e)
                                 for (std::size_t i = 0; i < inner; ++i)
                                   g[(q * extent + e) * inner + i] += o.grad[q * inner + i] * inv;
                           });
}

// ---------------------------------------------------------------------------
// Layout

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::require(numel_of(shape) == a.numel(),
                  "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  return detail::record<T>(std::move(out), {&a}, [a](const detail::TensorImpl<T>& o) {
    auto g = detail::sink(a);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

namespace detail {

/// For each output position, the flat input offset under `perm`.
inline std::vector<std::size_t> permute_offsets(const Shape& in, const std::vector<std::size_t>& perm) {
  const std::size_t rank = in.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out[i] = in[perm[i]];
    stride[i] = in_stride[perm[i]];
  }
  const std::size_t n = numel_of(in);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t k = 0; k < n; ++k) {
    offsets[k] = src;
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < out[d]) {
        src += stride[d];
        break;
      }
      src -= stride[d] * (out[d] - 1);
      counter[d] = 0;
    }
  }
  return offsets;
}

}  // namespace detail

/// Output axis i is input axis perm[i].
template <class T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
  detail::require(perm.size() == a.dim(), "permute: rank mismatch");
  std::vector<bool> seen(perm.size(), false);
  for (auto p : perm) {
    detail::require(p < perm.size() && !seen[p], "permute: not a permutation");
    seen[p] = true;
  }
  Shape out_shape(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = a.shape()[perm[i]];
  auto offsets = detail::permute_offsets(a.shape(), perm);
  auto out = Tensor<T>::zeros(out_shape);
  auto y = out.mutable_data();
  auto x = a.data();
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = x[offsets[k]];
  return detail::record<T>(std::move(out), {&a},
                           [a, offsets = std::move(offsets)](const detail::TensorImpl<T>& o) {
                             auto g = detail::sink(a);
                             for (std::size_t k = 0; k < offsets.size(); ++k) g[offsets[k]] += o.grad[k];
                           });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  detail::require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts.front().shape();
  detail::require(axis < first.size(), "concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    detail::require(p.dim() == first.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis) {
        detail::require(p.shape()[d] == first[d], "concat: mismatched shapes " +
                                                      shape_str(p.shape()) + " vs " + shape_str(first));
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  const std::size_t outer = numel_of(Shape(first.begin(), first.begin() + axis));
  const std::size_t inner = numel_of(Shape(first.begin() + axis + 1, first.end()));
  const std::size_t out_row = out_shape[axis] * inner;
  auto out = Tensor<T>::zeros(out_shape);
  auto y = out.mutable_data();
  std::vector<std::size_t> starts;
  std::size_t start = 0;
  for (const auto& p : parts) {
    starts.push_back(start);
    const std::size_t row = p.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * row, row, y.data() + o * out_row + start);
    start += row;
  }
  return detail::record_many<T>(
      std::move(out), parts, [parts, starts, outer, inner, out_row, axis](const detail::TensorImpl<T>& o) {
        for (std::size_t k = 0; k < parts.size(); ++k) {
          auto g = detail::sink(parts[k]);
          if (g.empty()) continue;
          const std::size_t row = parts[k].shape()[axis] * inner;
          for (std::size_t q = 0; q < outer; ++q)
            for (std::size_t i = 0; i < row; ++i) g[q * row + i] += o.grad[q * out_row + starts[k] + i];
        }
      });
}

/// Keeps frames 0, stride, 2*stride, ... of an (N, C, T, V) tensor.
template <class T>
Tensor<T> subsample_time(const Tensor<T>& x, std::size_t stride) {
  detail::require(x.dim() == 4, "subsample_time: expected (N,C,T,V)");
  detail::require(stride >= 1, "subsample_time: stride must be >= 1");
  if (stride == 1) return x;
  const auto N = x.size(0), C = x.size(1), T_in = x.size(2), V = x.size(3);
  const std::size_t T_out = (T_in + stride - 1) / stride;
  auto out = Tensor<T>::zeros({N, C, T_out, V});
  auto y = out.mutable_data();
  for (std::size_t r = 0; r < N * C; ++r)
    for (std::size_t t = 0; t < T_out; ++t)
      std::copy_n(x.data().data() + (r * T_in + t * stride) * V, V, y.data() + (r * T_out + t) * V);
  return detail::record<T>(std::move(out), {&x},
                           [x, N, C, T_in, T_out, V, stride](const detail::TensorImpl<T>& o) {
                             auto g = detail::sink(x);
                             for (std::size_t r = 0; r < N * C; ++r)
                               for (std::size_t t = 0; t < T_out; ++t)
                                 for (std::size_t v = 0; v < V; ++v)
                                   g[(r * T_in + t * stride) * V + v] += o.grad[(r * T_out + t) * V + v];
                           });
}

// ---------------------------------------------------------------------------
// Products

/// Batched product over the last two axes. `b` either carries the same
/// leading axes as `a` or is rank 2 and shared across the batch.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.dim() >= 2 && b.dim() >= 2, "matmul: operands need rank >= 2");
  const std::size_t m = a.shape()[a.dim() - 2];
  const std::size_t k = a.shape()[a.dim() - 1];
  const std::size_t kb = b.shape()[b.dim() - 2];
  const std::size_t n = b.shape()[b.dim() - 1];
  detail::require(k == kb, "matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                               shape_str(b.shape()));
  const bool shared_b = b.dim() == 2;
  if (!shared_b) {
    detail::require(a.dim() == b.dim() &&
                        std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()),
                    "matmul: batch axes differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  auto out = Tensor<T>::zeros(out_shape);
  {
    const T* A = a.data().data();
    const T* B = b.data().data();
    T* Y = out.mutable_data().data();
    for (std::size_t p = 0; p < batch; ++p) {
      const T* Bp = shared_b ? B : B + p * k * n;
      detail::gemm_acc(m, n, k, detail::row_major(A + p * m * k, k), detail::row_major(Bp, n), Y + p * m * n, n);
    }
  }
  return detail::record<T>(
      std::move(out), {&a, &b}, [a, b, batch, m, k, n, shared_b](const detail::TensorImpl<T>& o) {
        const T* G = o.grad.data();
        auto ga = detail::sink(a);
        auto gb = detail::sink(b);
        const T* A = a.data().data();
        const T* B = b.data().data();
        for (std::size_t p = 0; p < batch; ++p) {
          const T* Gp = G + p * m * n;
          const T* Bp = shared_b ? B : B + p * k * n;
          // dA = dY B^T, dB = A^T dY
          if (!ga.empty())
            detail::gemm_acc(m, k, n, detail::row_major(Gp, n), detail::row_major(Bp, n).t(), ga.data() + p * m * k, k);
          if (!gb.empty()) {
            T* gbp = shared_b ? gb.data() : gb.data() + p * k * n;
            detail::gemm_acc(k, n, m, detail::row_major(A + p * m * k, k).t(), detail::row_major(Gp, n), gbp, n);
          }
        }
      });
}

/// y = x W (+ b) over the last axis of x; leading axes are batch axes.
template <class T>
Tensor<T> linear_map(const Tensor<T>& x, const Tensor<T>& W, const std::optional<Tensor<T>>& b = std::nullopt) {
  detail::require(x.dim() >= 1 && W.dim() == 2, "linear_map: expected x[...,C_in] and W[C_in,D]");
  const std::size_t c_in = x.shape().back();
  detail::require(W.size(0) == c_in, "linear_map: inner extents differ " + shape_str(x.shape()) +
                                         " x " + shape_str(W.shape()));
  const std::size_t d = W.size(1);
  if (b) detail::require(b->dim() == 1 && b->size(0) == d, "linear_map: bias extent mismatch");
  const std::size_t rows = x.numel() / std::max<std::size_t>(c_in, 1);
  auto x2 = reshape(x, {rows, c_in});
  auto y = matmul(x2, W);
  if (b) {
    auto out = Tensor<T>::zeros({rows, d});
    auto yd = out.mutable_data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) yd[r * d + j] = y.data()[r * d + j] + b->data()[j];
    Tensor<T> bias = *b;
    y = detail::record<T>(std::move(out), {&y, &bias}, [y, bias, rows, d](const detail::TensorImpl<T>& o) {
      auto gy = detail::sink(y);
      for (std::size_t i = 0; i < gy.size(); ++i) gy[i] += o.grad[i];
      auto gb = detail::sink(bias);
      if (!gb.empty())
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += o.grad[r * d + j];
    });
  }
  Shape out_shape = x.shape();
  out_shape.back() = d;
  return reshape(y, out_shape);
}

/// Adds b[c] to every element of channel c of an (N, C, ...) tensor.
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b) {
  detail::require(x.dim() >= 2 && b.dim() == 1 && b.size(0) == x.size(1),
                  "add_channel_bias: bias extent must equal channel extent");
  const std::size_t N = x.size(0), C = x.size(1), inner = x.numel() / std::max<std::size_t>(N * C, 1);
  auto out = Tensor<T>::zeros(x.shape());
  auto y = out.mutable_data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * inner;
      const T bc = b.data()[c];
      for (std::size_t i = 0; i < inner; ++i) y[base + i] = x.data()[base + i] + bc;
    }
  return detail::record<T>(std::move(out), {&x, &b}, [x, b, N, C, inner](const detail::TensorImpl<T>& o) {
    auto gx = detail::sink(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
    auto gb = detail::sink(b);
    if (!gb.empty())
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          T acc = T(0);
          for (std::size_t i = 0; i < inner; ++i) acc += o.grad[(n * C + c) * inner + i];
          gb[c] += acc;
        }
  });
}

/// Pointwise channel map on (N, C_in, T, V): y[n,o,t,v] = sum_i W[i,o] x[n,i,t*stride,v] (+ b[o]).
template <class T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& W, const std::optional<Tensor<T>>& b = std::nullopt,
                  std::size_t stride = 1) {
  detail::require(x.dim() == 4, "conv1x1: expected (N,C,T,V), got " + shape_str(x.shape()));
  detail::require(W.dim() == 2 && W.size(0) == x.size(1),
                  "conv1x1: weight " + shape_str(W.shape()) + " does not match input " + shape_str(x.shape()));
  auto xs = subsample_time(x, stride);
  const std::size_t N = xs.size(0), Cin = xs.size(1), S = xs.size(2) * xs.size(3), Cout = W.size(1);
  auto out = Tensor<T>::zeros({N, Cout, xs.size(2), xs.size(3)});
  {
    T* Y = out.mutable_data().data();
    const T* X = xs.data().data();
    // Y_n = W^T X_n
    const auto Wt = detail::row_major(W.data().data(), Cout).t();
    for (std::size_t n = 0; n < N; ++n)
      detail::gemm_acc(Cout, S, Cin, Wt, detail::row_major(X + n * Cin * S, S), Y + n * Cout * S, S);
  }
  auto y = detail::record<T>(std::move(out), {&xs, &W}, [xs, W, N, Cin, Cout, S](const detail::TensorImpl<T>& o) {
    const T* G = o.grad.data();
    auto gx = detail::sink(xs);
    auto gw = detail::sink(W);
    const T* X = xs.data().data();
    const auto Wm = detail::row_major(W.data().data(), Cout);
    for (std::size_t n = 0; n < N; ++n) {
      const auto Gn = detail::row_major(G + n * Cout * S, S);
      if (!gx.empty()) detail::gemm_acc(Cin, S, Cout, Wm, Gn, gx.data() + n * Cin * S, S);
      if (!gw.empty()) detail::gemm_acc(Cin, Cout, S, detail::row_major(X + n * Cin * S, S), Gn.t(), gw.data(), Cout);
    }
  });
  return b ? add_channel_bias(y, *b) : y;
}

/// 1 x K convolution along time on (N, C_in, T, V) with zero same-padding
/// (K-1)/2; kernel is (C_out, C_in, K). Joints never mix.
template <class T>
Tensor<T> temporal_conv(const Tensor<T>& x, const Tensor<T>& kernel, const std::optional<Tensor<T>>& b,
                        std::size_t stride) {
  detail::require(x.dim() == 4, "temporal_conv: expected (N,C,T,V), got " + shape_str(x.shape()));
  detail::require(kernel.dim() == 3 && kernel.size(1) == x.size(1),
                  "temporal_conv: kernel " + shape_str(kernel.shape()) + " does not match input " +
                      shape_str(x.shape()));
  const std::size_t K = kernel.size(2);
  detail::require(K % 2 == 1, "temporal_conv: kernel size must be odd");
  detail::require(stride == 1 || stride == 2, "temporal_conv: stride must be 1 or 2");
  const std::size_t N = x.size(0), Cin = x.size(1), Tin = x.size(2), V = x.size(3), Cout = kernel.size(0);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);
  const std::size_t Tout = (Tin + 2 * static_cast<std::size_t>(pad) - K) / stride + 1;
  auto out = Tensor<T>::zeros({N, Cout, Tout, V});
  const std::size_t rows = Cin * K, cols = Tout * V;
  // col[(i, k), (t, v)] = x[n, i, t * stride + k - pad, v], zero in the padding.
  auto im2col = [=](const T* xn, T* col) {
    for (std::size_t i = 0; i < Cin; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        T* row = col + (i * K + k) * cols;
        for (std::size_t t = 0; t < Tout; ++t) {
          const auto src = static_cast<std::ptrdiff_t>(t * stride + k) - pad;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(Tin)) {
            std::fill(row + t * V, row + (t + 1) * V, T(0));
          } else {
            std::copy_n(xn + (i * Tin + static_cast<std::size_t>(src)) * V, V, row + t * V);
          }
        }
      }
  };
  {
    std::vector<T> col(rows * cols);
    T* Y = out.mutable_data().data();
    const T* X = x.data().data();
    const auto Km = detail::row_major(kernel.data().data(), rows);
    for (std::size_t n = 0; n < N; ++n) {
      im2col(X + n * Cin * Tin * V, col.data());
      detail::gemm_acc(Cout, cols, rows, Km, detail::row_major(col.data(), cols), Y + n * Cout * cols, cols);
    }
  }
  auto y = detail::record<T>(
      std::move(out), {&x, &kernel}, [=](const detail::TensorImpl<T>& o) {
        const T* G = o.grad.data();
        auto gx = detail::sink(x);
        auto gk = detail::sink(kernel);
        const T* X = x.data().data();
        const auto Km = detail::row_major(kernel.data().data(), rows);
        std::vector<T> col(rows * cols);
        for (std::size_t n = 0; n < N; ++n) {
          const auto Gn = detail::row_major(G + n * Cout * cols, cols);
          if (!gk.empty()) {
            im2col(X + n * Cin * Tin * V, col.data());
            detail::gemm_acc(Cout, rows, cols, Gn, detail::row_major(col.data(), cols).t(), gk.data(), rows);
          }
          if (gx.empty()) continue;
          std::fill(col.begin(), col.end(), T(0));
          detail::gemm_acc(rows, cols, Cout, Km.t(), Gn, col.data(), cols);
          // col2im: scatter the column gradients back onto their source frames.
          T* gxn = gx.data() + n * Cin * Tin * V;
          for (std::size_t i = 0; i < Cin; ++i)
            for (std::size_t k = 0; k < K; ++k) {
              const T* row = col.data() + (i * K + k) * cols;
              for (std::size_t t = 0; t < Tout; ++t) {
                const auto src = static_cast<std::ptrdiff_t>(t * stride + k) - pad;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(Tin)) continue;
                T* dst = gxn + (i * Tin + static_cast<std::size_t>(src)) * V;
                for (std::size_t v = 0; v < V; ++v) dst[v] += row[t * V + v];
              }
            }
        }
      });
  return b ? add_channel_bias(y, *b) : y;
}

// ---------------------------------------------------------------------------
// Normalization

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  detail::require(axis < x.dim(), "softmax: axis out of range");
  const auto& s = x.shape();
  const std::size_t extent = s[axis];
  detail::require(extent >= 1, "softmax: empty axis");
  detail::require_finite(x.data(), "softmax");
  const std::size_t outer = numel_of(Shape(s.begin(), s.begin() + axis));
  const std::size_t inner = numel_of(Shape(s.begin() + axis + 1, s.end()));
  auto out = Tensor<T>::zeros(s);
  auto y = out.mutable_data();
  auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * extent * inner + i;
      T peak = xd[base];
      for (std::size_t e = 1; e < extent; ++e) peak = std::max(peak, xd[base + e * inner]);
      T total = T(0);
      for (std::size_t e = 0; e < extent; ++e) {
        const T v = std::exp(xd[base + e * inner] - peak);
        y[base + e * inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < extent; ++e) y[base + e * inner] /= total;
    }
  return detail::record<T>(std::move(out), {&x}, [x, outer, extent, inner](const detail::TensorImpl<T>& o) {
    auto g = detail::sink(x);
    for (std::size_t q = 0; q < outer; ++q)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = q * extent * inner + i;
        T dot = T(0);
        for (std::size_t e = 0; e < extent; ++e) dot += o.grad[base + e * inner] * o.data[base + e * inner];
        for (std::size_t e = 0; e < extent; ++e) {
          const std::size_t k = base + e * inner;
          g[k] += o.data[k] * (o.grad[k] - dot);
        }
      }
  });
}

/// Running statistics for batch_norm; momentum 0.1 and eps 1e-5 by default.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Per-channel normalization of an (N, C, ...) tensor over every axis but 1.
/// Train mode uses batch statistics and updates `state`; eval mode uses the
/// running statistics.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState& state,
                     Mode mode) {
  detail::require(x.dim() >= 2, "batch_norm: expected (N,C,...)");
  const std::size_t N = x.size(0), C = x.size(1);
  detail::require(gamma.numel() == C && beta.numel() == C, "batch_norm: gamma/beta extent must equal channels");
  if (!(state.eps > 0.0)) throw ShapeError("batch_norm: eps must be positive");
  detail::require(state.running_mean.size() == C && state.running_var.size() == C,
                  "batch_norm: running statistics not populated for " + std::to_string(C) + " channels");
  const std::size_t inner = x.numel() / std::max<std::size_t>(N * C, 1);
  const std::size_t count = N * inner;
  detail::require(count > 0, "batch_norm: empty input");
  std::vector<T> mu(C), inv_std(C);
  const T* X = x.data().data();
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = X + (n * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = X + (n * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const double var = ss / static_cast<double>(count);
      mu[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + state.eps));
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = static_cast<T>(state.running_mean[c]);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(state.running_var[c] + state.eps));
    }
  }
  auto out = Tensor<T>::zeros(x.shape());
  std::vector<T> xhat(x.numel());
  {
    T* Y = out.mutable_data().data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (n * C + c) * inner;
        const T g = gamma.data()[c], bt = beta.data()[c];
        for (std::size_t i = 0; i < inner; ++i) {
          const T h = (X[base + i] - mu[c]) * inv_std[c];
          xhat[base + i] = h;
          Y[base + i] = g * h + bt;
        }
      }
  }
  const bool batch_stats = mode == Mode::train;
  return detail::record<T>(
      std::move(out), {&x, &gamma, &beta},
      [x, gamma, beta, N, C, inner, count, batch_stats, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](const detail::TensorImpl<T>& o) {
        auto gx = detail::sink(x);
        auto gg = detail::sink(gamma);
        auto gb = detail::sink(beta);
        const T* G = o.grad.data();
        for (std::size_t c = 0; c < C; ++c) {
          T sum_g = T(0), sum_gh = T(0);
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = (n * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_g += G[base + i];
              sum_gh += G[base + i] * xhat[base + i];
            }
          }
          if (!gg.empty()) gg[c] += sum_gh;
          if (!gb.empty()) gb[c] += sum_g;
          if (gx.empty()) continue;
          const T scale_c = gamma.data()[c] * inv_std[c];
          const T m = static_cast<T>(count);
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = (n * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              if (batch_stats) {
                gx[base + i] += scale_c * (G[base + i] - sum_g / m - xhat[base + i] * sum_gh / m);
              } else {
                gx[base + i] += scale_c * G[base + i];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Loss

/// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  detail::require(logits.dim() == 2, "cross_entropy: expected logits (N,K)");
  const std::size_t N = logits.size(0), K = logits.size(1);
  detail::require(labels.size() == N, "cross_entropy: label count differs from batch");
  detail::require(N > 0 && K > 0, "cross_entropy: empty logits");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= K) {
      throw ShapeError("cross_entropy: label " + std::to_string(l) + " outside [0," + std::to_string(K) + ")");
    }
  }
  detail::require_finite(logits.data(), "cross_entropy");
  std::vector<T> probs(N * K);
  double total = 0.0;
  const T* L = logits.data().data();
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = L + n * K;
    const T peak = *std::max_element(row, row + K);
    T s = T(0);
    for (std::size_t k = 0; k < K; ++k) {
      probs[n * K + k] = std::exp(row[k] - peak);
      s += probs[n * K + k];
    }
    for (std::size_t k = 0; k < K; ++k) probs[n * K + k] /= s;
    total += static_cast<double>(std::log(s) + peak - row[labels[n]]);
  }
  const T loss = static_cast<T>(total / static_cast<double>(N));
  if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
  std::vector<int> lab(labels.begin(), labels.end());
  return detail::record<T>(Tensor<T>::scalar(loss), {&logits},
                           [logits, N, K, probs = std::move(probs), lab = std::move(lab)](
                               const detail::TensorImpl<T>& o) {
                             auto g = detail::sink(logits);
                             const T s = o.grad[0] / static_cast<T>(N);
                             for (std::size_t n = 0; n < N; ++n)
                               for (std::size_t k = 0; k < K; ++k) {
                                 const T target = static_cast<int>(k) == lab[n] ? T(1) : T(0);
                                 g[n * K + k] += s * (probs[n * K + k] - target);
                               }
                           });
}

}  // namespace sttr
