#pragma once

// Spatial (within a frame, across joints) and temporal (within a joint,
// across frames) multi-head self-attention on (N, C, T, V) activations.
//
// For every independent sequence (a frame for SSA, a joint trajectory for
// TSA) and every head h:
//
//   q, k, v   = shared 1x1 maps of the node features, split into H heads
//   alpha_ij  = q_i . k_j
//   z_i       = sum_j softmax_j(alpha_ij / sqrt(d_k / H)) v_j
//
// The heads are concatenated along channels and mixed by W_o. There are no
// positional encodings, so SSA is joint-permutation equivariant and TSA is
// frame-permutation equivariant.

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "sttr/errors.hpp"
#include "sttr/init.hpp"
#include "sttr/ops.hpp"
#include "sttr/random.hpp"
#include "sttr/tensor.hpp"

namespace sttr {

enum class AttentionAxis { spatial, temporal };

template <class T>
struct AttentionParams {
  Tensor<T> w_q, b_q;  // (C_in, d_k), (d_k)
  Tensor<T> w_k, b_k;  // (C_in, d_k), (d_k)
  Tensor<T> w_v, b_v;  // (C_in, d_v), (d_v)
  Tensor<T> w_o, b_o;  // (d_v, C_out), (C_out)
  std::size_t heads = 1;
  double drop_rate = 0.0;

  std::size_t in_channels() const { return w_q.size(0); }
  std::size_t out_channels() const { return w_o.size(1); }
  std::size_t key_width() const { return w_q.size(1); }
  std::size_t value_width() const { return w_v.size(1); }

  std::vector<Tensor<T>> parameters() const { return {w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o}; }

  void validate() const {
    if (heads < 1) throw ShapeError("attention: need at least one head");
    if (w_k.size(1) != key_width()) throw ShapeError("attention: query and key widths differ");
    if (key_width() % heads || value_width() % heads)
      throw ShapeError("attention: key/value widths must divide evenly across heads");
    if (w_k.size(0) != in_channels() || w_v.size(0) != in_channels() || w_o.size(0) != value_width())
      throw ShapeError("attention: inconsistent weight shapes");
    if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw ShapeError("attention: drop rate must lie in [0, 1)");
  }

  static AttentionParams init(std::size_t c_in, std::size_t c_out, std::size_t heads, std::size_t key_width,
                              std::size_t value_width, Rng& rng, double drop_rate = 0.0) {
    AttentionParams p;
    p.w_q = uniform_fan_in<T>({c_in, key_width}, c_in, rng);
    p.b_q = zeros_param<T>({key_width});
    p.w_k = uniform_fan_in<T>({c_in, key_width}, c_in, rng);
    p.b_k = zeros_param<T>({key_width});
    p.w_v = uniform_fan_in<T>({c_in, value_width}, c_in, rng);
    p.b_v = zeros_param<T>({value_width});
    p.w_o = uniform_fan_in<T>({value_width, c_out}, value_width, rng);
    p.b_o = zeros_param<T>({c_out});
    p.heads = heads;
    p.drop_rate = drop_rate;
    p.validate();
    return p;
  }
};

/// Key width for a module: a quarter of its output channels.
inline std::size_t attention_key_width(std::size_t c_out) { return std::max<std::size_t>(1, c_out / 4); }

/// DropAttention on softmaxed scores (last axis = attended positions). In
/// train mode each entry is zeroed with probability `rate` and every row is
/// renormalized; a row that loses all its mass keeps its original values.
template <class T>
Tensor<T> drop_attention(const Tensor<T>& scores, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ShapeError("drop_attention: rate must lie in [0, 1)");
  if (mode == Mode::eval || rate == 0.0) return scores;
  const std::size_t width = scores.shape().back();
  const std::size_t rows = scores.numel() / std::max<std::size_t>(width, 1);
  std::vector<T> mask(scores.numel());
  std::vector<T> denom(rows);
  auto out = Tensor<T>::zeros(scores.shape());
  auto y = out.mutable_data();
  auto p = scores.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T total = T(0);
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t k = r * width + j;
      mask[k] = rng.uniform() >= rate ? T(1) : T(0);
      total += p[k] * mask[k];
    }
    if (!(total > T(0))) {
      for (std::size_t j = 0; j < width; ++j) mask[r * width + j] = T(1);
      denom[r] = T(0);  // identity row
      for (std::size_t j = 0; j < width; ++j) y[r * width + j] = p[r * width + j];
      continue;
    }
    denom[r] = total;
    for (std::size_t j = 0; j < width; ++j) y[r * width + j] = p[r * width + j] * mask[r * width + j] / total;
  }
  return detail::record<T>(std::move(out), {&scores},
                           [scores, rows, width, mask = std::move(mask), denom = std::move(denom)](
                               const detail::TensorImpl<T>& o) {
                             auto g = detail::sink(scores);
                             for (std::size_t r = 0; r < rows; ++r) {
                               const std::size_t base = r * width;
                               if (denom[r] == T(0)) {
                                 for (std::size_t j = 0; j < width; ++j) g[base + j] += o.grad[base + j];
                                 continue;
                               }
                               T dot = T(0);
                               for (std::size_t j = 0; j < width; ++j) dot += o.grad[base + j] * o.data[base + j];
                               for (std::size_t j = 0; j < width; ++j)
                                 g[base + j] += mask[base + j] / denom[r] * (o.grad[base + j] - dot);
                             }
                           });
}

/// concat(z_1, ..., z_H) along channels, then W_o (+ b_o).
template <class T>
Tensor<T> multi_head_combine(const std::vector<Tensor<T>>& heads, const Tensor<T>& w_o,
                             const std::optional<Tensor<T>>& b_o = std::nullopt) {
  if (heads.empty()) throw ShapeError("multi_head_combine: no heads");
  for (const auto& h : heads)
    if (h.shape() != heads.front().shape()) throw ShapeError("multi_head_combine: mismatched head shapes");
  return conv1x1(concat(heads, 1), w_o, b_o);
}

namespace detail {

/// (N, H*d, T, V) -> per-sequence layout (N, H, S, L, d) where S indexes the
/// independent sequences and L the attended positions.
template <class T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads, AttentionAxis axis) {
  const std::size_t N = x.size(0), C = x.size(1), Tn = x.size(2), V = x.size(3);
  auto h = reshape(x, {N, heads, C / heads, Tn, V});
  return axis == AttentionAxis::spatial ? permute(h, {0, 1, 3, 4, 2}) : permute(h, {0, 1, 4, 3, 2});
}

}  // namespace detail

/// Self-attention along `axis`. When `scores_out` is set it receives the
/// attention weights actually applied, shaped (N, H, T, V, V) for spatial and
/// (N, H, V, T, T) for temporal.
template <class T>
Tensor<T> self_attention(const Tensor<T>& x, const AttentionParams<T>& p, AttentionAxis axis, Mode mode = Mode::eval,
                         Rng* rng = nullptr, Tensor<T>* scores_out = nullptr) {
  if (x.dim() != 4) throw ShapeError("self_attention: expected (N,C,T,V), got " + shape_str(x.shape()));
  p.validate();
  if (x.size(1) != p.in_channels()) throw ShapeError("self_attention: input channels differ from parameters");
  if (axis == AttentionAxis::spatial && x.size(3) < 1) throw ShapeError("ssa_forward: need at least one joint");
  if (axis == AttentionAxis::temporal && x.size(2) < 1) throw ShapeError("tsa_forward: need at least one frame");
  const std::size_t N = x.size(0), Tn = x.size(2), V = x.size(3), H = p.heads;
  const std::size_t head_key = p.key_width() / H;
  const std::size_t head_value = p.value_width() / H;

  auto q = detail::split_heads(conv1x1(x, p.w_q, std::optional<Tensor<T>>(p.b_q)), H, axis);
  auto k = detail::split_heads(conv1x1(x, p.w_k, std::optional<Tensor<T>>(p.b_k)), H, axis);
  auto v = detail::split_heads(conv1x1(x, p.w_v, std::optional<Tensor<T>>(p.b_v)), H, axis);

  auto logits = scale(matmul(q, permute(k, {0, 1, 2, 4, 3})), T(1) / std::sqrt(static_cast<T>(head_key)));
  auto alpha = softmax(logits, 4);
  if (mode == Mode::train && p.drop_rate > 0.0) {
    if (!rng) throw ShapeError("self_attention: train-mode DropAttention needs an RNG");
    alpha = drop_attention(alpha, p.drop_rate, mode, *rng);
  }
  if (scores_out) *scores_out = alpha;
  auto z = matmul(alpha, v);  // (N, H, S, L, d_v/H)
  auto heads_first = axis == AttentionAxis::spatial ? permute(z, {0, 1, 4, 2, 3}) : permute(z, {0, 1, 4, 3, 2});
  auto merged = reshape(heads_first, {N, H * head_value, Tn, V});
  return conv1x1(merged, p.w_o, std::optional<Tensor<T>>(p.b_o));
}

template <class T>
Tensor<T> ssa_forward(const Tensor<T>& x, const AttentionParams<T>& p, Mode mode = Mode::eval, Rng* rng = nullptr,
                      Tensor<T>* scores_out = nullptr) {
  return self_attention(x, p, AttentionAxis::spatial, mode, rng, scores_out);
}

template <class T>
Tensor<T> tsa_forward(const Tensor<T>& x, const AttentionParams<T>& p, Mode mode = Mode::eval, Rng* rng = nullptr,
                      Tensor<T>* scores_out = nullptr) {
  return self_attention(x, p, AttentionAxis::temporal, mode, rng, scores_out);
}

}  // namespace sttr
