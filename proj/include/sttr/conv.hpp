#pragma once

// Graph convolution over joints and 1 x K convolution over time.

#include <cstddef>
#include <optional>
#include <vector>

#include "sttr/errors.hpp"
#include "sttr/init.hpp"
#include "sttr/ops.hpp"
#include "sttr/skeleton.hpp"
#include "sttr/tensor.hpp"

namespace sttr {

template <class T>
struct GcnParams {
  std::vector<Tensor<T>> weights;          // P x (C_in, C_out)
  std::vector<Tensor<T>> edge_importance;  // P x (V, V), initialised to 1
  Tensor<T> bias;                          // (C_out)

  std::vector<Tensor<T>> parameters() const {
    auto out = weights;
    out.insert(out.end(), edge_importance.begin(), edge_importance.end());
    out.push_back(bias);
    return out;
  }

  static GcnParams init(std::size_t c_in, std::size_t c_out, std::size_t joints, std::size_t partitions, Rng& rng) {
    GcnParams p;
    for (std::size_t k = 0; k < partitions; ++k) {
      p.weights.push_back(uniform_fan_in<T>({c_in, c_out}, c_in * partitions, rng));
      p.edge_importance.push_back(ones_param<T>({joints, joints}));
    }
    p.bias = zeros_param<T>({c_out});
    return p;
  }
};

template <class T>
struct TcnParams {
  Tensor<T> kernel;  // (C_out, C_in, K_t)
  Tensor<T> bias;    // (C_out)
  std::size_t stride = 1;

  std::vector<Tensor<T>> parameters() const { return {kernel, bias}; }

  static TcnParams init(std::size_t c_in, std::size_t c_out, std::size_t kernel_size, std::size_t stride, Rng& rng) {
    if (kernel_size % 2 == 0) throw ShapeError("TcnParams: kernel size must be odd");
    TcnParams p;
    p.kernel = uniform_fan_in<T>({c_out, c_in, kernel_size}, c_in * kernel_size, rng);
    p.bias = zeros_param<T>({c_out});
    p.stride = stride;
    return p;
  }
};

/// The graph's partition matrices as constant tensors.
template <class T>
std::vector<Tensor<T>> adjacency_tensors(const SkeletonGraph& graph) {
  std::vector<Tensor<T>> out;
  for (const auto& a : graph.adjacency) {
    std::vector<T> values(a.begin(), a.end());
    out.emplace_back(Shape{graph.num_joints, graph.num_joints}, std::move(values));
  }
  return out;
}

/// y[n,:,t,w] = bias + sum_p sum_v (x W_p)[n,:,t,v] (A_p * M_p)[v,w]
template <class T>
Tensor<T> gcn_forward(const Tensor<T>& x, const std::vector<Tensor<T>>& adjacency, const GcnParams<T>& p) {
  if (x.dim() != 4) throw ShapeError("gcn_forward: expected (N,C,T,V), got " + shape_str(x.shape()));
  if (adjacency.size() != p.weights.size() || p.edge_importance.size() != p.weights.size())
    throw ShapeError("gcn_forward: partition count mismatch between graph and parameters");
  if (adjacency.empty()) throw ShapeError("gcn_forward: no partitions");
  const std::size_t V = x.size(3);
  const std::size_t c_in = x.size(1);
  const std::size_t c_out = p.weights.front().size(1);
  Tensor<T> y;
  for (std::size_t k = 0; k < p.weights.size(); ++k) {
    if (adjacency[k].shape() != Shape{V, V}) throw ShapeError("gcn_forward: graph joint count differs from input");
    auto a = mul(adjacency[k], p.edge_importance[k]);
    // Aggregate on whichever side has fewer channels.
    auto term = c_in <= c_out ? conv1x1(matmul(x, a), p.weights[k]) : matmul(conv1x1(x, p.weights[k]), a);
    y = y.defined() ? add(y, term) : term;
  }
  return add_channel_bias(y, p.bias);
}

template <class T>
Tensor<T> gcn_forward(const Tensor<T>& x, const SkeletonGraph& graph, const GcnParams<T>& p) {
  if (x.dim() == 4 && graph.num_joints != x.size(3))
    throw ShapeError("gcn_forward: graph has " + std::to_string(graph.num_joints) + " joints, input has " +
                     std::to_string(x.size(3)));
  return gcn_forward(x, adjacency_tensors<T>(graph), p);
}

template <class T>
Tensor<T> tcn_forward(const Tensor<T>& x, const TcnParams<T>& p) {
  return temporal_conv(x, p.kernel, std::optional<Tensor<T>>(p.bias), p.stride);
}

}  // namespace sttr
