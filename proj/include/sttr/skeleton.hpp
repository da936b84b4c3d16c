#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "sttr/errors.hpp"

namespace sttr {

using Edge = std::pair<std::size_t, std::size_t>;

inline constexpr std::size_t kPartitions = 3;

enum class Partition : int { root = 0, centripetal = 1, centrifugal = 2 };

/// Joint graph with its three spatial partitions. `adjacency[p]` is a dense
/// V x V row-major matrix; the three sum to D^-1/2 (A + I) D^-1/2.
struct SkeletonGraph {
  std::size_t num_joints = 0;
  std::vector<Edge> edges;
  std::size_t center_joint = 0;
  std::vector<std::size_t> parent;  // parent[center] == center
  std::array<std::vector<double>, kPartitions> adjacency;

  double a(std::size_t p, std::size_t i, std::size_t j) const { return adjacency[p][i * num_joints + j]; }
};

/// Hop distance from `source` over `edges`; unreachable joints get SIZE_MAX.
inline std::vector<std::size_t> hop_distance(std::size_t num_joints, const std::vector<Edge>& edges,
                                             std::size_t source) {
  std::vector<std::vector<std::size_t>> nbr(num_joints);
  for (auto [i, j] : edges) {
    nbr[i].push_back(j);
    nbr[j].push_back(i);
  }
  std::vector<std::size_t> dist(num_joints, std::numeric_limits<std::size_t>::max());
  std::deque<std::size_t> queue{source};
  dist[source] = 0;
  while (!queue.empty()) {
    const auto u = queue.front();
    queue.pop_front();
    for (auto w : nbr[u]) {
      if (dist[w] == std::numeric_limits<std::size_t>::max()) {
        dist[w] = dist[u] + 1;
        queue.push_back(w);
      }
    }
  }
  return dist;
}

/// Symmetric normalization of A + I, split into root / centripetal /
/// centrifugal parts by hop distance to the center joint. The pair (i, j)
/// goes to root when both are equally far from the center (self-loops
/// included), centripetal when j is closer than i, centrifugal otherwise.
inline SkeletonGraph normalize_adjacency(std::size_t num_joints, const std::vector<Edge>& edges,
                                         std::size_t center_joint) {
  if (num_joints == 0) throw ShapeError("normalize_adjacency: graph needs at least one joint");
  if (center_joint >= num_joints) throw ShapeError("normalize_adjacency: center joint out of range");
  const std::size_t V = num_joints;
  std::vector<double> full(V * V, 0.0);
  for (auto [i, j] : edges) {
    if (i >= V || j >= V) {
      throw ShapeError("normalize_adjacency: edge (" + std::to_string(i) + "," + std::to_string(j) +
                       ") references a joint >= " + std::to_string(V));
    }
    if (i == j) continue;
    full[i * V + j] = 1.0;
    full[j * V + i] = 1.0;
  }
  for (std::size_t i = 0; i < V; ++i) full[i * V + i] = 1.0;
  std::vector<double> inv_sqrt_deg(V);
  for (std::size_t i = 0; i < V; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < V; ++j) d += full[i * V + j];
    inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
  }
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t j = 0; j < V; ++j) full[i * V + j] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];

  SkeletonGraph g;
  g.num_joints = V;
  g.edges = edges;
  g.center_joint = center_joint;
  for (auto& m : g.adjacency) m.assign(V * V, 0.0);
  const auto dist = hop_distance(V, edges, center_joint);
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t j = 0; j < V; ++j) {
      const double w = full[i * V + j];
      if (w == 0.0) continue;
      Partition p = Partition::root;
      if (dist[j] < dist[i]) {
        p = Partition::centripetal;
      } else if (dist[j] > dist[i]) {
        p = Partition::centrifugal;
      }
      g.adjacency[static_cast<int>(p)][i * V + j] = w;
    }

  // Parents point one hop toward the center; unreachable joints are their own parent.
  g.parent.assign(V, 0);
  for (std::size_t i = 0; i < V; ++i) g.parent[i] = i;
  for (auto [i, j] : edges) {
    if (dist[i] == dist[j] + 1) g.parent[i] = j;
    if (dist[j] == dist[i] + 1) g.parent[j] = i;
  }
  return g;
}

/// The 25-joint NTU RGB+D kinematic tree (0-based), as used by ST-GCN.
inline std::vector<Edge> ntu_edges() {
  static constexpr std::array<std::pair<int, int>, 24> one_based = {{
      {1, 2},   {2, 21},  {3, 21},  {4, 3},   {5, 21},  {6, 5},   {7, 6},   {8, 7},
      {9, 21},  {10, 9},  {11, 10}, {12, 11}, {13, 1},  {14, 13}, {15, 14}, {16, 15},
      {17, 1},  {18, 17}, {19, 18}, {20, 19}, {22, 23}, {23, 8},  {24, 25}, {25, 12},
  }};
  std::vector<Edge> edges;
  for (auto [a, b] : one_based) edges.emplace_back(a - 1, b - 1);
  return edges;
}

inline constexpr std::size_t kNtuJoints = 25;
inline constexpr std::size_t kNtuCenter = 1;  // "middle of the spine"

inline SkeletonGraph ntu_graph() { return normalize_adjacency(kNtuJoints, ntu_edges(), kNtuCenter); }

/// Path graph 0-1-...-(V-1) centred on V/2; the stand-in skeleton for V != 25.
inline SkeletonGraph chain_graph(std::size_t num_joints) {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i + 1 < num_joints; ++i) edges.emplace_back(i, i + 1);
  return normalize_adjacency(num_joints, edges, num_joints / 2);
}

inline SkeletonGraph default_graph(std::size_t num_joints) {
  return num_joints == kNtuJoints ? ntu_graph() : chain_graph(num_joints);
}

/// Single action sample, (C, T, V, M) row-major.
struct SkeletonClip {
  std::size_t channels = 0;
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::size_t bodies = 0;
  std::vector<float> data;
  int label = 0;
  std::size_t valid_frames = 0;

  SkeletonClip() = default;
  SkeletonClip(std::size_t c, std::size_t t, std::size_t v, std::size_t m)
      : channels(c), frames(t), joints(v), bodies(m), data(c * t * v * m, 0.0f), valid_frames(t) {}

  std::size_t index(std::size_t c, std::size_t t, std::size_t v, std::size_t m) const {
    return ((c * frames + t) * joints + v) * bodies + m;
  }
  float& at(std::size_t c, std::size_t t, std::size_t v, std::size_t m) { return data[index(c, t, v, m)]; }
  float at(std::size_t c, std::size_t t, std::size_t v, std::size_t m) const { return data[index(c, t, v, m)]; }
};

/// Appends bone vectors (joint minus its parent) as channels 3..5.
inline SkeletonClip compute_bones(const SkeletonClip& clip, const SkeletonGraph& graph) {
  if (clip.channels != 3) throw ShapeError("compute_bones: expected a 3-channel clip");
  if (graph.parent.size() != clip.joints) throw ShapeError("compute_bones: graph has no parent map for these joints");
  SkeletonClip out(6, clip.frames, clip.joints, clip.bodies);
  out.label = clip.label;
  out.valid_frames = clip.valid_frames;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < clip.frames; ++t)
      for (std::size_t v = 0; v < clip.joints; ++v)
        for (std::size_t m = 0; m < clip.bodies; ++m) {
          out.at(c, t, v, m) = clip.at(c, t, v, m);
          out.at(c + 3, t, v, m) = clip.at(c, t, v, m) - clip.at(c, t, graph.parent[v], m);
        }
  return out;
}

}  // namespace sttr
