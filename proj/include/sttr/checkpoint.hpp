#pragma once

// Model checkpoints, little-endian:
//
//   "STTRCKPT"                8-byte magic
//   u32 format version        currently 2
//   u32 n, n bytes            network config as JSON
//   u32 graph edge count, then (u32 i, u32 j) pairs, u32 center joint
//   u32 tensor count
//   per tensor:
//     u32 n, n bytes          name
//     u8  kind                0 parameter, 1 running statistic
//     u32 rank, rank x u32    shape
//     values                  f32 for parameters, f64 for running statistics

#include <array>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>

#include "json.hpp"
#include "sttr/dataset.hpp"
#include "sttr/errors.hpp"
#include "sttr/network.hpp"

namespace sttr {

inline constexpr std::uint32_t kCheckpointVersion = 2;

namespace detail {
inline constexpr std::array<char, 8> kCheckpointMagic = {'S', 'T', 'T', 'R', 'C', 'K', 'P', 'T'};
}

template <class T>
void write_checkpoint(std::ostream& out, Network<T>& net) {
  detail::LeWriter w(out);
  out.write(detail::kCheckpointMagic.data(), detail::kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  const std::string cfg = to_json(net.config).dump();
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg);
  w.u32(static_cast<std::uint32_t>(net.graph.edges.size()));
  for (auto [i, j] : net.graph.edges) {
    w.u32(static_cast<std::uint32_t>(i));
    w.u32(static_cast<std::uint32_t>(j));
  }
  w.u32(static_cast<std::uint32_t>(net.graph.center_joint));

  const auto params = net.named_parameters();
  auto states = net.norm_states();
  w.u32(static_cast<std::uint32_t>(params.size() + 2 * states.size()));
  auto put = [&](const std::string& name, std::uint8_t kind, const Shape& shape, auto&& values) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u8(kind);
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
    for (auto v : values) {
      if (kind == 0) {
        w.f32(static_cast<float>(v));
      } else {
        w.f64(static_cast<double>(v));
      }
    }
  };
  for (const auto& p : params) put(p.name, 0, p.tensor.shape(), p.tensor.data());
  for (auto& [name, st] : states) {
    put(name + ".running_mean", 1, Shape{st->running_mean.size()}, st->running_mean);
    put(name + ".running_var", 1, Shape{st->running_var.size()}, st->running_var);
  }
  if (!out) throw FormatError("write_checkpoint: stream failure");
}

template <class T>
Network<T> read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 8 || magic != detail::kCheckpointMagic) throw FormatError("not a checkpoint (bad magic)");
  detail::LeReader r(in);
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported");
  NetworkConfig cfg;
  try {
    cfg = network_config_from_json(nlohmann::json::parse(r.bytes(r.u32())));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  std::vector<Edge> edges(r.u32());
  for (auto& e : edges) {
    e.first = r.u32();
    e.second = r.u32();
  }
  const std::size_t center = r.u32();
  auto net = Network<T>::init(cfg, normalize_adjacency(cfg.joints, edges, center), 0);

  std::map<std::string, Tensor<T>> params;
  for (auto& p : net.named_parameters()) params.emplace(p.name, p.tensor);
  std::map<std::string, std::vector<double>*> stats;
  for (auto& [name, st] : net.norm_states()) {
    stats.emplace(name + ".running_mean", &st->running_mean);
    stats.emplace(name + ".running_var", &st->running_var);
  }
  const std::size_t count = r.u32();
  if (count != params.size() + stats.size()) throw FormatError("checkpoint tensor count does not match config");
  for (std::size_t k = 0; k < count; ++k) {
    const std::string name = r.bytes(r.u32());
    const auto kind = r.u8();
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    if (kind == 0) {
      auto it = params.find(name);
      if (it == params.end()) throw FormatError("checkpoint: unexpected parameter " + name);
      if (it->second.shape() != shape) throw FormatError("checkpoint: shape mismatch for " + name);
      for (auto& v : it->second.mutable_data()) v = static_cast<T>(r.f32());
    } else {
      auto it = stats.find(name);
      if (it == stats.end() || shape.size() != 1 || shape[0] != it->second->size())
        throw FormatError("checkpoint: unexpected statistic " + name);
      for (auto& v : *it->second) v = r.f64();
    }
  }
  return net;
}

template <class T>
void save_checkpoint(const std::string& path, Network<T>& net) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write_checkpoint(out, net);
}

template <class T>
Network<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_checkpoint<T>(in);
}

}  // namespace sttr
