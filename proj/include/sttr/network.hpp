#pragma once

// Two-stream spatial-temporal transformer.
//
// Both streams start with three plain layers (graph conv + temporal conv, as
// in ST-GCN). From the fourth layer on:
//
//   S-TR layer:  y = TCN(relu(SSA(BN(x)))) + skip(x)
//   T-TR layer:  y = TSA(subsample(GCN(BN(x)))) + skip(x)
//   plain layer: y = relu(TCN(GCN(x)) + skip(x))
//
// where GCN = relu(BN(graph conv)) and TCN = BN(temporal conv). skip is the
// identity when shapes match, otherwise BN of a strided 1x1 map. Bodies are folded
// into the batch, features are averaged over frames and joints, classified,
// and the per-body logits averaged.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sttr/attention.hpp"
#include "sttr/conv.hpp"
#include "sttr/errors.hpp"
#include "sttr/init.hpp"
#include "sttr/ops.hpp"
#include "sttr/random.hpp"
#include "sttr/skeleton.hpp"
#include "sttr/tensor.hpp"

namespace sttr {

enum class Stream { s_tr, t_tr };
enum class SpatialKind { gcn, ssa };
enum class TemporalKind { tcn, tsa };

inline const char* to_string(Stream s) { return s == Stream::s_tr ? "s-tr" : "t-tr"; }

inline Stream parse_stream(const std::string& s) {
  if (s == "s-tr") return Stream::s_tr;
  if (s == "t-tr") return Stream::t_tr;
  throw ShapeError("unknown stream '" + s + "' (expected s-tr or t-tr)");
}

struct LayerSpec {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  SpatialKind spatial = SpatialKind::gcn;
  TemporalKind temporal = TemporalKind::tcn;
  std::size_t temporal_stride = 1;

  bool plain() const { return spatial == SpatialKind::gcn && temporal == TemporalKind::tcn; }
};

/// Output widths of the nine-layer joints-only plan.
inline std::vector<std::size_t> default_widths() { return {64, 64, 64, 64, 128, 128, 128, 256, 256}; }

/// Number of leading GCN+TCN layers on both streams.
inline constexpr std::size_t kPlainLayers = 3;

struct NetworkConfig {
  Stream stream = Stream::s_tr;
  std::vector<LayerSpec> layers;
  std::size_t num_classes = 0;
  std::size_t input_channels = 3;
  bool use_bones = false;
  std::size_t joints = kNtuJoints;
  std::size_t heads = 8;
  std::size_t kernel_size = 9;
  double drop_rate = 0.0;

  /// Layer plan from per-layer output widths of the joints-only network.
  /// With bones the input has 6 channels and every width doubles. A layer
  /// that widens (other than the first) downsamples time by 2.
  static NetworkConfig make(Stream stream, std::size_t num_classes, bool use_bones,
                            std::vector<std::size_t> widths = default_widths(), std::size_t heads = 8,
                            std::size_t kernel_size = 9, std::size_t joints = kNtuJoints, double drop_rate = 0.0) {
    NetworkConfig c;
    c.stream = stream;
    c.num_classes = num_classes;
    c.use_bones = use_bones;
    c.input_channels = use_bones ? 6 : 3;
    c.joints = joints;
    c.heads = heads;
    c.kernel_size = kernel_size;
    c.drop_rate = drop_rate;
    std::size_t c_in = c.input_channels;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      LayerSpec l;
      l.c_in = c_in;
      l.c_out = widths[i] * (use_bones ? 2 : 1);
      l.temporal_stride = (i > 0 && l.c_out > l.c_in) ? 2 : 1;
      if (i >= kPlainLayers) {
        if (stream == Stream::s_tr) {
          l.spatial = SpatialKind::ssa;
        } else {
          l.temporal = TemporalKind::tsa;
        }
      }
      c.layers.push_back(l);
      c_in = l.c_out;
    }
    c.validate();
    return c;
  }

  std::size_t output_channels() const { return layers.empty() ? input_channels : layers.back().c_out; }

  void validate() const {
    if (layers.empty()) throw ShapeError("NetworkConfig: no layers");
    if (num_classes < 1) throw ShapeError("NetworkConfig: need at least one class");
    if (heads < 1) throw ShapeError("NetworkConfig: need at least one head");
    if (kernel_size % 2 == 0) throw ShapeError("NetworkConfig: temporal kernel must be odd");
    if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw ShapeError("NetworkConfig: drop rate must lie in [0, 1)");
    std::size_t c = input_channels;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      const std::string where = "NetworkConfig layer " + std::to_string(i) + ": ";
      if (l.c_in != c) throw ShapeError(where + "input width does not chain");
      if (l.temporal_stride != 1 && l.temporal_stride != 2) throw ShapeError(where + "stride must be 1 or 2");
      if (l.spatial == SpatialKind::ssa && l.temporal == TemporalKind::tsa)
        throw ShapeError(where + "a layer holds one attention module at most");
      if (i < kPlainLayers && !l.plain()) throw ShapeError(where + "first three layers must be GCN+TCN");
      if (i >= kPlainLayers) {
        const bool want_ssa = stream == Stream::s_tr;
        if ((l.spatial == SpatialKind::ssa) != want_ssa || (l.temporal == TemporalKind::tsa) == want_ssa)
          throw ShapeError(where + "module kinds do not match the stream");
      }
      if (!l.plain()) {
        const auto kw = attention_key_width(l.c_out);
        if (kw % heads || l.c_out % heads)
          throw ShapeError(where + "attention widths (" + std::to_string(kw) + ", " + std::to_string(l.c_out) +
                           ") must divide by " + std::to_string(heads) + " heads");
      }
      c = l.c_out;
    }
  }
};

inline nlohmann::json to_json(const NetworkConfig& c) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : c.layers) {
    layers.push_back({{"c_in", l.c_in},
                      {"c_out", l.c_out},
                      {"spatial", l.spatial == SpatialKind::gcn ? "gcn" : "ssa"},
                      {"temporal", l.temporal == TemporalKind::tcn ? "tcn" : "tsa"},
                      {"stride", l.temporal_stride}});
  }
  return {{"stream", to_string(c.stream)},   {"num_classes", c.num_classes}, {"input_channels", c.input_channels},
          {"use_bones", c.use_bones},        {"joints", c.joints},           {"heads", c.heads},
          {"kernel_size", c.kernel_size},    {"drop_rate", c.drop_rate},     {"layers", layers}};
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.stream = parse_stream(j.at("stream").get<std::string>());
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.input_channels = j.at("input_channels").get<std::size_t>();
  c.use_bones = j.at("use_bones").get<bool>();
  c.joints = j.at("joints").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.kernel_size = j.at("kernel_size").get<std::size_t>();
  c.drop_rate = j.at("drop_rate").get<double>();
  for (const auto& l : j.at("layers")) {
    LayerSpec s;
    s.c_in = l.at("c_in").get<std::size_t>();
    s.c_out = l.at("c_out").get<std::size_t>();
    s.spatial = l.at("spatial").get<std::string>() == "ssa" ? SpatialKind::ssa : SpatialKind::gcn;
    s.temporal = l.at("temporal").get<std::string>() == "tsa" ? TemporalKind::tsa : TemporalKind::tcn;
    s.temporal_stride = l.at("stride").get<std::size_t>();
    c.layers.push_back(s);
  }
  c.validate();
  return c;
}

template <class T>
struct BatchNormUnit {
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormState state;

  explicit BatchNormUnit(std::size_t channels = 0)
      : gamma(ones_param<T>({channels})), beta(zeros_param<T>({channels})), state(channels) {}

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) { return batch_norm(x, gamma, beta, state, mode); }
};

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
struct Layer {
  LayerSpec spec;
  std::optional<BatchNormUnit<T>> pre_norm;
  std::optional<GcnParams<T>> gcn;
  std::optional<BatchNormUnit<T>> gcn_norm;
  std::optional<TcnParams<T>> tcn;
  std::optional<BatchNormUnit<T>> tcn_norm;
  std::optional<AttentionParams<T>> attention;
  std::optional<Tensor<T>> skip_weight;  // (C_in, C_out), followed by skip_norm
  std::optional<BatchNormUnit<T>> skip_norm;

  static Layer init(const LayerSpec& s, const NetworkConfig& cfg, Rng& rng) {
    Layer l;
    l.spec = s;
    const bool shared_shape = s.c_in == s.c_out && s.temporal_stride == 1;
    if (!s.plain()) l.pre_norm.emplace(s.c_in);
    if (s.spatial == SpatialKind::gcn) {
      l.gcn = GcnParams<T>::init(s.c_in, s.c_out, cfg.joints, kPartitions, rng);
      l.gcn_norm.emplace(s.c_out);
    }
    if (s.temporal == TemporalKind::tcn) {
      l.tcn = TcnParams<T>::init(s.c_out, s.c_out, cfg.kernel_size, s.temporal_stride, rng);
      l.tcn_norm.emplace(s.c_out);
    }
    if (!s.plain()) {
      const std::size_t attn_in = s.spatial == SpatialKind::ssa ? s.c_in : s.c_out;
      l.attention = AttentionParams<T>::init(attn_in, s.c_out, cfg.heads, attention_key_width(s.c_out), s.c_out,
                                             rng, cfg.drop_rate);
    }
    if (!shared_shape) {
      l.skip_weight = uniform_fan_in<T>({s.c_in, s.c_out}, s.c_in, rng);
      l.skip_norm.emplace(s.c_out);
    }
    return l;
  }

  /// Identity, or a normalized strided 1x1 map when the shape changes.
  Tensor<T> skip(const Tensor<T>& x, Mode mode) {
    if (!skip_weight) return x;
    return (*skip_norm)(conv1x1(x, *skip_weight, std::optional<Tensor<T>>{}, spec.temporal_stride), mode);
  }

  Tensor<T> gcn_unit(const Tensor<T>& x, const std::vector<Tensor<T>>& adjacency, Mode mode) {
    return relu((*gcn_norm)(gcn_forward(x, adjacency, *gcn), mode));
  }

  Tensor<T> tcn_unit(const Tensor<T>& x, Mode mode) { return (*tcn_norm)(tcn_forward(x, *tcn), mode); }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    auto bn = [&](const std::string& name, const std::optional<BatchNormUnit<T>>& u) {
      if (!u) return;
      out.push_back({prefix + name + ".gamma", u->gamma});
      out.push_back({prefix + name + ".beta", u->beta});
    };
    bn("pre_norm", pre_norm);
    if (gcn) {
      for (std::size_t k = 0; k < gcn->weights.size(); ++k)
        out.push_back({prefix + "gcn.weight." + std::to_string(k), gcn->weights[k]});
      for (std::size_t k = 0; k < gcn->edge_importance.size(); ++k)
        out.push_back({prefix + "gcn.edge_importance." + std::to_string(k), gcn->edge_importance[k]});
      out.push_back({prefix + "gcn.bias", gcn->bias});
    }
    bn("gcn_norm", gcn_norm);
    if (attention) {
      const auto& a = *attention;
      const char* names[] = {"w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o"};
      auto params = a.parameters();
      for (std::size_t k = 0; k < params.size(); ++k) out.push_back({prefix + "attention." + names[k], params[k]});
    }
    if (tcn) {
      out.push_back({prefix + "tcn.kernel", tcn->kernel});
      out.push_back({prefix + "tcn.bias", tcn->bias});
    }
    bn("tcn_norm", tcn_norm);
    if (skip_weight) out.push_back({prefix + "skip.weight", *skip_weight});
    bn("skip_norm", skip_norm);
  }

  std::vector<std::pair<std::string, BatchNormState*>> norm_states(const std::string& prefix) {
    std::vector<std::pair<std::string, BatchNormState*>> out;
    if (pre_norm) out.emplace_back(prefix + "pre_norm", &pre_norm->state);
    if (gcn_norm) out.emplace_back(prefix + "gcn_norm", &gcn_norm->state);
    if (tcn_norm) out.emplace_back(prefix + "tcn_norm", &tcn_norm->state);
    if (skip_norm) out.emplace_back(prefix + "skip_norm", &skip_norm->state);
    return out;
  }
};

/// Plain layer: relu(TCN(GCN(x)) + skip(x)).
template <class T>
Tensor<T> plain_layer_forward(const Tensor<T>& x, Layer<T>& layer, const std::vector<Tensor<T>>& adjacency,
                              Mode mode) {
  auto h = layer.tcn_unit(layer.gcn_unit(x, adjacency, mode), mode);
  return relu(add(h, layer.skip(x, mode)));
}

/// S-TR layer: TCN(relu(SSA(BN(x)))) + skip(x).
template <class T>
Tensor<T> str_layer_forward(const Tensor<T>& x, Layer<T>& layer, Mode mode, Rng* rng = nullptr) {
  if (layer.spec.spatial != SpatialKind::ssa || !layer.attention)
    throw ShapeError("str_layer_forward: layer has no spatial self-attention");
  auto h = (*layer.pre_norm)(x, mode);
  h = relu(ssa_forward(h, *layer.attention, mode, rng));
  h = layer.tcn_unit(h, mode);
  return add(h, layer.skip(x, mode));
}

/// T-TR layer: TSA(subsample(GCN(BN(x)))) + skip(x).
template <class T>
Tensor<T> ttr_layer_forward(const Tensor<T>& x, Layer<T>& layer, const std::vector<Tensor<T>>& adjacency, Mode mode,
                            Rng* rng = nullptr) {
  if (layer.spec.temporal != TemporalKind::tsa || !layer.attention)
    throw ShapeError("ttr_layer_forward: layer has no temporal self-attention");
  auto h = (*layer.pre_norm)(x, mode);
  h = layer.gcn_unit(h, adjacency, mode);
  h = subsample_time(h, layer.spec.temporal_stride);
  h = tsa_forward(h, *layer.attention, mode, rng);
  return add(h, layer.skip(x, mode));
}

template <class T>
struct Network {
  NetworkConfig config;
  SkeletonGraph graph;
  std::vector<Tensor<T>> adjacency;
  BatchNormUnit<T> input_norm;
  std::vector<Layer<T>> layers;
  Tensor<T> fc_weight;  // (C_last, K)
  Tensor<T> fc_bias;    // (K)

  static Network init(const NetworkConfig& cfg, const SkeletonGraph& graph, std::uint64_t seed) {
    cfg.validate();
    if (graph.num_joints != cfg.joints) throw ShapeError("Network: graph joint count differs from config");
    Network net;
    net.config = cfg;
    net.set_graph(graph);
    net.input_norm = BatchNormUnit<T>(cfg.input_channels);
    Rng rng(seed);
    for (const auto& spec : cfg.layers) net.layers.push_back(Layer<T>::init(spec, cfg, rng));
    net.fc_weight = uniform_fan_in<T>({cfg.output_channels(), cfg.num_classes}, cfg.output_channels(), rng);
    net.fc_bias = zeros_param<T>({cfg.num_classes});
    return net;
  }

  void set_graph(const SkeletonGraph& g) {
    if (g.num_joints != config.joints) throw ShapeError("Network: graph joint count differs from config");
    graph = g;
    adjacency = adjacency_tensors<T>(g);
  }

  std::vector<NamedTensor<T>> named_parameters() const {
    std::vector<NamedTensor<T>> out;
    out.push_back({"input_norm.gamma", input_norm.gamma});
    out.push_back({"input_norm.beta", input_norm.beta});
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect("layers." + std::to_string(i) + ".", out);
    out.push_back({"fc.weight", fc_weight});
    out.push_back({"fc.bias", fc_bias});
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& n : named_parameters()) out.push_back(n.tensor);
    return out;
  }

  std::vector<std::pair<std::string, BatchNormState*>> norm_states() {
    std::vector<std::pair<std::string, BatchNormState*>> out{{"input_norm", &input_norm.state}};
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto s = layers[i].norm_states("layers." + std::to_string(i) + ".");
      out.insert(out.end(), s.begin(), s.end());
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& p : named_parameters()) n += p.tensor.numel();
    return n;
  }

  /// Per-body features after the last layer, (N*M, C_last, T', V).
  Tensor<T> features(const Tensor<T>& x, Mode mode, Rng* rng) {
    if (x.dim() != 5) throw ShapeError("network_forward: expected (N,C,T,V,M), got " + shape_str(x.shape()));
    const std::size_t N = x.size(0), C = x.size(1), Tn = x.size(2), V = x.size(3), M = x.size(4);
    if (C != config.input_channels)
      throw ShapeError("network_forward: input has " + std::to_string(C) + " channels, config expects " +
                       std::to_string(config.input_channels));
    if (M == 0) throw ShapeError("network_forward: no bodies (M = 0)");
    if (V != config.joints) throw ShapeError("network_forward: joint count differs from config");
    auto h = reshape(permute(x, {0, 4, 1, 2, 3}), {N * M, C, Tn, V});
    h = input_norm(h, mode);
    for (auto& layer : layers) {
      if (layer.spec.spatial == SpatialKind::ssa) {
        h = str_layer_forward(h, layer, mode, rng);
      } else if (layer.spec.temporal == TemporalKind::tsa) {
        h = ttr_layer_forward(h, layer, adjacency, mode, rng);
      } else {
        h = plain_layer_forward(h, layer, adjacency, mode);
      }
    }
    return h;
  }
};

/// Logits (N, num_classes) for a clip batch (N, C, T, V, M).
template <class T>
Tensor<T> network_forward(Network<T>& net, const Tensor<T>& x, Mode mode, Rng* rng = nullptr) {
  const std::size_t N = x.dim() == 5 ? x.size(0) : 0;
  const std::size_t M = x.dim() == 5 ? x.size(4) : 0;
  auto h = net.features(x, mode, rng);
  const std::size_t C = h.size(1);
  auto pooled = mean_axis(reshape(h, {N * M, C, h.size(2) * h.size(3)}), 2);
  auto logits = linear_map(pooled, net.fc_weight, std::optional<Tensor<T>>(net.fc_bias));
  return mean_axis(reshape(logits, {N, M, net.config.num_classes}), 1);
}

// ---------------------------------------------------------------------------
// Parameter accounting

struct ModuleCount {
  std::string name;
  std::size_t weights = 0;
  std::size_t biases = 0;
  std::size_t norm = 0;             // batch-norm gamma + beta
  std::size_t edge_importance = 0;  // GCN masks

  std::size_t total() const { return weights + biases + norm + edge_importance; }
};

/// GCN unit: P partition maps, P edge masks, bias, trailing batch norm.
inline ModuleCount gcn_count(std::size_t c_in, std::size_t c_out, std::size_t joints,
                             std::size_t partitions = kPartitions) {
  return {"gcn", partitions * c_in * c_out, c_out, 2 * c_out, partitions * joints * joints};
}

/// TCN unit: (C_out, C_in, K) kernel, bias, trailing batch norm.
inline ModuleCount tcn_count(std::size_t c_in, std::size_t c_out, std::size_t kernel_size) {
  return {"tcn", kernel_size * c_in * c_out, c_out, 2 * c_out, 0};
}

/// Attention: W_q, W_k (C_in x C_out/4), W_v (C_in x C_out), W_o (C_out x C_out), with biases.
inline ModuleCount attention_count(const char* name, std::size_t c_in, std::size_t c_out) {
  const std::size_t kw = attention_key_width(c_out), vw = c_out;
  return {name, 2 * c_in * kw + c_in * vw + vw * c_out, 2 * kw + vw + c_out, 0, 0};
}

struct ParamReport {
  std::vector<ModuleCount> modules;  // named "layers.<i>.<module>", "input_norm", "fc"

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& m : modules) n += m.total();
    return n;
  }
};

/// Exact itemized parameter counts; a pure function of the config.
inline ParamReport count_params(const NetworkConfig& cfg) {
  cfg.validate();
  ParamReport r;
  r.modules.push_back({"input_norm", 0, 0, 2 * cfg.input_channels, 0});
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const auto& l = cfg.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    if (!l.plain()) r.modules.push_back({p + "pre_norm", 0, 0, 2 * l.c_in, 0});
    if (l.spatial == SpatialKind::gcn) {
      auto m = gcn_count(l.c_in, l.c_out, cfg.joints);
      m.name = p + m.name;
      r.modules.push_back(m);
    } else {
      auto m = attention_count("ssa", l.c_in, l.c_out);
      m.name = p + m.name;
      r.modules.push_back(m);
    }
    if (l.temporal == TemporalKind::tcn) {
      auto m = tcn_count(l.c_out, l.c_out, cfg.kernel_size);
      m.name = p + m.name;
      r.modules.push_back(m);
    } else {
      auto m = attention_count("tsa", l.c_out, l.c_out);
      m.name = p + m.name;
      r.modules.push_back(m);
    }
    if (!(l.c_in == l.c_out && l.temporal_stride == 1)) r.modules.push_back({p + "skip", l.c_in * l.c_out, 0, 2 * l.c_out, 0});
  }
  r.modules.push_back({"fc", cfg.output_channels() * cfg.num_classes, cfg.num_classes, 0, 0});
  return r;
}

}  // namespace sttr
