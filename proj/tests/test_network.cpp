#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "helpers.hpp"
#include "sttr/checkpoint.hpp"
#include "sttr/network.hpp"

using namespace sttr;
using testing_util::D;
using testing_util::max_abs_diff;
using testing_util::randn;

namespace {

const std::vector<std::size_t> kSmall{4, 4, 8, 8, 8, 8};

Network<double> small_net(Stream s, std::uint64_t seed = 3, bool bones = false) {
  auto cfg = NetworkConfig::make(s, 4, bones, kSmall, 2, 3, 25);
  return Network<double>::init(cfg, ntu_graph(), seed);
}

D clip_batch(Rng& r, std::size_t N, std::size_t C, std::size_t T, std::size_t M) {
  return randn(r, {N, C, T, 25, M});
}

std::size_t find(const ParamReport& rep, const std::string& name) {
  for (const auto& m : rep.modules)
    if (m.name == name) return m.total();
  ADD_FAILURE() << "missing module " << name;
  return 0;
}

}  // namespace

TEST(NetworkConfig, PlanAndValidation) {
  auto c = NetworkConfig::make(Stream::t_tr, 60, false);
  ASSERT_EQ(c.layers.size(), 9u);
  EXPECT_EQ(c.layers[0].c_in, 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(c.layers[i].plain());
  for (std::size_t i = 3; i < 9; ++i) EXPECT_EQ(c.layers[i].temporal, TemporalKind::tsa);
  EXPECT_EQ(c.layers[4].temporal_stride, 2u);
  EXPECT_EQ(c.layers[7].temporal_stride, 2u);
  EXPECT_EQ(c.layers[5].temporal_stride, 1u);
  auto b = NetworkConfig::make(Stream::s_tr, 60, true);
  EXPECT_EQ(b.input_channels, 6u);
  EXPECT_EQ(b.layers.back().c_out, 512u);
  EXPECT_THROW(NetworkConfig::make(Stream::s_tr, 4, false, kSmall, 3, 3, 25), ShapeError);
  EXPECT_THROW(NetworkConfig::make(Stream::s_tr, 4, false, kSmall, 2, 4, 25), ShapeError);
  EXPECT_THROW(parse_stream("x-tr"), ShapeError);
  auto j = network_config_from_json(to_json(c));
  EXPECT_EQ(to_json(j), to_json(c));
}

TEST(Network, OutputShapeForBothStreams) {
  Rng r(1);
  auto x = clip_batch(r, 2, 3, 16, 2);
  for (auto s : {Stream::s_tr, Stream::t_tr}) {
    auto net = small_net(s);
    auto y = network_forward(net, x, Mode::eval);
    EXPECT_EQ(y.shape(), (Shape{2, 4}));
    for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Network, BonesNetworkTakesSixChannels) {
  Rng r(2);
  auto net = small_net(Stream::s_tr, 3, true);
  EXPECT_EQ(network_forward(net, clip_batch(r, 1, 6, 8, 1), Mode::eval).shape(), (Shape{1, 4}));
  EXPECT_THROW(network_forward(net, clip_batch(r, 1, 3, 8, 1), Mode::eval), ShapeError);
}

TEST(Network, DuplicatedBodyEqualsSingleBody) {
  Rng r(3);
  auto one = clip_batch(r, 2, 3, 8, 1);
  std::vector<double> two;
  for (std::size_t i = 0; i < one.numel(); ++i) {
    two.push_back(one.data()[i]);
    two.push_back(one.data()[i]);
  }
  for (auto s : {Stream::s_tr, Stream::t_tr}) {
    auto net = small_net(s);
    auto a = network_forward(net, one, Mode::eval);
    auto b = network_forward(net, D({2, 3, 8, 25, 2}, two), Mode::eval);
    EXPECT_LT(max_abs_diff(a, b), 1e-12);
  }
}

TEST(Network, InputErrors) {
  Rng r(4);
  auto net = small_net(Stream::s_tr);
  EXPECT_THROW(network_forward(net, randn(r, {1, 3, 8, 25}), Mode::eval), ShapeError);
  EXPECT_THROW(network_forward(net, randn(r, {1, 3, 8, 24, 1}), Mode::eval), ShapeError);
  EXPECT_THROW(network_forward(net, D({1, 3, 8, 25, 0}, {}), Mode::eval), ShapeError);
}

TEST(Layers, ZeroAttentionBranchLeavesSkip) {
  Rng r(5);
  auto net = small_net(Stream::s_tr);
  auto& same = net.layers[5];
  ASSERT_FALSE(same.skip_weight.has_value());
  auto x = randn(r, {2, 8, 6, 25});
  for (auto& t : {same.attention->w_o, same.attention->b_o}) {
    auto d = const_cast<D&>(t).mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
  auto y = str_layer_forward(x, same, Mode::eval);
  EXPECT_LT(max_abs_diff(y, x), 1e-12);
}

TEST(Layers, SpatialLayerMatchesHandComposition) {
  Rng r(6);
  auto net = small_net(Stream::s_tr);
  auto& l = net.layers[5];
  auto x = randn(r, {2, 8, 6, 25});
  BatchNormState a = l.pre_norm->state, b = l.tcn_norm->state;
  auto h = batch_norm(x, l.pre_norm->gamma, l.pre_norm->beta, a, Mode::train);
  h = relu(ssa_forward(h, *l.attention));
  h = batch_norm(tcn_forward(h, *l.tcn), l.tcn_norm->gamma, l.tcn_norm->beta, b, Mode::train);
  auto oracle = add(h, x);
  EXPECT_LT(max_abs_diff(str_layer_forward(x, l, Mode::train), oracle), 1e-6);
}

TEST(Layers, TemporalLayerMatchesHandComposition) {
  Rng r(7);
  auto net = small_net(Stream::t_tr);
  auto& l = net.layers[3];
  ASSERT_EQ(l.spec.c_in, 8u);
  auto x = randn(r, {2, 8, 6, 25});
  BatchNormState a = l.pre_norm->state, b = l.gcn_norm->state;
  auto h = batch_norm(x, l.pre_norm->gamma, l.pre_norm->beta, a, Mode::train);
  h = relu(batch_norm(gcn_forward(h, net.adjacency, *l.gcn), l.gcn_norm->gamma, l.gcn_norm->beta, b, Mode::train));
  h = tsa_forward(subsample_time(h, l.spec.temporal_stride), *l.attention);
  auto oracle = add(h, x);
  EXPECT_LT(max_abs_diff(ttr_layer_forward(x, l, net.adjacency, Mode::train), oracle), 1e-6);
}

TEST(Layers, ZeroTemporalAttentionLeavesSkip) {
  Rng r(8);
  auto net = small_net(Stream::t_tr);
  auto& l = net.layers[3];
  for (auto& t : {l.attention->w_o, l.attention->b_o}) {
    auto d = const_cast<D&>(t).mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
  auto x = randn(r, {1, 8, 6, 25});
  EXPECT_LT(max_abs_diff(ttr_layer_forward(x, l, net.adjacency, Mode::eval), x), 1e-12);
}

TEST(ParamCount, ModuleTotalsAtWidth256) {
  EXPECT_EQ(tcn_count(256, 256, 9).weights, 589824u);
  const auto gcn = gcn_count(256, 256, 25).total();
  EXPECT_EQ(gcn, 199251u);
  EXPECT_LT(std::abs(double(gcn) - 199000.0) / 199000.0, 0.02);
  const auto ssa = attention_count("ssa", 256, 256).total();
  const auto tsa = attention_count("tsa", 256, 256).total();
  EXPECT_EQ(attention_count("ssa", 256, 256).weights, 163840u);
  EXPECT_LT(std::abs(double(ssa) - 178000.0) / 178000.0, 0.15);
  EXPECT_LT(std::abs(double(tsa) - 177000.0) / 177000.0, 0.15);
  EXPECT_LT(ssa, gcn);
  EXPECT_LT(tsa, tcn_count(256, 256, 9).total());
}

TEST(ParamCount, ReportMatchesInstantiatedNetwork) {
  for (auto s : {Stream::s_tr, Stream::t_tr})
    for (bool bones : {false, true}) {
      auto net = small_net(s, 1, bones);
      EXPECT_EQ(count_params(net.config).total(), net.parameter_count());
      auto full = NetworkConfig::make(s, 60, bones);
      auto big = Network<float>::init(full, ntu_graph(), 1);
      EXPECT_EQ(count_params(full).total(), big.parameter_count());
    }
  auto rep = count_params(NetworkConfig::make(Stream::s_tr, 60, false));
  EXPECT_EQ(find(rep, "layers.8.tcn"), 9u * 256 * 256 + 256 + 512);
}

TEST(Checkpoint, RoundTripPreservesOutputs) {
  Rng r(9);
  auto cfg = NetworkConfig::make(Stream::t_tr, 4, false, kSmall, 2, 3, 25);
  auto net = Network<float>::init(cfg, ntu_graph(), 3);
  std::vector<float> xv(2 * 3 * 8 * 25);
  for (auto& v : xv) v = static_cast<float>(r.normal());
  Tensor<float> x({2, 3, 8, 25, 1}, xv);
  network_forward(net, x, Mode::train);  // move running statistics off their defaults
  std::stringstream buf;
  write_checkpoint(buf, net);
  auto back = read_checkpoint<float>(buf);
  auto a = network_forward(net, x, Mode::eval), b = network_forward(back, x, Mode::eval);
  // Float parameters and double statistics both round-trip losslessly.
  EXPECT_EQ(std::vector<float>(a.data().begin(), a.data().end()), std::vector<float>(b.data().begin(), b.data().end()));
  std::stringstream bad("not a checkpoint");
  EXPECT_THROW(read_checkpoint<float>(bad), FormatError);
}

TEST(Network, SpatialStreamIgnoresJointRelabeling) {
  // Relabel joints in the clip and the graph together; logits must not move.
  Rng r(10);
  std::vector<std::size_t> perm(25);
  std::iota(perm.begin(), perm.end(), 0);
  r.shuffle(perm);
  std::vector<Edge> moved;
  for (auto [a, b] : ntu_edges()) moved.emplace_back(perm[a], perm[b]);
  auto cfg = NetworkConfig::make(Stream::s_tr, 4, false, kSmall, 2, 3, 25);
  auto net = Network<double>::init(cfg, ntu_graph(), 4);
  auto relabeled = Network<double>::init(cfg, normalize_adjacency(25, moved, perm[kNtuCenter]), 4);
  auto x = clip_batch(r, 2, 3, 8, 1);
  std::vector<double> xv(x.numel());
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < 8; ++t)
        for (std::size_t v = 0; v < 25; ++v) xv[((n * 3 + c) * 8 + t) * 25 + perm[v]] = x.at({n, c, t, v, 0});
  for (auto mode : {Mode::eval, Mode::train}) {
    auto a = network_forward(net, x, mode);
    auto b = network_forward(relabeled, D(x.shape(), xv), mode);
    EXPECT_LT(max_abs_diff(a, b), 1e-5);
  }
}
