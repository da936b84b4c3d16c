#pragma once

// Named finite-difference cases covering every differentiable operation and
// both full streams. Each case draws its own random shapes and values from
// the seed it is given.

#include <functional>
#include <string>
#include <vector>

#include "sttr/attention.hpp"
#include "sttr/conv.hpp"
#include "sttr/gradcheck.hpp"
#include "sttr/network.hpp"
#include "sttr/ops.hpp"
#include "sttr/random.hpp"

namespace sttr {

struct GradCase {
  std::string name;
  std::function<double(std::uint64_t seed)> run;  // returns the worst relative error
};

namespace detail {

using D = Tensor<double>;

inline std::size_t dim_in(Rng& r, std::size_t lo, std::size_t hi) { return lo + r.below(hi - lo + 1); }

inline D random_tensor(Rng& r, Shape shape, double magnitude = 1.0) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = magnitude * r.normal();
  return D(std::move(shape), std::move(v));
}

/// Values with |x| >= 0.1 so that ReLU kinks stay far from +-h.
inline D away_from_zero(Rng& r, Shape shape) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) {
    const double u = r.uniform(0.1, 1.5);
    x = r.uniform() < 0.5 ? -u : u;
  }
  return D(std::move(shape), std::move(v));
}

/// sum(y * R) for a fixed random R: a scalar whose gradient probes every output.
inline D probe(const D& y, const D& weights) { return sum(mul(y, weights)); }

inline Shape nctv(Rng& r) { return {dim_in(r, 1, 3), dim_in(r, 1, 4), dim_in(r, 1, 5), dim_in(r, 1, 4)}; }

inline double unary_case(std::uint64_t seed, const std::function<D(const D&)>& f,
                         const std::function<D(Rng&)>& make_input) {
  Rng r(seed);
  auto x = make_input(r);
  auto w = random_tensor(r, f(x).shape());
  return finite_diff_check([&] { return probe(f(x), w); }, {x});
}

}  // namespace detail

inline std::vector<GradCase> gradient_cases() {
  using namespace detail;
  std::vector<GradCase> cases;
  auto nctv_input = [](Rng& r) { return random_tensor(r, nctv(r)); };
  auto add_binary = [&](std::string name, D (*op)(const D&, const D&)) {
    cases.push_back({std::move(name), [op](std::uint64_t seed) {
                       Rng r(seed);
                       auto shape = nctv(r);
                       auto a = random_tensor(r, shape), b = random_tensor(r, shape), w = random_tensor(r, shape);
                       return finite_diff_check([&] { return probe(op(a, b), w); }, {a, b});
                     }});
  };
  add_binary("add", &add<double>);
  add_binary("sub", &sub<double>);
  add_binary("mul", &mul<double>);

  cases.push_back({"scale", [=](std::uint64_t s) { return unary_case(s, [](const D& x) { return scale(x, 0.37); }, nctv_input); }});
  cases.push_back({"relu", [](std::uint64_t s) {
                     return unary_case(s, [](const D& x) { return relu(x); }, [](Rng& r) { return away_from_zero(r, nctv(r)); });
                   }});
  cases.push_back({"sum", [=](std::uint64_t s) { return unary_case(s, [](const D& x) { return sum(x); }, nctv_input); }});
  cases.push_back({"mean", [=](std::uint64_t s) { return unary_case(s, [](const D& x) { return mean(x); }, nctv_input); }});
  cases.push_back({"mean_axis", [](std::uint64_t seed) {
                     Rng r(seed);
                     auto x = random_tensor(r, nctv(r));
                     const std::size_t axis = r.below(4);
                     auto w = random_tensor(r, mean_axis(x, axis).shape());
                     return finite_diff_check([&] { return probe(mean_axis(x, axis), w); }, {x});
                   }});
  cases.push_back({"reshape", [=](std::uint64_t s) {
                     return unary_case(s, [](const D& x) { return reshape(x, {x.numel()}); }, nctv_input);
                   }});
  cases.push_back({"permute", [](std::uint64_t seed) {
                     Rng r(seed);
                     auto x = random_tensor(r, nctv(r));
                     std::vector<std::size_t> perm{0, 1, 2, 3};
                     r.shuffle(perm);
                     auto w = random_tensor(r, permute(x, perm).shape());
                     return finite_diff_check([&] { return probe(permute(x, perm), w); }, {x});
                   }});
  cases.push_back({"concat", [](std::uint64_t seed) {
                     Rng r(seed);
                     auto shape = nctv(r);
                     const std::size_t axis = r.below(4);
                     auto other = shape;
                     other[axis] = dim_in(r, 1, 3);
                     auto a = random_tensor(r, shape), b = random_tensor(r, other);
                     auto w = random_tensor(r, concat<double>({a, b}, axis).shape());
                     return finite_diff_check([&] { return probe(concat<double>({a, b}, axis), w); }, {a, b});
                   }});
  cases.push_back({"subsample_time", [=](std::uint64_t s) {
                     return unary_case(s, [](const D& x) { return subsample_time(x, 2); }, nctv_input);
                   }});
  cases.push_back({"matmul_batched", [](std::uint64_t seed) {
                     Rng r(seed);
                     const std::size_t b = dim_in(r, 1, 3), m = dim_in(r, 1, 4), k = dim_in(r, 1, 4), n = dim_in(r, 1, 4);
                     auto a = random_tensor(r, {b, m, k}), c = random_tensor(r, {b, k, n}), w = random_tensor(r, {b, m, n});
                     return finite_diff_check([&] { return probe(matmul(a, c), w); }, {a, c});
                   }});
  cases.push_back({"matmul_shared", [](std::uint64_t seed) {
                     Rng r(seed);
                     auto shape = nctv(r);
                     const std::size_t n = dim_in(r, 1, 4);
                     auto a = random_tensor(r, shape), c = random_tensor(r, {shape[3], n});
                     auto w = random_tensor(r, matmul(a, c).shape());
                     return finite_diff_check([&] { return probe(matmul(a, c), w); }, {a, c});
                   }});
  cases.push_back({"linear_map", [](std::uint64_t seed) {
                     Rng r(seed);
                     const std::size_t rows = dim_in(r, 1, 5), c_in = dim_in(r, 1, 4), d = dim_in(r, 1, 4);
                     auto x = random_tensor(r, {rows, c_in}), W = random_tensor(r, {c_in, d}), b = random_tensor(r, {d});
                     auto w = random_tensor(r, {rows, d});
                     return finite_diff_check([&] { return probe(linear_map(x, W, std::optional<D>(b)), w); }, {x, W, b});
                   }});
  cases.push_back({"add_channel_bias", [](std::uint64_t seed) {
                     Rng r(seed);
                     auto shape = nctv(r);
                     auto x = random_tensor(r, shape), b = random_tensor(r, {shape[1]}), w = random_tensor(r, shape);
                     return finite_diff_check([&] { return probe(add_channel_bias(x, b), w); }, {x, b});
                   }});
  cases.push_back({"conv1x1", [](std::uint64_t seed) {
                     Rng r(seed);
                     auto shape = nctv(r);
                     const std::size_t c_out = dim_in(r, 1, 4), stride = 1 + r.below(2);
                     auto x = random_tensor(r, shape), W = random_tensor(r, {shape[1], c_out}), b = random_tensor(r, {c_out});
                     auto f = [&] { return conv1x1(x, W, std::optional<D>(b), stride); };
                     auto w = random_tensor(r, f().shape());
                     return finite_diff_check([&] { return probe(f(), w); }, {x, W, b});
                   }});
  cases.push_back({"temporal_conv", [](std::uint64_t seed) {
                     Rng r(seed);
                     auto shape = nctv(r);
                     shape[2] = dim_in(r, 1, 7);
                     const std::size_t c_out = dim_in(r, 1, 3), K = 1 + 2 * r.below(3), stride = 1 + r.below(2);
                     auto x = random_tensor(r, shape), k = random_tensor(r, {c_out, shape[1], K});
                     auto b = random_tensor(r, {c_out});
                     auto f = [&] { return temporal_conv(x, k, std::optional<D>(b), stride); };
                     auto w = random_tensor(r, f().shape());
                     return finite_diff_check([&] { return probe(f(), w); }, {x, k, b});
                   }});
  cases.push_back({"softmax", [](std::uint64_t seed) {
                     Rng r(seed);
                     auto x = random_tensor(r, nctv(r));
                     const std::size_t axis = r.below(4);
                     auto w = random_tensor(r, x.shape());
                     return finite_diff_check([&] { return probe(softmax(x, axis), w); }, {x});
                   }});
  cases.push_back({"batch_norm", [](std::uint64_t seed) {
                     Rng r(seed);
                     auto shape = nctv(r);
                     shape[0] = dim_in(r, 2, 3);  // at least two samples per channel
                     auto x = random_tensor(r, shape), g = random_tensor(r, {shape[1]}), b = random_tensor(r, {shape[1]});
                     auto w = random_tensor(r, shape);
                     BatchNormState st(shape[1]);
                     return finite_diff_check([&] { return probe(batch_norm(x, g, b, st, Mode::train), w); }, {x, g, b});
                   }});
  cases.push_back({"cross_entropy", [](std::uint64_t seed) {
                     Rng r(seed);
                     const std::size_t n = dim_in(r, 1, 4), k = dim_in(r, 2, 5);
                     auto x = random_tensor(r, {n, k}, 2.0);
                     std::vector<int> labels(n);
                     for (auto& l : labels) l = static_cast<int>(r.below(k));
                     return finite_diff_check([&] { return cross_entropy(x, std::span<const int>(labels)); }, {x});
                   }});
  cases.push_back({"drop_attention", [](std::uint64_t seed) {
                     Rng r(seed);
                     auto x = random_tensor(r, nctv(r));
                     auto w = random_tensor(r, x.shape());
                     const std::uint64_t mask_seed = r.next();
                     // Same mask on every evaluation: reseed per call.
                     return finite_diff_check(
                         [&] {
                           Rng m(mask_seed);
                           return probe(drop_attention(softmax(x, 3), 0.3, Mode::train, m), w);
                         },
                         {x});
                   }});
  cases.push_back({"multi_head_combine", [](std::uint64_t seed) {
                     Rng r(seed);
                     auto shape = nctv(r);
                     const std::size_t H = dim_in(r, 1, 3), c_out = dim_in(r, 1, 4);
                     std::vector<D> heads;
                     for (std::size_t h = 0; h < H; ++h) heads.push_back(random_tensor(r, shape));
                     auto wo = random_tensor(r, {H * shape[1], c_out}), bo = random_tensor(r, {c_out});
                     auto f = [&] { return multi_head_combine(heads, wo, std::optional<D>(bo)); };
                     auto w = random_tensor(r, f().shape());
                     auto inputs = heads;
                     inputs.push_back(wo);
                     inputs.push_back(bo);
                     return finite_diff_check([&] { return probe(f(), w); }, inputs);
                   }});
  for (auto axis : {AttentionAxis::spatial, AttentionAxis::temporal}) {
    cases.push_back({axis == AttentionAxis::spatial ? "ssa_forward" : "tsa_forward", [axis](std::uint64_t seed) {
                       Rng r(seed);
                       const std::size_t H = dim_in(r, 1, 2);
                       const std::size_t c_in = dim_in(r, 1, 4), c_out = H * dim_in(r, 1, 3);
                       auto x = random_tensor(r, {dim_in(r, 1, 2), c_in, dim_in(r, 1, 4), dim_in(r, 1, 4)});
                       auto p = AttentionParams<double>::init(c_in, c_out, H, H * dim_in(r, 1, 2), c_out, r);
                       for (auto* t : {&p.b_q, &p.b_k, &p.b_v, &p.b_o})
                         for (auto& v : t->mutable_data()) v = 0.3 * r.normal();
                       auto f = [&] { return self_attention(x, p, axis, Mode::eval); };
                       auto w = random_tensor(r, f().shape());
                       auto inputs = p.parameters();
                       inputs.push_back(x);
                       return finite_diff_check([&] { return probe(f(), w); }, inputs);
                     }});
  }
  cases.push_back({"gcn_forward", [](std::uint64_t seed) {
                     Rng r(seed);
                     const std::size_t V = dim_in(r, 2, 5), c_in = dim_in(r, 1, 4), c_out = dim_in(r, 1, 4);
                     auto x = random_tensor(r, {dim_in(r, 1, 2), c_in, dim_in(r, 1, 3), V});
                     auto g = chain_graph(V);
                     auto p = GcnParams<double>::init(c_in, c_out, V, kPartitions, r);
                     for (auto& m : p.edge_importance)
                       for (auto& v : m.mutable_data()) v = r.uniform(0.5, 1.5);
                     auto adj = adjacency_tensors<double>(g);
                     auto w = random_tensor(r, gcn_forward(x, adj, p).shape());
                     auto inputs = p.parameters();
                     inputs.push_back(x);
                     return finite_diff_check([&] { return probe(gcn_forward(x, adj, p), w); }, inputs);
                   }});
  cases.push_back({"tcn_forward", [](std::uint64_t seed) {
                     Rng r(seed);
                     const std::size_t c_in = dim_in(r, 1, 3), c_out = dim_in(r, 1, 3);
                     auto x = random_tensor(r, {dim_in(r, 1, 2), c_in, dim_in(r, 2, 7), dim_in(r, 1, 3)});
                     auto p = TcnParams<double>::init(c_in, c_out, 3, 1 + r.below(2), r);
                     auto w = random_tensor(r, tcn_forward(x, p).shape());
                     auto inputs = p.parameters();
                     inputs.push_back(x);
                     return finite_diff_check([&] { return probe(tcn_forward(x, p), w); }, inputs);
                   }});
  // Tiny full streams: 4 layers (3 plain + 1 attention), C <= 8, T = 6, V = 5.
  for (auto stream : {Stream::s_tr, Stream::t_tr}) {
    cases.push_back({std::string("network_") + to_string(stream), [stream](std::uint64_t seed) {
                       auto cfg = NetworkConfig::make(stream, 3, false, {4, 4, 8, 8}, 2, 3, 5, 0.0);
                       auto net = Network<double>::init(cfg, chain_graph(5), seed);
                       Rng r(seed * 7919 + 1);
                       auto x = random_tensor(r, {2, 3, 6, 5, 1});
                       std::vector<int> labels{static_cast<int>(r.below(3)), static_cast<int>(r.below(3))};
                       auto inputs = net.parameters();
                       inputs.push_back(x);
                       return finite_diff_check(
                           [&] { return cross_entropy(network_forward(net, x, Mode::train), std::span<const int>(labels)); },
                           inputs);
                     }});
  }
  return cases;
}

}  // namespace sttr
