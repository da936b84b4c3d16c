// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset; the exit status is nonzero if any selected one fails.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "sttr/sttr.hpp"

using namespace sttr;
using testing_util::D;
using testing_util::max_abs_diff;
using testing_util::randn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1 ------------------------------------------------------------------------

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name, failed;
  std::size_t cases = 0, networks = 0;
  for (const auto& c : gradient_cases()) {
    double w = 0.0;
    for (std::uint64_t s = 1; s <= 10; ++s) w = std::max(w, c.run(s));
    ++cases;
    networks += c.name.rfind("network_", 0) == 0;
    if (!(w < 1e-5)) failed += " " + c.name;
    if (w > worst) worst = w, worst_name = c.name;
  }
  const double secs = seconds_since(t0);
  const bool ok = failed.empty() && networks >= 2 && secs < 120.0;
  return {ok, fmt("%zu cases (%zu full streams) x 10 seeds, max rel err %.2e (%s), %.1f s%s", cases, networks, worst,
                  worst_name.c_str(), secs, failed.empty() ? "" : ("; failed:" + failed).c_str())};
}

// 2 ------------------------------------------------------------------------

Verdict attention_oracle() {
  Rng r(2024);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t H = 1 + r.below(3);
    const std::size_t C = 1 + r.below(6), Co = 1 + r.below(6);
    const std::size_t dk = H * (1 + r.below(3)), dv = H * (1 + r.below(3));
    auto p = testing_util::random_params(r, C, Co, H, dk, dv);
    auto x = randn(r, {1 + r.below(2), C, 1 + r.below(6), 1 + r.below(6)});
    worst = std::max(worst, max_abs_diff(ssa_forward(x, p), testing_util::naive_attention(x, p, AttentionAxis::spatial)));
    worst = std::max(worst, max_abs_diff(tsa_forward(x, p), testing_util::naive_attention(x, p, AttentionAxis::temporal)));
  }
  return {worst < 1e-6, fmt("20 instances x {SSA, TSA}, max abs diff %.2e (< 1e-6)", worst)};
}

// 3 ------------------------------------------------------------------------

double gcn_permutation_gap(Rng& r) {
  const std::size_t V = 9;
  const std::vector<Edge> edges{{0, 1}, {1, 2}, {2, 3}, {1, 4}, {4, 5}, {1, 6}, {6, 7}, {7, 8}};
  const auto perm = testing_util::random_perm(r, V);
  std::vector<Edge> moved;
  for (auto [a, b] : edges) moved.emplace_back(perm[a], perm[b]);
  auto p = GcnParams<double>::init(3, 4, V, kPartitions, r);
  p.bias = randn(r, {4});
  auto pp = p;
  pp.edge_importance.clear();
  for (auto& m : p.edge_importance) {
    m = randn(r, {V, V});
    std::vector<double> mv(V * V);
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t j = 0; j < V; ++j) mv[perm[i] * V + perm[j]] = m.at({i, j});
    pp.edge_importance.emplace_back(Shape{V, V}, mv);
  }
  auto x = randn(r, {2, 3, 3, V});
  std::vector<double> xv(x.numel());
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t v = 0; v < V; ++v) xv[((n * 3 + c) * 3 + t) * V + perm[v]] = x.at({n, c, t, v});
  auto y = gcn_forward(x, normalize_adjacency(V, edges, 1), p);
  auto yp = gcn_forward(D(x.shape(), xv), normalize_adjacency(V, moved, perm[1]), pp);
  double gap = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t v = 0; v < V; ++v) gap = std::max(gap, std::abs(yp.at({n, o, t, perm[v]}) - y.at({n, o, t, v})));
  return gap;
}

Verdict equivariance() {
  Rng r(77);
  double ssa = 0, tsa = 0, gcn = 0;
  for (int trial = 0; trial < 10; ++trial) {
    auto p = testing_util::random_params(r, 3, 4, 2, 4, 4);
    auto x = randn(r, {2, 3, 5, 7});
    auto pv = testing_util::random_perm(r, 7), pt = testing_util::random_perm(r, 5);
    using testing_util::permute_axis;
    ssa = std::max(ssa, max_abs_diff(ssa_forward(permute_axis(x, 3, pv), p), permute_axis(ssa_forward(x, p), 3, pv)));
    tsa = std::max(tsa, max_abs_diff(tsa_forward(permute_axis(x, 2, pt), p), permute_axis(tsa_forward(x, p), 2, pt)));
    gcn = std::max(gcn, gcn_permutation_gap(r));
  }
  return {ssa < 1e-6 && tsa < 1e-6 && gcn < 1e-6,
          fmt("10 trials: SSA joints %.2e, TSA frames %.2e, GCN graph relabeling %.2e (each < 1e-6)", ssa, tsa, gcn)};
}

// 4 ------------------------------------------------------------------------

Verdict parameter_accounting() {
  const auto tcn = tcn_count(256, 256, 9);
  const auto gcn = gcn_count(256, 256, 25).total();
  const auto ssa = attention_count("ssa", 256, 256).total();
  const auto tsa = attention_count("tsa", 256, 256).total();
  const double gcn_rel = std::abs(double(gcn) - 199000.0) / 199000.0;
  const double ssa_rel = std::abs(double(ssa) - 178000.0) / 178000.0;
  const double tsa_rel = std::abs(double(tsa) - 177000.0) / 177000.0;
  const bool ok = tcn.weights == 589824 && gcn_rel < 0.02 && ssa_rel < 0.15 && tsa_rel < 0.15 && ssa < gcn &&
                  tsa < tcn.total();
  return {ok, fmt("TCN weights %zu, GCN %zu (%.1f%% off 199k), SSA %zu (%.1f%% off 178k), TSA %zu (%.1f%% off 177k), "
                  "SSA<GCN %s, TSA<TCN(%zu) %s",
                  tcn.weights, gcn, 100 * gcn_rel, ssa, 100 * ssa_rel, tsa, 100 * tsa_rel, ssa < gcn ? "yes" : "no",
                  tcn.total(), tsa < tcn.total() ? "yes" : "no")};
}

// 5 ------------------------------------------------------------------------

Verdict schedule() {
  TrainConfig c;
  const double a = lr_at_epoch(0, c), b = lr_at_epoch(60, c), d = lr_at_epoch(90, c);
  return {a == 0.1 && b == 0.01 && d == 0.001, fmt("epochs 0/60/90 -> %.17g / %.17g / %.17g", a, b, d)};
}

// 6 and 7 ------------------------------------------------------------------

struct DeskRun {
  double train_acc = 0, test_acc = 0, secs = 0;
  ScoreTable test_scores;
};

// Mirrors the CLI's default train configuration.
DeskRun desk_train(Stream stream, bool bones) {
  auto ds = synth_generate(SynthOptions{});
  const auto graph = default_graph(ds.joints);
  if (bones) ds = ds.with_bones(graph);
  auto cfg = NetworkConfig::make(stream, ds.manifest.num_classes, bones, {8, 8, 8, 8, 16, 16, 16, 32, 32}, 2, 9, ds.joints);
  TrainConfig tc;
  tc.epochs = 50;
  tc.batch_size = 32;
  tc.base_lr = 0.01;
  tc.lr_drop_epochs = {30, 40};
  tc.seed = 7;
  const auto t0 = Clock::now();
  auto net = Network<float>::init(cfg, graph, tc.seed);
  fit(net, ds, tc);
  DeskRun out;
  out.secs = seconds_since(t0);
  out.train_acc = evaluate(net, ds, ds.indices(Split::train), tc.batch_size).accuracy;
  auto test = evaluate(net, ds, ds.indices(Split::test), tc.batch_size);
  out.test_acc = test.accuracy;
  out.test_scores = std::move(test.scores);
  return out;
}

DeskRun joint_runs[2];  // S-TR, T-TR; reused by the fusion check

Verdict desk_learning() {
  bool ok = true;
  std::string detail;
  for (bool bones : {false, true})
    for (auto s : {Stream::s_tr, Stream::t_tr}) {
      auto run = desk_train(s, bones);
      const bool pass = run.train_acc >= 0.95 && run.test_acc >= 0.80 && run.secs < 600.0;
      ok = ok && pass;
      detail += fmt("%s%s train %.3f test %.3f %.0fs%s; ", to_string(s), bones ? "+bones" : "", run.train_acc,
                    run.test_acc, run.secs, pass ? "" : " [fail]");
      std::fflush(stdout);
      if (!bones) joint_runs[s == Stream::s_tr ? 0 : 1] = std::move(run);
    }
  detail.resize(detail.size() - 2);
  return {ok, detail + " (need train >= 0.95, test >= 0.80, < 600 s)"};
}

Verdict fusion() {
  // Hand oracle on dyadic scores so every sum is exact.
  ScoreTable a{{{"p", 0, {0.5, 0.25, 0.25}}, {"q", 1, {0.125, 0.375, 0.5}}, {"r", 2, {0.75, 0.125, 0.125}}}};
  ScoreTable b{{{"r", 2, {0.25, 0.25, 0.5}}, {"p", 0, {0.25, 0.5, 0.25}}, {"q", 1, {0.0, 0.625, 0.375}}}};
  auto f = fuse_scores(a, b);
  const std::vector<std::vector<double>> want{{0.75, 0.75, 0.5}, {0.125, 1.0, 0.875}, {1.0, 0.375, 0.625}};
  bool hand = f.predictions == std::vector<int>{0, 1, 0} && f.accuracy == 2.0 / 3.0;
  for (std::size_t i = 0; i < 3; ++i) hand = hand && f.table.rows[i].scores == want[i];

  if (joint_runs[0].test_scores.rows.empty()) {
    joint_runs[0] = desk_train(Stream::s_tr, false);
    joint_runs[1] = desk_train(Stream::t_tr, false);
  }
  const double sa = joint_runs[0].test_acc, ta = joint_runs[1].test_acc;
  const double fused = fuse_scores(joint_runs[0].test_scores, joint_runs[1].test_scores).accuracy;
  const bool ok = hand && fused >= std::min(sa, ta);
  return {ok, fmt("hand oracle %s; held-out S-TR %.3f, T-TR %.3f, fused %.3f", hand ? "exact" : "MISMATCH", sa, ta, fused)};
}

// 8 ------------------------------------------------------------------------

Verdict ingestion() {
  const std::string dir = STTR_FIXTURE_DIR;
  std::vector<std::string> bad;
  auto check = [&](bool cond, const std::string& what) {
    if (!cond) bad.push_back(what);
  };
  auto parse = [&](const std::string& rel) {
    std::ifstream in(dir + "/" + rel);
    return parse_ntu_skeleton(in);
  };
  auto near = [](float a, double b) { return std::abs(a - b) < 1e-6; };
  try {
    auto one = parse("ntu/S001C001P001R001A001.skeleton");
    check(one.frames.size() == 1 && one.frames[0].bodies.size() == 1, "single frame/body");
    auto empty = parse("ntu/S002C002P002R001A002.skeleton");
    PreprocessOptions o1;
    o1.target_frames = 4;
    o1.max_bodies = 1;
    auto c = preprocess_clip(empty, o1);
    check(empty.frames.size() == 3 && empty.frames[1].bodies.empty(), "empty-body frame kept raw");
    check(c.valid_frames == 2 && near(c.at(1, 1, kNtuCenter, 0), 0.02), "empty-body frame dropped");
    auto two = parse("ntu/S003C003P003R002A003.skeleton");
    PreprocessOptions o2;
    o2.target_frames = 2;
    o2.max_bodies = 1;
    auto c2 = preprocess_clip(two, o2);
    check(near(c2.at(1, 1, kNtuCenter, 0), 0.05) && near(c2.at(0, 0, 0, 0), -0.1), "moving body kept");
    auto d1 = preprocess_clip(two), d2 = preprocess_clip(parse("ntu/S003C003P003R002A003.skeleton"));
    bool finite = true;
    for (float v : d1.data) finite = finite && std::isfinite(v);
    check(d1.data == d2.data, "deterministic");
    check(finite, "NaN-free");
  } catch (const std::exception& e) {
    bad.push_back(std::string("well-formed fixture threw: ") + e.what());
  }
  const std::pair<const char*, std::size_t> malformed[] = {{"malformed/truncated.skeleton", 58},
                                                           {"malformed/bad_joint_count.skeleton", 4},
                                                           {"malformed/non_numeric.skeleton", 9},
                                                           {"malformed/short_joint_line.skeleton", 6}};
  for (auto [file, line] : malformed) {
    std::size_t got = 0;
    try {
      parse(file);
    } catch (const ParseError& e) {
      got = e.line();
    }
    check(got == line, fmt("%s line %zu (want %zu)", file, got, line));
  }
  IngestReport rep;
  PreprocessOptions o;
  o.target_frames = 8;
  auto ds = ingest_ntu_directory(dir + "/ntu", o, SplitRule::cross_subject, 60, false, &rep);
  check(ds.size() == 3 && rep.skipped.empty() && ds.manifest.samples[2].split == Split::test, "directory ingest");
  bool strict_threw = false;
  try {
    ingest_ntu_directory(dir + "/malformed", {}, SplitRule::random, 60, true);
  } catch (const FormatError&) {
    strict_threw = true;
  }
  check(strict_threw, "strict ingest of malformed directory");
  std::string detail = "3 well-formed fixtures, 4 malformed fixtures with line numbers, directory ingest";
  for (const auto& b : bad) detail += "; FAILED " + b;
  return {bad.empty(), detail};
}

// 9 ------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict determinism() {
  const fs::path dir = fs::temp_directory_path() / ("sttr_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto train = [&](const std::string& name) {
    const std::string cmd = std::string("'") + STTR_CLI +
                            "' train --stream s-tr --epochs 3 --synth-clips-per-class 10 --synth-frames 16 "
                            "--deterministic --seed 5 --out '" + (dir / name).string() + "' >/dev/null 2>&1";
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) && WEXITSTATUS(raw) == 0;
  };
  const bool ran = train("a") && train("b");
  const auto a = slurp(dir / "a" / "metrics.jsonl"), b = slurp(dir / "b" / "metrics.jsonl");
  fs::remove_all(dir);
  const bool ok = ran && !a.empty() && a == b;
  return {ok, fmt("two CLI runs with --deterministic --seed 5: metrics.jsonl %zu bytes, %s", a.size(),
                  !ran ? "a run failed" : (a == b ? "byte-identical" : "DIFFER"))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient suite", gradient_suite},
      {"attention oracle", attention_oracle},
      {"equivariance", equivariance},
      {"parameter accounting", parameter_accounting},
      {"learning-rate schedule", schedule},
      {"desk-scale learning", desk_learning},
      {"two-stream fusion", fusion},
      {"NTU ingestion", ingestion},
      {"deterministic training", determinism}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(n)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("criterion %d %s: %s | %s\n", n, criteria[i].first, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
