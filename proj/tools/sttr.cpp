// sttr: command-line front end for the ST-TR engine.
//
// Exit status: 0 success, 1 runtime failure, 2 usage error. Failures print a
// single line "error: <category>: <message>" on stderr.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sttr/sttr.hpp"

namespace fs = std::filesystem;
using namespace sttr;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string run_root() {
  const char* env = std::getenv("STTR_RUN_ROOT");
  return env && *env ? env : "runs";
}

std::vector<std::size_t> parse_list(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  for (std::string tok; std::getline(ss, tok, ',');) {
    if (tok.empty()) continue;
    try {
      std::size_t used = 0;
      const auto v = std::stoul(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw UsageError(std::string(what) + ": '" + tok + "' is not a non-negative integer");
    }
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
}

// ---------------------------------------------------------------------------

struct SynthFlags {
  std::uint64_t seed = 7;
  std::size_t classes = 4;
  std::size_t clips_per_class = 50;
  std::size_t frames = 32;
  double noise = 0.02;
  double test_fraction = 0.2;

  void add(CLI::App* app, const std::string& prefix) {
    app->add_option("--" + prefix + "seed", seed, "Synthetic data seed")->capture_default_str();
    app->add_option("--" + prefix + "classes", classes, "Synthetic class count")->capture_default_str();
    app->add_option("--" + prefix + "clips-per-class", clips_per_class, "Clips per class")->capture_default_str();
    app->add_option("--" + prefix + "frames", frames, "Frames per clip")->capture_default_str();
    app->add_option("--" + prefix + "noise", noise, "Gaussian coordinate noise (meters)")->capture_default_str();
    app->add_option("--" + prefix + "test-fraction", test_fraction, "Held-out fraction per class")
        ->capture_default_str();
  }

  SynthOptions options() const {
    SynthOptions o;
    o.seed = seed;
    o.num_classes = classes;
    o.clips_per_class = clips_per_class;
    o.frames = frames;
    o.noise = noise;
    o.test_fraction = test_fraction;
    return o;
  }
};

/// "synth" or the path of a packed dataset.
Dataset load_data(const std::string& spec, const SynthFlags& synth) {
  if (spec == "synth") return synth_generate(synth.options());
  if (!fs::exists(spec)) throw UsageError("data file not found: " + spec);
  return load_packed(spec);
}

CLI::Validator synth_or_file() {
  return CLI::Validator(
      [](std::string& s) -> std::string {
        if (s == "synth" || fs::is_regular_file(s)) return {};
        return "expected 'synth' or an existing packed dataset, got " + s;
      },
      "synth|FILE");
}

// ---------------------------------------------------------------------------

struct TrainFlags {
  std::string stream = "s-tr";
  bool bones = false;
  std::string data = "synth";
  SynthFlags synth;
  std::string widths = "8,8,8,8,16,16,16,32,32";
  std::size_t heads = 2;
  std::size_t kernel = 9;
  double drop_rate = 0.0;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double lr = 0.01;  // attention logits saturate at 0.1 on the desk task
  std::string lr_drops = "30,40";
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 7;
  bool deterministic = false;
  std::string out;
};

int cmd_train(const TrainFlags& f, const std::string& resolved_config) {
  const Stream stream = parse_stream(f.stream);
  auto ds = load_data(f.data, f.synth);
  if (ds.size() == 0) throw ShapeError("dataset is empty");
  const auto graph = default_graph(ds.joints);
  if (f.bones) {
    if (ds.channels != 3) throw ShapeError("--bones needs a 3-channel joint dataset");
    ds = ds.with_bones(graph);
  } else if (ds.channels != 3) {
    throw ShapeError("joint-only training needs a 3-channel dataset, got " + std::to_string(ds.channels));
  }
  auto cfg = NetworkConfig::make(stream, ds.manifest.num_classes, f.bones, parse_list(f.widths, "--widths"), f.heads,
                                 f.kernel, ds.joints, f.drop_rate);
  TrainConfig tc;
  tc.epochs = f.epochs;
  tc.batch_size = f.batch_size;
  tc.base_lr = f.lr;
  tc.lr_drop_epochs = parse_list(f.lr_drops, "--lr-drops");
  tc.momentum = f.momentum;
  tc.weight_decay = f.weight_decay;
  tc.seed = f.seed;

  const fs::path out = f.out.empty() ? fs::path(run_root()) / (f.stream + (f.bones ? "-bones" : "") + "-seed" +
                                                               std::to_string(f.seed))
                                     : fs::path(f.out);
  fs::create_directories(out);
  write_text(out / "config.toml", resolved_config);
  write_text(out / "network.json", to_json(cfg).dump(2) + "\n");

  auto net = Network<float>::init(cfg, graph, f.seed);
  FitOptions fo;
  fo.metrics_path = (out / "metrics.jsonl").string();
  fo.deterministic = f.deterministic;
  fo.on_epoch = [](const EpochMetrics& m) {
    std::fprintf(stderr, "epoch %zu %s loss %.4f acc %.4f lr %g\n", m.epoch, m.split.c_str(), m.loss, m.accuracy,
                 m.lr);
  };
  fit(net, ds, tc, fo);
  save_checkpoint((out / "model.ckpt").string(), net);

  const auto train_ev = evaluate(net, ds, ds.indices(Split::train), tc.batch_size);
  const auto test_ev = evaluate(net, ds, ds.indices(Split::test), tc.batch_size);
  save_scores((out / "test.scores").string(), test_ev.scores);
  nlohmann::ordered_json summary{{"stream", f.stream},
                                 {"bones", f.bones},
                                 {"parameters", net.parameter_count()},
                                 {"train_samples", train_ev.scores.rows.size()},
                                 {"test_samples", test_ev.scores.rows.size()},
                                 {"train_accuracy", train_ev.accuracy},
                                 {"test_accuracy", test_ev.accuracy}};
  write_text(out / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalFlags {
  std::string checkpoint;
  std::string data = "synth";
  SynthFlags synth;
  std::string split = "test";
  std::string scores;
  std::size_t batch_size = 32;
};

int cmd_eval(const EvalFlags& f) {
  auto net = load_checkpoint<float>(f.checkpoint);
  auto ds = load_data(f.data, f.synth);
  if (net.config.use_bones && ds.channels == 3) ds = ds.with_bones(net.graph);
  std::vector<std::size_t> idx;
  if (f.split == "all") {
    for (std::size_t i = 0; i < ds.size(); ++i) idx.push_back(i);
  } else {
    idx = ds.indices(f.split == "train" ? Split::train : Split::test);
  }
  const auto ev = evaluate(net, ds, idx, f.batch_size);
  if (!f.scores.empty()) save_scores(f.scores, ev.scores);
  nlohmann::ordered_json j{{"split", f.split}, {"samples", idx.size()}, {"loss", ev.loss}, {"accuracy", ev.accuracy}};
  std::cout << j.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct FuseFlags {
  std::string a, b, out;
};

int cmd_fuse(const FuseFlags& f) {
  const auto fused = fuse_scores(load_scores(f.a), load_scores(f.b));
  if (!f.out.empty()) {
    std::ofstream out(f.out, std::ios::trunc);
    if (!out) throw FormatError("cannot open " + f.out + " for writing");
    out << "# sttr-predictions 1\n";
    for (std::size_t i = 0; i < fused.table.rows.size(); ++i)
      out << fused.table.rows[i].id << '\t' << fused.table.rows[i].label << '\t' << fused.predictions[i] << '\n';
  }
  nlohmann::ordered_json j{{"samples", fused.table.rows.size()}, {"accuracy", fused.accuracy}};
  std::cout << j.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ParamsFlags {
  std::size_t channels = 256;
  std::size_t joints = 25;
  std::size_t kernel = 9;
  bool network = false;
  std::string stream = "s-tr";
  bool bones = false;
  std::size_t classes = 60;
};

void print_count(const ModuleCount& m) {
  std::printf("%-22s %10zu %8zu %6zu %8zu %10zu\n", m.name.c_str(), m.weights, m.biases, m.norm, m.edge_importance,
              m.total());
}

int cmd_params(const ParamsFlags& f) {
  std::printf("%-22s %10s %8s %6s %8s %10s\n", "module", "weights", "biases", "norm", "masks", "total");
  if (f.network) {
    auto cfg = NetworkConfig::make(parse_stream(f.stream), f.classes, f.bones, default_widths(), 8, f.kernel, f.joints);
    const auto report = count_params(cfg);
    for (const auto& m : report.modules) print_count(m);
    std::printf("%-22s %10s %8s %6s %8s %10zu\n", "total", "", "", "", "", report.total());
    return 0;
  }
  const std::size_t c = f.channels;
  print_count(gcn_count(c, c, f.joints));
  print_count(tcn_count(c, c, f.kernel));
  print_count(attention_count("ssa", c, c));
  print_count(attention_count("tsa", c, c));
  return 0;
}

// ---------------------------------------------------------------------------

struct GradFlags {
  std::size_t seeds = 10;
  double h = 1e-6;
  double tolerance = 1e-5;
  std::string filter;
};

int cmd_gradcheck(const GradFlags& f) {
  bool ok = true;
  std::size_t ran = 0;
  for (const auto& c : gradient_cases()) {
    if (!f.filter.empty() && c.name.find(f.filter) == std::string::npos) continue;
    double worst = 0.0;
    for (std::size_t s = 1; s <= f.seeds; ++s) worst = std::max(worst, c.run(s));
    const bool pass = worst < f.tolerance;
    ok = ok && pass;
    ++ran;
    std::printf("%-20s max_rel_err %.3e %s\n", c.name.c_str(), worst, pass ? "PASS" : "FAIL");
  }
  if (ran == 0) throw UsageError("no gradient case matches '" + f.filter + "'");
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct SynthCmdFlags {
  SynthFlags synth;
  std::string out;
};

int cmd_synth(const SynthCmdFlags& f) {
  const auto ds = synth_generate(f.synth.options());
  save_packed(f.out, ds);
  nlohmann::ordered_json j{{"samples", ds.size()},        {"classes", ds.manifest.num_classes},
                           {"channels", ds.channels},     {"frames", ds.frames},
                           {"joints", ds.joints},         {"bodies", ds.bodies},
                           {"train", ds.indices(Split::train).size()}, {"test", ds.indices(Split::test).size()}};
  std::cout << j.dump() << "\n";
  return 0;
}

struct ParseNtuFlags {
  std::string input, out;
  std::size_t frames = 300;
  std::size_t bodies = 2;
  bool align = false;
  std::string split = "xsub";
  std::size_t classes = 120;
  bool strict = false;
};

int cmd_parse_ntu(const ParseNtuFlags& f) {
  static const std::map<std::string, SplitRule> rules{{"xsub", SplitRule::cross_subject},
                                                      {"xview", SplitRule::cross_view},
                                                      {"xset", SplitRule::cross_setup},
                                                      {"random", SplitRule::random}};
  PreprocessOptions opt;
  opt.target_frames = f.frames;
  opt.max_bodies = f.bodies;
  opt.align_axes = f.align;
  IngestReport report;
  const auto ds = ingest_ntu_directory(f.input, opt, rules.at(f.split), f.classes, f.strict, &report);
  if (ds.size() == 0) throw FormatError("no usable .skeleton files in " + f.input);
  save_packed(f.out, ds);
  for (const auto& s : report.skipped) std::fprintf(stderr, "skipped: %s\n", s.c_str());
  nlohmann::ordered_json j{{"parsed", report.parsed}, {"skipped", report.skipped.size()},
                           {"train", ds.indices(Split::train).size()}, {"test", ds.indices(Split::test).size()}};
  std::cout << j.dump() << "\n";
  return 0;
}

/// Lines of a rendered config that belong to one subcommand.
std::string section(const std::string& config, const std::string& prefix) {
  std::stringstream in(config);
  std::string out;
  for (std::string line; std::getline(in, line);)
    if (line.rfind(prefix, 0) == 0) out += line + "\n";
  return out;
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

int fail(const char* category, const std::string& message, int status) {
  std::fprintf(stderr, "error: %s: %s\n", category, one_line(message).c_str());
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ST-TR skeleton action recognition engine"};
  app.footer("Environment:\n  STTR_RUN_ROOT  root directory for train outputs without --out (default: runs)");
  app.set_config("--config", "", "Read option values from a TOML config file; command-line flags take precedence");
  app.require_subcommand(1);
  app.allow_config_extras(false);

  SynthCmdFlags synth_f;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic archetype dataset as a packed file");
  synth_f.synth.add(synth, "");
  synth->add_option("--out", synth_f.out, "Output packed dataset")->required();

  ParseNtuFlags ntu_f;
  auto* ntu = app.add_subcommand("parse-ntu", "Ingest a directory of NTU .skeleton files into a packed dataset");
  ntu->add_option("--input", ntu_f.input, "Directory containing .skeleton files")->required()->check(CLI::ExistingDirectory);
  ntu->add_option("--out", ntu_f.out, "Output packed dataset")->required();
  ntu->add_option("--frames", ntu_f.frames, "Target frames per clip")->capture_default_str();
  ntu->add_option("--bodies", ntu_f.bodies, "Bodies kept per clip")->capture_default_str();
  ntu->add_flag("--align", ntu_f.align, "Rotate so the spine is +z and the shoulders +x");
  ntu->add_option("--split", ntu_f.split, "Split rule")
      ->check(CLI::IsMember({"xsub", "xview", "xset", "random"}))
      ->capture_default_str();
  ntu->add_option("--classes", ntu_f.classes, "Number of action classes")->capture_default_str();
  ntu->add_flag("--strict", ntu_f.strict, "Fail on the first unreadable file instead of skipping it");

  TrainFlags train_f;
  auto* train = app.add_subcommand("train", "Train one stream and write metrics, checkpoint and held-out scores");
  train->add_option("--stream", train_f.stream, "Stream")->check(CLI::IsMember({"s-tr", "t-tr"}))->capture_default_str();
  train->add_flag("--bones", train_f.bones, "Append bone channels (6 inputs, doubled widths)");
  train->add_option("--data", train_f.data, "'synth' or a packed dataset file")->check(synth_or_file())->capture_default_str();
  train_f.synth.add(train, "synth-");
  train->add_option("--widths", train_f.widths, "Comma-separated layer widths (first three layers are plain)")
      ->capture_default_str();
  train->add_option("--heads", train_f.heads, "Attention heads")->capture_default_str();
  train->add_option("--kernel", train_f.kernel, "Temporal kernel size (odd)")->capture_default_str();
  train->add_option("--drop-rate", train_f.drop_rate, "DropAttention rate")->capture_default_str();
  train->add_option("--epochs", train_f.epochs, "Epochs")->capture_default_str();
  train->add_option("--batch-size", train_f.batch_size, "Batch size")->capture_default_str();
  train->add_option("--lr", train_f.lr, "Base learning rate")->capture_default_str();
  train->add_option("--lr-drops", train_f.lr_drops, "Comma-separated epochs at which lr is divided by 10")
      ->capture_default_str();
  train->add_option("--momentum", train_f.momentum, "SGD momentum")->capture_default_str();
  train->add_option("--weight-decay", train_f.weight_decay, "L2 weight decay")->capture_default_str();
  train->add_option("--seed", train_f.seed, "Initialization and shuffling seed")->capture_default_str();
  train->add_flag("--deterministic", train_f.deterministic, "Record zero wall-clock time so metrics files are byte-identical");
  train->add_option("--out", train_f.out, "Run directory (default: $STTR_RUN_ROOT/<stream>[-bones]-seed<seed>)");

  EvalFlags eval_f;
  auto* eval = app.add_subcommand("eval", "Score a dataset split with a checkpoint");
  eval->add_option("--checkpoint", eval_f.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_f.data, "'synth' or a packed dataset file")->check(synth_or_file())->capture_default_str();
  eval_f.synth.add(eval, "synth-");
  eval->add_option("--split", eval_f.split, "Split to score")
      ->check(CLI::IsMember({"train", "test", "all"}))
      ->capture_default_str();
  eval->add_option("--scores", eval_f.scores, "Write the score table here");
  eval->add_option("--batch-size", eval_f.batch_size, "Batch size")->capture_default_str();

  FuseFlags fuse_f;
  auto* fuse = app.add_subcommand("fuse", "Sum two streams' score tables and report fused accuracy");
  fuse->add_option("a", fuse_f.a, "First score table")->required()->check(CLI::ExistingFile);
  fuse->add_option("b", fuse_f.b, "Second score table")->required()->check(CLI::ExistingFile);
  fuse->add_option("--out", fuse_f.out, "Write fused predictions (id, label, prediction) here");

  ParamsFlags params_f;
  auto* params = app.add_subcommand("params", "Itemized parameter counts");
  params->add_option("--channels", params_f.channels, "C_in = C_out for the per-module table")->capture_default_str();
  params->add_option("--joints", params_f.joints, "Joints")->capture_default_str();
  params->add_option("--kernel", params_f.kernel, "Temporal kernel size")->capture_default_str();
  params->add_flag("--network", params_f.network, "Itemize the full default network instead");
  params->add_option("--stream", params_f.stream, "Stream for --network")
      ->check(CLI::IsMember({"s-tr", "t-tr"}))
      ->capture_default_str();
  params->add_flag("--bones", params_f.bones, "Bone variant for --network");
  params->add_option("--classes", params_f.classes, "Classes for --network")->capture_default_str();

  GradFlags grad_f;
  auto* grad = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  grad->add_option("--seeds", grad_f.seeds, "Random instances per case")->capture_default_str();
  grad->add_option("--step", grad_f.h, "Central-difference step")->capture_default_str();
  grad->add_option("--tolerance", grad_f.tolerance, "Maximum relative error")->capture_default_str();
  grad->add_option("--filter", grad_f.filter, "Only cases whose name contains this text");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*synth) return cmd_synth(synth_f);
    if (*ntu) return cmd_parse_ntu(ntu_f);
    if (*train) return cmd_train(train_f, section(app.config_to_str(true, false), "train."));
    if (*eval) return cmd_eval(eval_f);
    if (*fuse) return cmd_fuse(fuse_f);
    if (*params) return cmd_params(params_f);
    if (*grad) return cmd_gradcheck(grad_f);
  } catch (const UsageError& e) {
    return fail("usage", e.what(), 2);
  } catch (const ParseError& e) {
    return fail("parse", e.what(), 1);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), 1);
  } catch (const FormatError& e) {
    return fail("format", e.what(), 1);
  } catch (const ShapeError& e) {
    return fail("invalid", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
