#pragma once

// Directory of NTU `.skeleton` files -> packed Dataset.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sttr/dataset.hpp"
#include "sttr/errors.hpp"
#include "sttr/ntu.hpp"

namespace sttr {

/// Train/test assignment of one named sample. `ordinal` is the sample's
/// position in sorted file order and only matters for the random rule, which
/// holds out every fifth sample.
inline Split ntu_split(SplitRule rule, const NtuSampleName& name, std::size_t ordinal) {
  switch (rule) {
    case SplitRule::cross_subject:
      return ntu_xsub_train(name.performer) ? Split::train : Split::test;
    case SplitRule::cross_view:
      return name.camera == 1 ? Split::test : Split::train;
    case SplitRule::cross_setup:
      return name.setup % 2 == 0 ? Split::train : Split::test;
    case SplitRule::random:
      break;
  }
  return ordinal % 5 == 4 ? Split::test : Split::train;
}

struct IngestReport {
  std::size_t parsed = 0;
  std::vector<std::string> skipped;  // "file: reason"
};

/// Parses every `*.skeleton` file under `dir` (sorted by name, so the result
/// does not depend on directory order). Files whose names lack the
/// SxxxCxxxPxxxRxxxAxxx pattern, or that fail to parse, are skipped and
/// reported unless `strict` is set, in which case the first failure throws.
inline Dataset ingest_ntu_directory(const std::string& dir, const PreprocessOptions& opt, SplitRule rule,
                                    std::size_t num_classes, bool strict = false, IngestReport* report = nullptr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw FormatError("not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".skeleton") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  Dataset ds;
  ds.manifest.rule = rule;
  ds.manifest.num_classes = num_classes;
  IngestReport local;
  auto& rep = report ? *report : local;
  auto skip = [&](const fs::path& p, const std::string& why) {
    if (strict) throw FormatError(p.filename().string() + ": " + why);
    rep.skipped.push_back(p.filename().string() + ": " + why);
  };
  for (const auto& path : files) {
    const auto stem = path.stem().string();
    const auto name = parse_ntu_name(stem);
    if (!name) {
      skip(path, "file name does not encode setup/camera/performer/action");
      continue;
    }
    if (name->action < 1 || static_cast<std::size_t>(name->action) > num_classes) {
      skip(path, "action " + std::to_string(name->action) + " outside 1.." + std::to_string(num_classes));
      continue;
    }
    std::ifstream in(path);
    try {
      auto clip = preprocess_clip(parse_ntu_skeleton(in), opt);
      clip.label = name->action - 1;
      SampleInfo info;
      info.id = stem;
      info.subject = name->performer;
      info.setup = name->setup;
      info.camera = name->camera;
      info.split = ntu_split(rule, *name, rep.parsed);
      ds.append(clip, std::move(info));
      ++rep.parsed;
    } catch (const ParseError& e) {
      skip(path, e.what());
    } catch (const ShapeError& e) {
      skip(path, e.what());
    }
  }
  return ds;
}

}  // namespace sttr
