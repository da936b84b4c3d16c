#pragma once

// Per-sample class probabilities emitted by one stream, and two-stream fusion.
//
// File format: a header line "# sttr-scores 1", then one record per line:
//   sample_id <TAB> label <TAB> p_0,p_1,...,p_{K-1}
// with probabilities printed to 8 significant digits.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sttr/errors.hpp"

namespace sttr {

inline constexpr const char* kScoreHeader = "# sttr-scores 1";

struct ScoreRow {
  std::string id;
  int label = 0;
  std::vector<double> scores;
};

struct ScoreTable {
  std::vector<ScoreRow> rows;

  std::size_t num_classes() const { return rows.empty() ? 0 : rows.front().scores.size(); }
};

/// Index of the largest entry; ties go to the lowest index.
inline int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline double accuracy(const ScoreTable& t) {
  if (t.rows.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& r : t.rows) hit += argmax(r.scores) == r.label;
  return static_cast<double>(hit) / static_cast<double>(t.rows.size());
}

inline std::string format_g8(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.8g", v);
  return buf;
}

inline void write_scores(std::ostream& out, const ScoreTable& t) {
  out << kScoreHeader << '\n';
  for (const auto& r : t.rows) {
    if (r.id.find_first_of("\t\n") != std::string::npos) throw FormatError("sample id contains a tab or newline");
    out << r.id << '\t' << r.label << '\t';
    for (std::size_t k = 0; k < r.scores.size(); ++k) out << (k ? "," : "") << format_g8(r.scores[k]);
    out << '\n';
  }
}

inline ScoreTable read_scores(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kScoreHeader) throw FormatError("not a score table (missing header)");
  ScoreTable t;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos) throw FormatError("score table line " + std::to_string(line_no) + ": expected 3 fields");
    ScoreRow r;
    r.id = line.substr(0, tab1);
    try {
      r.label = std::stoi(line.substr(tab1 + 1, tab2 - tab1 - 1));
      std::stringstream ss(line.substr(tab2 + 1));
      for (std::string tok; std::getline(ss, tok, ',');) r.scores.push_back(std::stod(tok));
    } catch (const std::logic_error&) {
      throw FormatError("score table line " + std::to_string(line_no) + ": non-numeric field");
    }
    if (r.scores.empty() || (!t.rows.empty() && r.scores.size() != t.num_classes()))
      throw FormatError("score table line " + std::to_string(line_no) + ": inconsistent class count");
    t.rows.push_back(std::move(r));
  }
  return t;
}

inline void save_scores(const std::string& path, const ScoreTable& t) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write_scores(out, t);
}

inline ScoreTable load_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  return read_scores(in);
}

struct FusedScores {
  ScoreTable table;  // element-wise sums, rows in the order of the first table
  std::vector<int> predictions;
  double accuracy = 0.0;
};

/// Sums the two tables' probability vectors per sample; the prediction is the
/// argmax of the sum.
inline FusedScores fuse_scores(const ScoreTable& a, const ScoreTable& b) {
  std::unordered_map<std::string, const ScoreRow*> by_id;
  for (const auto& r : b.rows) by_id.emplace(r.id, &r);
  std::vector<std::string> missing;
  for (const auto& r : a.rows)
    if (!by_id.count(r.id)) missing.push_back(r.id + " (absent from second table)");
  if (b.rows.size() != a.rows.size() || !missing.empty()) {
    std::unordered_map<std::string, bool> in_a;
    for (const auto& r : a.rows) in_a.emplace(r.id, true);
    for (const auto& r : b.rows)
      if (!in_a.count(r.id)) missing.push_back(r.id + " (absent from first table)");
  }
  if (!missing.empty()) {
    std::string msg = "fuse_scores: sample ids differ:";
    for (const auto& m : missing) msg += " " + m;
    throw ShapeError(msg);
  }
  FusedScores out;
  std::size_t hit = 0;
  for (const auto& r : a.rows) {
    const ScoreRow& s = *by_id.at(r.id);
    if (s.scores.size() != r.scores.size()) throw ShapeError("fuse_scores: class counts differ for " + r.id);
    if (s.label != r.label) throw ShapeError("fuse_scores: labels differ for " + r.id);
    ScoreRow f{r.id, r.label, r.scores};
    for (std::size_t k = 0; k < f.scores.size(); ++k) f.scores[k] += s.scores[k];
    const int pred = argmax(f.scores);
    out.predictions.push_back(pred);
    hit += pred == r.label;
    out.table.rows.push_back(std::move(f));
  }
  out.accuracy = a.rows.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(a.rows.size());
  return out;
}

}  // namespace sttr
