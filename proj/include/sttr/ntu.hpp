#pragma once

// NTU RGB+D `.skeleton` ingestion and clip preprocessing.
//
// File layout: a frame-count line; per frame a body-count line; per body a
// 10-value metadata line (body id first), a joint-count line (25), then 25
// joint lines of 12 reals of which the first three are x, y, z in meters.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "sttr/errors.hpp"
#include "sttr/skeleton.hpp"

namespace sttr {

using Joint3 = std::array<double, 3>;

struct RawBody {
  std::string id;
  std::array<Joint3, kNtuJoints> joints{};
};

struct RawFrame {
  std::vector<RawBody> bodies;
};

struct RawSkeleton {
  std::vector<RawFrame> frames;
};

namespace detail {

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  /// Next non-blank line split into tokens; throws at end of input.
  std::vector<std::string> next(const std::string& expecting) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      std::istringstream ss(line);
      std::vector<std::string> tokens;
      for (std::string tok; ss >> tok;) tokens.push_back(tok);
      if (!tokens.empty()) return tokens;
    }
    throw ParseError(line_no_ + 1, "unexpected end of file, expected " + expecting);
  }

  std::size_t line() const { return line_no_; }

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
};

inline double parse_real(const std::string& tok, std::size_t line) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw ParseError(line, "non-numeric token '" + tok + "'");
  }
  return v;
}

inline std::size_t parse_count(const std::vector<std::string>& tokens, std::size_t line, const char* what) {
  if (tokens.size() != 1) throw ParseError(line, std::string("expected a single ") + what);
  std::size_t v = 0;
  const auto& tok = tokens[0];
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError(line, std::string("non-numeric token '") + tok + "' for " + what);
  }
  return v;
}

}  // namespace detail

inline RawSkeleton parse_ntu_skeleton(std::istream& in) {
  detail::LineReader reader(in);
  RawSkeleton out;
  const auto frame_count = detail::parse_count(reader.next("frame count"), reader.line(), "frame count");
  out.frames.reserve(frame_count);
  for (std::size_t f = 0; f < frame_count; ++f) {
    const std::string where = "frame " + std::to_string(f + 1) + " of " + std::to_string(frame_count);
    RawFrame frame;
    const auto body_count = detail::parse_count(reader.next("body count for " + where), reader.line(), "body count");
    for (std::size_t b = 0; b < body_count; ++b) {
      RawBody body;
      auto meta = reader.next("body metadata in " + where);
      if (meta.size() != 10) {
        throw ParseError(reader.line(), "body metadata has " + std::to_string(meta.size()) + " values, expected 10");
      }
      // The id is an opaque tracking token; the nine tracking fields must be numeric.
      for (std::size_t k = 1; k < meta.size(); ++k) detail::parse_real(meta[k], reader.line());
      body.id = meta[0];
      const auto joints = detail::parse_count(reader.next("joint count in " + where), reader.line(), "joint count");
      if (joints != kNtuJoints) {
        throw ParseError(reader.line(), "joint count " + std::to_string(joints) + ", expected 25");
      }
      for (std::size_t j = 0; j < kNtuJoints; ++j) {
        auto vals = reader.next("joint " + std::to_string(j + 1) + " in " + where);
        if (vals.size() != 12) {
          throw ParseError(reader.line(), "joint line has " + std::to_string(vals.size()) + " values, expected 12");
        }
        for (std::size_t k = 0; k < vals.size(); ++k) {
          const double v = detail::parse_real(vals[k], reader.line());
          if (k < 3) body.joints[j][k] = v;
        }
      }
      frame.bodies.push_back(std::move(body));
    }
    out.frames.push_back(std::move(frame));
  }
  return out;
}

struct PreprocessOptions {
  std::size_t target_frames = 300;
  std::size_t max_bodies = 2;
  /// Rotate so body 0's hip->spine vector is +z and its left->right shoulder
  /// vector is +x. Off by default.
  bool align_axes = false;
};

namespace detail {

using Mat3 = std::array<std::array<double, 3>, 3>;

inline Mat3 rotation_between(Joint3 from, Joint3 to) {
  auto norm = [](Joint3 v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); };
  Mat3 r{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  const double nf = norm(from), nt = norm(to);
  if (nf < 1e-12 || nt < 1e-12) return r;
  for (auto& v : from) v /= nf;
  for (auto& v : to) v /= nt;
  const Joint3 axis{from[1] * to[2] - from[2] * to[1], from[2] * to[0] - from[0] * to[2],
                    from[0] * to[1] - from[1] * to[0]};
  const double s = norm(axis);
  const double c = from[0] * to[0] + from[1] * to[1] + from[2] * to[2];
  if (s < 1e-12) {
    if (c > 0) return r;
    // Opposite vectors: half turn about any perpendicular axis.
    Joint3 p = std::abs(from[0]) < 0.9 ? Joint3{1, 0, 0} : Joint3{0, 1, 0};
    Joint3 k{from[1] * p[2] - from[2] * p[1], from[2] * p[0] - from[0] * p[2], from[0] * p[1] - from[1] * p[0]};
    const double nk = norm(k);
    for (auto& v : k) v /= nk;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r[i][j] = 2 * k[i] * k[j] - (i == j ? 1.0 : 0.0);
    return r;
  }
  const Joint3 k{axis[0] / s, axis[1] / s, axis[2] / s};
  const Mat3 K{{{0, -k[2], k[1]}, {k[2], 0, -k[0]}, {-k[1], k[0], 0}}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double kk = 0.0;
      for (int q = 0; q < 3; ++q) kk += K[i][q] * K[q][j];
      r[i][j] = (i == j ? 1.0 : 0.0) + s * K[i][j] + (1 - c) * kk;
    }
  return r;
}

inline Joint3 apply(const Mat3& r, const Joint3& v) {
  return {r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2], r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
          r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2]};
}

}  // namespace detail

/// Sum over joints and coordinates of the variance over the frames in which
/// the body appears.
inline double motion_energy(const std::vector<const RawBody*>& track) {
  double energy = 0.0;
  std::size_t n = 0;
  for (const auto* b : track) n += b != nullptr;
  if (n < 2) return 0.0;
  for (std::size_t j = 0; j < kNtuJoints; ++j)
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0.0, ss = 0.0;
      for (const auto* b : track) {
        if (!b) continue;
        s += b->joints[j][c];
      }
      const double m = s / static_cast<double>(n);
      for (const auto* b : track) {
        if (!b) continue;
        ss += (b->joints[j][c] - m) * (b->joints[j][c] - m);
      }
      energy += ss / static_cast<double>(n);
    }
  return energy;
}

/// Builds a (3, target_frames, 25, max_bodies) clip:
///   1. frames without bodies are dropped;
///   2. bodies (tracked by id) are ranked by motion energy, top max_bodies kept;
///   3. everything is translated so body 0's center joint in its first frame is the origin;
///   4. frames beyond target_frames are cut, shorter sequences are loop-padded.
/// Absent bodies stay zero.
inline SkeletonClip preprocess_clip(const RawSkeleton& raw, const PreprocessOptions& opt = {}) {
  if (opt.target_frames == 0 || opt.max_bodies == 0) throw ShapeError("preprocess_clip: empty target shape");
  std::vector<const RawFrame*> frames;
  for (const auto& f : raw.frames)
    if (!f.bodies.empty()) frames.push_back(&f);
  if (frames.empty()) throw ShapeError("preprocess_clip: all frames are empty");

  std::vector<std::string> order;
  std::map<std::string, std::vector<const RawBody*>> tracks;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (const auto& b : frames[f]->bodies) {
      auto [it, inserted] = tracks.try_emplace(b.id, frames.size(), nullptr);
      if (inserted) order.push_back(b.id);
      it->second[f] = &b;
    }
  }
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < order.size(); ++i) ranked.emplace_back(motion_energy(tracks[order[i]]), i);
  std::stable_sort(ranked.begin(), ranked.end(), [](auto& a, auto& b) { return a.first > b.first; });
  const std::size_t kept = std::min(opt.max_bodies, ranked.size());

  const std::size_t valid = std::min(frames.size(), opt.target_frames);
  SkeletonClip clip(3, opt.target_frames, kNtuJoints, opt.max_bodies);
  clip.valid_frames = valid;

  const auto& lead = tracks[order[ranked[0].second]];
  const RawBody* first = *std::find_if(lead.begin(), lead.end(), [](auto* b) { return b != nullptr; });
  const Joint3 origin = first->joints[kNtuCenter];
  detail::Mat3 rot{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  if (opt.align_axes) {
    const auto& j = first->joints;
    const Joint3 spine{j[1][0] - j[0][0], j[1][1] - j[0][1], j[1][2] - j[0][2]};
    rot = detail::rotation_between(spine, {0, 0, 1});
    const Joint3 shoulders = detail::apply(
        rot, {j[8][0] - j[4][0], j[8][1] - j[4][1], j[8][2] - j[4][2]});
    // Second turn about z only, so the spine stays on +z.
    const auto twist = detail::rotation_between({shoulders[0], shoulders[1], 0.0}, {1, 0, 0});
    detail::Mat3 combined{};
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int q = 0; q < 3; ++q) combined[a][b] += twist[a][q] * rot[q][b];
    rot = combined;
  }

  for (std::size_t m = 0; m < kept; ++m) {
    const auto& track = tracks[order[ranked[m].second]];
    for (std::size_t t = 0; t < valid; ++t) {
      const RawBody* b = track[t];
      if (!b) continue;
      for (std::size_t v = 0; v < kNtuJoints; ++v) {
        Joint3 p{b->joints[v][0] - origin[0], b->joints[v][1] - origin[1], b->joints[v][2] - origin[2]};
        if (opt.align_axes) p = detail::apply(rot, p);
        for (std::size_t c = 0; c < 3; ++c) clip.at(c, t, v, m) = static_cast<float>(p[c]);
      }
    }
  }
  for (std::size_t t = valid; t < opt.target_frames; ++t)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t v = 0; v < kNtuJoints; ++v)
        for (std::size_t m = 0; m < opt.max_bodies; ++m) clip.at(c, t, v, m) = clip.at(c, t % valid, v, m);
  return clip;
}

/// Fields encoded in NTU file names such as S001C002P003R002A013.
struct NtuSampleName {
  int setup = 0;
  int camera = 0;
  int performer = 0;
  int replication = 0;
  int action = 0;  // 1-based
};

inline std::optional<NtuSampleName> parse_ntu_name(const std::string& stem) {
  static const std::regex pattern(R"(S(\d{3})C(\d{3})P(\d{3})R(\d{3})A(\d{3}))");
  std::smatch m;
  if (!std::regex_search(stem, m, pattern)) return std::nullopt;
  return NtuSampleName{std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3]), std::stoi(m[4]), std::stoi(m[5])};
}

/// Cross-subject training performers (NTU-60 list extended by NTU-120).
inline bool ntu_xsub_train(int performer) {
  static constexpr std::array<int, 53> ids = {
      1,  2,  4,  5,  8,  9,  13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34,
      35, 38, 45, 46, 47, 49, 50, 52, 53, 54, 55, 56, 57, 58, 59, 70, 74, 78,
      80, 81, 82, 83, 84, 85, 86, 89, 91, 92, 93, 94, 95, 97, 98, 100, 103};
  return std::find(ids.begin(), ids.end(), performer) != ids.end();
}

}  // namespace sttr
