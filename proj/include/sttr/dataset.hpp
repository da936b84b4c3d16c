#pragma once

// In-memory clip collections and the packed binary container.
//
// Packed layout, little-endian throughout:
//
//   "STTR1"                        5-byte magic
//   u8   split rule                0 random, 1 x-sub, 2 x-view, 3 x-set
//   u32  N, C, T, V, M             clip dimensions
//   u32  num_classes
//   N records:
//     i32 label, i32 subject, i32 setup, i32 camera
//     u8  split                    0 train, 1 test
//     u32 valid_frames
//     u32 id length, id bytes (UTF-8, no terminator)
//   N*C*T*V*M f32                  sample-major, each sample (C, T, V, M) row-major

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "sttr/errors.hpp"
#include "sttr/skeleton.hpp"

namespace sttr {

enum class SplitRule : std::uint8_t { random = 0, cross_subject = 1, cross_view = 2, cross_setup = 3 };
enum class Split : std::uint8_t { train = 0, test = 1 };

struct SampleInfo {
  std::string id;
  int label = 0;
  int subject = 0;
  int setup = 0;
  int camera = 0;
  Split split = Split::train;
  std::size_t valid_frames = 0;
};

struct DatasetManifest {
  std::vector<SampleInfo> samples;
  SplitRule rule = SplitRule::random;
  std::size_t num_classes = 0;
};

/// Clips of identical shape stored contiguously.
struct Dataset {
  DatasetManifest manifest;
  std::size_t channels = 0, frames = 0, joints = 0, bodies = 0;
  std::vector<float> data;

  std::size_t size() const { return manifest.samples.size(); }
  std::size_t clip_size() const { return channels * frames * joints * bodies; }

  const float* clip_data(std::size_t i) const { return data.data() + i * clip_size(); }

  SkeletonClip clip(std::size_t i) const {
    SkeletonClip c(channels, frames, joints, bodies);
    std::copy_n(clip_data(i), clip_size(), c.data.begin());
    c.label = manifest.samples[i].label;
    c.valid_frames = manifest.samples[i].valid_frames;
    return c;
  }

  void append(const SkeletonClip& c, SampleInfo info) {
    if (manifest.samples.empty() && data.empty()) {
      channels = c.channels;
      frames = c.frames;
      joints = c.joints;
      bodies = c.bodies;
    } else if (c.channels != channels || c.frames != frames || c.joints != joints || c.bodies != bodies) {
      throw ShapeError("Dataset::append: clip shape differs from dataset");
    }
    info.label = c.label;
    info.valid_frames = c.valid_frames;
    data.insert(data.end(), c.data.begin(), c.data.end());
    manifest.samples.push_back(std::move(info));
  }

  std::vector<std::size_t> indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (manifest.samples[i].split == split) out.push_back(i);
    return out;
  }

  /// Same samples with bone channels appended.
  Dataset with_bones(const SkeletonGraph& graph) const {
    Dataset out;
    out.manifest = manifest;
    out.data.reserve(data.size() * 2);
    for (std::size_t i = 0; i < size(); ++i) {
      auto b = compute_bones(clip(i), graph);
      out.channels = b.channels;
      out.frames = b.frames;
      out.joints = b.joints;
      out.bodies = b.bodies;
      out.data.insert(out.data.end(), b.data.begin(), b.data.end());
    }
    return out;
  }
};

namespace detail {

inline constexpr std::array<char, 5> kPackedMagic = {'S', 'T', 'T', 'R', '1'};

class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    u32(static_cast<std::uint32_t>(bits));
    u32(static_cast<std::uint32_t>(bits >> 32));
  }
  void bytes(const std::string& s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }

 private:
  std::ostream& out_;
};

class LeReader {
 public:
  explicit LeReader(std::istream& in) : in_(in) {}
  std::uint8_t u8() {
    const int c = in_.get();
    if (c == std::char_traits<char>::eof()) throw FormatError("unexpected end of packed data");
    return static_cast<std::uint8_t>(c);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() {
    const std::uint64_t lo = u32();
    return std::bit_cast<double>(lo | (std::uint64_t{u32()} << 32));
  }
  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("unexpected end of packed data");
    return s;
  }

 private:
  std::istream& in_;
};

}  // namespace detail

inline void write_packed(std::ostream& out, const Dataset& ds) {
  detail::LeWriter w(out);
  out.write(detail::kPackedMagic.data(), detail::kPackedMagic.size());
  w.u8(static_cast<std::uint8_t>(ds.manifest.rule));
  for (auto d : {ds.size(), ds.channels, ds.frames, ds.joints, ds.bodies, ds.manifest.num_classes})
    w.u32(static_cast<std::uint32_t>(d));
  for (const auto& s : ds.manifest.samples) {
    w.i32(s.label);
    w.i32(s.subject);
    w.i32(s.setup);
    w.i32(s.camera);
    w.u8(static_cast<std::uint8_t>(s.split));
    w.u32(static_cast<std::uint32_t>(s.valid_frames));
    w.u32(static_cast<std::uint32_t>(s.id.size()));
    w.bytes(s.id);
  }
  for (float v : ds.data) w.f32(v);
  if (!out) throw FormatError("write_packed: stream failure");
}

inline Dataset read_packed(std::istream& in) {
  std::array<char, 5> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 5 || magic != detail::kPackedMagic) throw FormatError("not a packed clip file (bad magic)");
  detail::LeReader r(in);
  Dataset ds;
  const auto rule = r.u8();
  if (rule > 3) throw FormatError("packed clip file: unknown split rule");
  ds.manifest.rule = static_cast<SplitRule>(rule);
  const std::size_t n = r.u32();
  ds.channels = r.u32();
  ds.frames = r.u32();
  ds.joints = r.u32();
  ds.bodies = r.u32();
  ds.manifest.num_classes = r.u32();
  ds.manifest.samples.resize(n);
  for (auto& s : ds.manifest.samples) {
    s.label = r.i32();
    s.subject = r.i32();
    s.setup = r.i32();
    s.camera = r.i32();
    const auto split = r.u8();
    if (split > 1) throw FormatError("packed clip file: bad split tag");
    s.split = static_cast<Split>(split);
    s.valid_frames = r.u32();
    s.id = r.bytes(r.u32());
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= ds.manifest.num_classes)
      throw FormatError("packed clip file: label outside [0, num_classes)");
  }
  ds.data.resize(n * ds.clip_size());
  for (auto& v : ds.data) v = r.f32();
  return ds;
}

inline void save_packed(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write_packed(out, ds);
}

inline Dataset load_packed(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_packed(in);
}

}  // namespace sttr
