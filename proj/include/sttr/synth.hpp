#pragma once

// Seeded synthetic skeleton actions. Each class is a motion archetype applied
// to a fixed rest pose; a clip is archetype(phase) plus Gaussian coordinate
// noise, with the phase drawn per clip.
//
//   class % 5 == 0   static pose (variants raise the right arm)
//   class % 5 == 1   right-arm oscillation
//   class % 5 == 2   global translation along x
//   class % 5 == 3   both hands converge toward their midpoint
//   class % 5 == 4   arms oscillating in anti-phase
//
// Classes >= 5 reuse an archetype with a faster tempo / larger offset.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "sttr/dataset.hpp"
#include "sttr/errors.hpp"
#include "sttr/random.hpp"
#include "sttr/skeleton.hpp"

namespace sttr {

struct SynthOptions {
  std::uint64_t seed = 7;
  std::size_t num_classes = 4;
  std::size_t clips_per_class = 50;
  std::size_t frames = 32;
  std::size_t joints = kNtuJoints;
  double noise = 0.02;          // meters, standard deviation
  double test_fraction = 0.2;   // per class, rounded
};

namespace detail {

struct SynthBody {
  std::vector<std::array<double, 3>> rest;
  std::vector<std::pair<std::size_t, double>> right_arm;  // joint, lever weight
  std::vector<std::pair<std::size_t, double>> left_arm;
  std::vector<std::size_t> right_hand;
  std::vector<std::size_t> left_hand;
};

inline SynthBody synth_body(std::size_t V) {
  SynthBody b;
  if (V == kNtuJoints) {
    // Slight forward lean with the forearms held in front of the body, so
    // depth carries structure and not only noise.
    b.rest = {{0.00, 0.00, 0.00},   {0.00, 0.25, 0.03},   {0.00, 0.50, 0.06},   {0.00, 0.65, 0.10},
              {-0.18, 0.45, 0.04},  {-0.20, 0.20, 0.02},  {-0.22, -0.02, 0.20}, {-0.22, -0.08, 0.26},
              {0.18, 0.45, 0.04},   {0.20, 0.20, 0.02},   {0.22, -0.02, 0.20},  {0.22, -0.08, 0.26},
              {-0.09, -0.02, -0.02}, {-0.10, -0.45, 0.04}, {-0.10, -0.85, -0.04}, {-0.10, -0.90, 0.08},
              {0.09, -0.02, -0.02},  {0.10, -0.45, 0.04},  {0.10, -0.85, -0.04},  {0.10, -0.90, 0.08},
              {0.00, 0.45, 0.05},   {-0.22, -0.14, 0.28}, {-0.19, -0.08, 0.30}, {0.22, -0.14, 0.28},
              {0.19, -0.08, 0.30}};
    b.right_arm = {{9, 0.5}, {10, 1.0}, {11, 1.0}, {23, 1.0}, {24, 1.0}};
    b.left_arm = {{5, 0.5}, {6, 1.0}, {7, 1.0}, {21, 1.0}, {22, 1.0}};
    b.right_hand = {10, 11, 23, 24};
    b.left_hand = {6, 7, 21, 22};
    return b;
  }
  // Generic stand-in: joints on an arc, first and last thirds act as arms.
  for (std::size_t j = 0; j < V; ++j) {
    const double a = std::numbers::pi * static_cast<double>(j) / static_cast<double>(V - 1);
    b.rest.push_back({-0.4 * std::cos(a), 0.4 * std::sin(a), 0.2 * std::sin(2.0 * a)});
  }
  const std::size_t third = std::max<std::size_t>(1, V / 3);
  for (std::size_t k = 0; k < third; ++k) {
    const double w = static_cast<double>(k + 1) / static_cast<double>(third);
    b.right_arm.emplace_back(V - third + k, w);
    b.left_arm.emplace_back(third - 1 - k, w);
  }
  b.right_hand = {V - 1};
  b.left_hand = {0};
  return b;
}

}  // namespace detail

/// Noise-free coordinates of `archetype_class` at frame t for phase `phase`.
inline SkeletonClip synth_archetype(std::size_t archetype_class, double phase, std::size_t frames,
                                    std::size_t joints) {
  if (joints < 2) throw ShapeError("synth: need at least 2 joints");
  const auto body = detail::synth_body(joints);
  const std::size_t kind = archetype_class % 5;
  const double tempo = 1.0 + static_cast<double>(archetype_class / 5);
  const double two_pi = 2.0 * std::numbers::pi;
  SkeletonClip clip(3, frames, joints, 1);
  clip.label = static_cast<int>(archetype_class);
  clip.valid_frames = frames;
  for (std::size_t t = 0; t < frames; ++t) {
    const double tau = static_cast<double>(t) / static_cast<double>(frames);
    auto pose = body.rest;
    switch (kind) {
      case 0:
        for (auto [j, w] : body.right_arm) pose[j][1] += 0.2 * (tempo - 1.0) * w;
        break;
      case 1: {
        const double s = 0.25 * std::sin(two_pi * 2.0 * tempo * tau + phase);
        for (auto [j, w] : body.right_arm) {
          pose[j][1] += s * w;
          pose[j][2] += 0.5 * s * w;
        }
        break;
      }
      case 2: {
        const double x = 0.4 * tempo * tau + 0.1 * phase / two_pi;
        for (auto& p : pose) p[0] += x;
        break;
      }
      case 3: {
        const double speed = tempo * (0.75 + 0.5 * phase / two_pi);
        const double u = std::min(1.0, tau * speed);
        const double s = 0.9 * 0.5 * (1.0 - std::cos(std::numbers::pi * u));
        std::array<double, 3> mid{0, 0, 0};
        for (auto j : body.right_hand)
          for (int c = 0; c < 3; ++c) mid[c] += 0.5 * body.rest[j][c] / static_cast<double>(body.right_hand.size());
        for (auto j : body.left_hand)
          for (int c = 0; c < 3; ++c) mid[c] += 0.5 * body.rest[j][c] / static_cast<double>(body.left_hand.size());
        for (const auto* hand : {&body.right_hand, &body.left_hand})
          for (auto j : *hand)
            for (int c = 0; c < 3; ++c) pose[j][c] += s * (mid[c] - body.rest[j][c]);
        break;
      }
      default: {
        const double s = 0.25 * std::sin(two_pi * 1.5 * tempo * tau + phase);
        for (auto [j, w] : body.right_arm) {
          pose[j][1] += s * w;
          pose[j][2] += 0.5 * s * w;
        }
        for (auto [j, w] : body.left_arm) {
          pose[j][1] -= s * w;
          pose[j][2] -= 0.5 * s * w;
        }
        break;
      }
    }
    for (std::size_t v = 0; v < joints; ++v)
      for (std::size_t c = 0; c < 3; ++c) clip.at(c, t, v, 0) = static_cast<float>(pose[v][c]);
  }
  return clip;
}

/// Class-balanced synthetic dataset, deterministic in `opt.seed`. The
/// manifest marks round(test_fraction * clips_per_class) clips per class as
/// held out.
inline Dataset synth_generate(const SynthOptions& opt) {
  if (opt.joints < 2) throw ShapeError("synth_generate: need at least 2 joints");
  if (opt.num_classes < 2) throw ShapeError("synth_generate: need at least 2 classes");
  if (opt.frames < 1 || opt.clips_per_class < 1) throw ShapeError("synth_generate: empty dataset");
  if (!(opt.test_fraction >= 0.0 && opt.test_fraction < 1.0))
    throw ShapeError("synth_generate: test_fraction must lie in [0, 1)");
  Rng rng(opt.seed);
  Dataset ds;
  ds.manifest.rule = SplitRule::random;
  ds.manifest.num_classes = opt.num_classes;
  const auto held_out = static_cast<std::size_t>(std::lround(opt.test_fraction * static_cast<double>(opt.clips_per_class)));
  for (std::size_t k = 0; k < opt.num_classes; ++k) {
    std::vector<std::size_t> order(opt.clips_per_class);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<bool> is_test(opt.clips_per_class, false);
    for (std::size_t i = 0; i < held_out; ++i) is_test[order[i]] = true;
    for (std::size_t i = 0; i < opt.clips_per_class; ++i) {
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      auto clip = synth_archetype(k, phase, opt.frames, opt.joints);
      if (opt.noise > 0.0)
        for (auto& v : clip.data) v += static_cast<float>(opt.noise * rng.normal());
      SampleInfo info;
      info.id = "synth-c" + std::to_string(k) + "-" + std::to_string(i);
      info.subject = static_cast<int>(i);
      info.split = is_test[i] ? Split::test : Split::train;
      ds.append(clip, std::move(info));
    }
  }
  return ds;
}

}  // namespace sttr
