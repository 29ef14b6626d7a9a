#pragma once

// Atmospheric scattering model I = J t + A (1 - t), transmission from
// depth, haze parameter sampling and a procedural clean/depth scene source.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "gfn/errors.hpp"
#include "gfn/image.hpp"
#include "gfn/rng.hpp"

namespace gfn {

using DepthMap = GrayImage;
using TransmissionMap = GrayImage;

struct HazeParams {
  double atmospheric_light = 0.9;      // A, achromatic
  double scattering_coefficient = 1.0;  // beta
  double noise_sigma = 0.01;

  friend bool operator==(const HazeParams&, const HazeParams&) = default;
};

inline constexpr double kMinAtmosphericLight = 0.8;
inline constexpr double kMaxAtmosphericLight = 1.0;
inline constexpr double kMinBeta = 0.5;
inline constexpr double kMaxBeta = 1.5;
inline constexpr double kDefaultNoiseSigma = 0.01;

inline void validate_depth(const DepthMap& d) {
  if (d.data.size() != static_cast<std::size_t>(d.height) * d.width || d.height < 1 || d.width < 1)
    throw ShapeError("depth map data length mismatch");
  bool any_positive = false;
  for (double v : d.data) {
    if (!(v >= 0.0)) throw ParameterError("depth values must be nonnegative");
    any_positive |= v > 0.0;
  }
  if (!any_positive) throw ParameterError("degenerate depth: all values are zero");
}

/// t = exp(-beta d). With `normalize`, depth is first divided by its maximum.
inline TransmissionMap transmission_from_depth(const DepthMap& depth, double beta, bool normalize) {
  if (!(beta > 0.0)) throw ParameterError("transmission_from_depth: beta must be positive");
  double scale = 1.0;
  if (normalize) {
    const double max_depth = *std::max_element(depth.data.begin(), depth.data.end());
    if (!(max_depth > 0.0)) throw ParameterError("degenerate depth: cannot normalize all-zero depth");
    scale = 1.0 / max_depth;
  }
  TransmissionMap t(depth.height, depth.width);
  for (std::size_t i = 0; i < depth.data.size(); ++i) {
    if (!(depth.data[i] >= 0.0)) throw ParameterError("depth values must be nonnegative");
    t.data[i] = std::exp(-beta * depth.data[i] * scale);
  }
  return t;
}

inline ImageRGB synthesize_hazy(const ImageRGB& clean, const TransmissionMap& t,
                                const HazeParams& params, std::uint64_t seed) {
  if (clean.height != t.height || clean.width != t.width)
    throw ShapeError("synthesize_hazy: clean image and transmission differ in size");
  ImageRGB out(clean.height, clean.width);
  const double a = params.atmospheric_light;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t p = 0; p < clean.pixels(); ++p) {
    const double tp = t.data[p];
    for (int c = 0; c < 3; ++c) {
      double v = clean.data[p * 3 + c] * tp + a * (1.0 - tp);
      if (params.noise_sigma > 0.0) v += params.noise_sigma * noise(rng);
      out.data[p * 3 + c] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

inline HazeParams sample_haze_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> light(kMinAtmosphericLight, kMaxAtmosphericLight);
  std::uniform_real_distribution<double> beta(kMinBeta, kMaxBeta);
  HazeParams p;
  do {
    p.atmospheric_light = light(rng);
  } while (p.atmospheric_light <= kMinAtmosphericLight);
  p.scattering_coefficient = beta(rng);
  p.noise_sigma = kDefaultNoiseSigma;
  return p;
}

struct CleanDepthPair {
  ImageRGB clean;
  DepthMap depth;
};

/// Procedural indoor-like scene: a textured back wall and floor receding in
/// depth, with a handful of nearer boxes and disks in random colors.
inline CleanDepthPair procedural_scene(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  CleanDepthPair s{ImageRGB(height, width), DepthMap(height, width)};
  const double horizon = 0.35 + 0.3 * u(rng);
  double wall[3], floor[3];
  for (int c = 0; c < 3; ++c) {
    wall[c] = 0.35 + 0.5 * u(rng);
    floor[c] = 0.15 + 0.5 * u(rng);
  }
  const double fx = 2.0 + 6.0 * u(rng), fy = 2.0 + 6.0 * u(rng);
  const double phase = 2.0 * std::numbers::pi * u(rng);
  const double far_depth = 6.0 + 4.0 * u(rng);

  for (int y = 0; y < height; ++y) {
    const double v = (y + 0.5) / height;
    for (int x = 0; x < width; ++x) {
      const double h = (x + 0.5) / width;
      const double tex = 0.08 * std::sin(2.0 * std::numbers::pi * (fx * h + fy * v) + phase);
      if (v < horizon) {
        for (int c = 0; c < 3; ++c) s.clean.at(y, x, c) = wall[c] + tex * (c == 0 ? 1.0 : 0.6);
        s.depth.at(y, x) = far_depth * (0.9 + 0.1 * std::abs(h - 0.5) * 2.0);
      } else {
        const double r = (v - horizon) / (1.0 - horizon);  // 0 at horizon, 1 at bottom
        for (int c = 0; c < 3; ++c) s.clean.at(y, x, c) = floor[c] * (0.7 + 0.3 * r) + tex;
        s.depth.at(y, x) = far_depth * (1.0 - 0.85 * r);
      }
    }
  }

  const int objects = 3 + static_cast<int>(u(rng) * 4.0);
  for (int k = 0; k < objects; ++k) {
    double col[3];
    for (double& c : col) c = 0.05 + 0.9 * u(rng);
    const double depth = far_depth * (0.1 + 0.7 * u(rng));
    const double cx = u(rng) * width, cy = (0.2 + 0.8 * u(rng)) * height;
    const double rx = (0.06 + 0.18 * u(rng)) * width, ry = (0.06 + 0.18 * u(rng)) * height;
    const bool disk = u(rng) < 0.5;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        const bool inside = disk ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (!inside || depth >= s.depth.at(y, x)) continue;
        const double shade = 0.85 + 0.15 * (1.0 - std::min(1.0, std::abs(dy)));
        for (int c = 0; c < 3; ++c) s.clean.at(y, x, c) = col[c] * shade;
        s.depth.at(y, x) = depth;
      }
  }
  s.clean.clamp_unit();
  return s;
}

}  // namespace gfn
