#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "gfn/errors.hpp"

namespace gfn {

/// Row-major H x W x 3 raster with intensities in [0,1].
struct ImageRGB {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  ImageRGB() = default;
  ImageRGB(int h, int w, double fill = 0.0)
      : height(h), width(w), data(checked_size(h, w), fill) {}

  static std::size_t checked_size(int h, int w) {
    if (h < 1 || w < 1)
      throw ShapeError("image dimensions must be positive, got " + std::to_string(h) + "x" +
                       std::to_string(w));
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3;
  }

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }

  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  bool same_shape(const ImageRGB& o) const { return height == o.height && width == o.width; }

  // Throws if the type invariants do not hold.
  void validate() const {
    if (data.size() != checked_size(height, width)) throw ShapeError("image data length mismatch");
    for (double v : data)
      if (!(v >= 0.0 && v <= 1.0)) throw ParameterError("image value outside [0,1]");
  }

  void clamp_unit() {
    for (double& v : data) v = std::clamp(v, 0.0, 1.0);
  }

  friend bool operator==(const ImageRGB&, const ImageRGB&) = default;
};

/// Single-channel H x W raster. Used for depth, transmission and confidence maps.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  GrayImage() = default;
  GrayImage(int h, int w, double fill = 0.0)
      : height(h), width(w), data(ImageRGB::checked_size(h, w) / 3, fill) {}

  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

inline void require_same_shape(const ImageRGB& a, const ImageRGB& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": image dimensions differ (" + std::to_string(a.height) +
                     "x" + std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width) + ")");
}

}  // namespace gfn
