#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "gfn/errors.hpp"
#include "gfn/image.hpp"

namespace gfn {

inline constexpr double kPsnrCap = 100.0;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

inline double mean_squared_error(const ImageRGB& a, const ImageRGB& b) {
  require_same_shape(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.data.size());
}

/// 10 log10(1 / MSE) for unit-range data, capped at 100 dB.
inline double psnr(const ImageRGB& a, const ImageRGB& b) {
  const double m = mean_squared_error(a, b);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

inline std::array<double, kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow> k{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, L = 1. Only windows fully inside the image are scored; the
/// result is the mean over those positions and the three channels.
inline double ssim(const ImageRGB& a, const ImageRGB& b) {
  require_same_shape(a, b, "ssim");
  if (a.height < kSsimWindow || a.width < kSsimWindow)
    throw ShapeError("ssim: images must be at least 11x11");
  const auto k = ssim_kernel();
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
  const int h = a.height, w = a.width;
  const int oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;

  // Separable filtering of the five moment images; horizontal pass first.
  std::vector<std::array<double, 5>> rows(static_cast<std::size_t>(h) * ow);
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < ow; ++x) {
        std::array<double, 5> m{};
        for (int i = 0; i < kSsimWindow; ++i) {
          const double u = a.at(y, x + i, c), v = b.at(y, x + i, c);
          m[0] += k[i] * u;
          m[1] += k[i] * v;
          m[2] += k[i] * u * u;
          m[3] += k[i] * v * v;
          m[4] += k[i] * u * v;
        }
        rows[static_cast<std::size_t>(y) * ow + x] = m;
      }
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        std::array<double, 5> m{};
        for (int i = 0; i < kSsimWindow; ++i) {
          const auto& r = rows[static_cast<std::size_t>(y + i) * ow + x];
          for (int j = 0; j < 5; ++j) m[j] += k[i] * r[j];
        }
        const double mx = m[0], my = m[1];
        const double vx = m[2] - mx * mx, vy = m[3] - my * my, cov = m[4] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
                 ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
  }
  return total / (3.0 * oh * ow);
}

// ---------------------------------------------------------------------------
// Reports

struct ImageScore {
  std::string id;
  std::string group;
  double beta = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  std::string error;  // non-empty when the entry could not be scored
};

struct Aggregate {
  int count = 0;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

struct MetricReport {
  std::vector<ImageScore> images;
  std::map<std::string, Aggregate> groups;
  Aggregate overall;
  int failed = 0;

  // Recomputes aggregates from the per-image rows.
  void aggregate() {
    groups.clear();
    overall = {};
    failed = 0;
    std::map<std::string, std::pair<double, double>> sums;
    double sp = 0.0, ss = 0.0;
    for (const auto& s : images) {
      if (!s.error.empty()) {
        ++failed;
        continue;
      }
      auto& g = groups[s.group];
      ++g.count;
      sums[s.group].first += s.psnr;
      sums[s.group].second += s.ssim;
      ++overall.count;
      sp += s.psnr;
      ss += s.ssim;
    }
    for (auto& [name, g] : groups) {
      g.mean_psnr = sums[name].first / g.count;
      g.mean_ssim = sums[name].second / g.count;
    }
    if (overall.count > 0) {
      overall.mean_psnr = sp / overall.count;
      overall.mean_ssim = ss / overall.count;
    }
  }
};

/// Haze-level key: beta 0.8 / 1.0 / 1.2 are light / medium / heavy; any
/// other beta (sampled) is "random".
inline std::string haze_group(double beta) {
  constexpr double tol = 1e-9;
  if (std::abs(beta - 0.8) < tol) return "light";
  if (std::abs(beta - 1.0) < tol) return "medium";
  if (std::abs(beta - 1.2) < tol) return "heavy";
  return "random";
}

/// Rounds every value to the 8-bit grid, as a PNG round-trip would.
inline ImageRGB quantize8(const ImageRGB& img) {
  ImageRGB q = img;
  for (double& v : q.data) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return q;
}

}  // namespace gfn
