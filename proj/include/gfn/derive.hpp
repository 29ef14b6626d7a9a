#pragma once

// The three derived inputs computed from a hazy image: gray-world white
// balance, mean-subtracted contrast enhancement and power-law gamma.

#include <algorithm>
#include <array>
#include <cmath>

#include "gfn/errors.hpp"
#include "gfn/image.hpp"

namespace gfn {

struct LuminanceStats {
  double mean_luminance = 0.0;  // mean over all pixels and channels
  double amplification = 1.0;   // 2 * (0.5 + mean_luminance), in [1,3]
};

struct WhiteBalanceResult {
  ImageRGB image;
  std::array<double, 3> gains{1.0, 1.0, 1.0};
  // Some channel mean fell below kMinChannelMean; its gain was pinned to the cap.
  bool degenerate_channel = false;
  // Some gain was clipped to [kMinGain, kMaxGain].
  bool gain_clamped = false;
};

struct DerivedInputs {
  ImageRGB wb;
  ImageRGB ce;
  ImageRGB gc;
  bool warning = false;  // forwarded from white balance
};

inline constexpr double kMinChannelMean = 1e-6;
inline constexpr double kMinGain = 0.25;
inline constexpr double kMaxGain = 4.0;
inline constexpr double kDefaultGammaAlpha = 1.0;
inline constexpr double kDefaultGamma = 2.5;

// Neumaier-compensated sum: constant images average back to their exact value.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    comp_ += std::abs(sum_) >= std::abs(v) ? (sum_ - t) + v : (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline LuminanceStats mean_luminance(const ImageRGB& img) {
  CompensatedSum sum;
  for (double v : img.data) sum.add(v);
  LuminanceStats s;
  s.mean_luminance = sum.value() / static_cast<double>(img.data.size());
  s.amplification = 2.0 * (0.5 + s.mean_luminance);
  return s;
}

inline std::array<double, 3> channel_means(const ImageRGB& img) {
  std::array<CompensatedSum, 3> sums;
  for (std::size_t i = 0; i < img.data.size(); i += 3)
    for (int c = 0; c < 3; ++c) sums[c].add(img.data[i + c]);
  std::array<double, 3> m{};
  for (int c = 0; c < 3; ++c) m[c] = sums[c].value() / static_cast<double>(img.pixels());
  return m;
}

/// Gray-world white balance: scales each channel so its mean matches the
/// mean of the three channel means.
inline WhiteBalanceResult white_balance(const ImageRGB& img) {
  const auto m = channel_means(img);
  // Mean of the channel means, i.e. the mean over all values.
  const double gray = mean_luminance(img).mean_luminance;

  WhiteBalanceResult r;
  for (int c = 0; c < 3; ++c) {
    if (m[c] < kMinChannelMean) {
      r.gains[c] = kMaxGain;
      r.degenerate_channel = true;
      continue;
    }
    const double g = gray / m[c];
    r.gains[c] = std::clamp(g, kMinGain, kMaxGain);
    if (r.gains[c] != g) r.gain_clamped = true;
  }

  r.image = img;
  for (std::size_t i = 0; i < r.image.data.size(); i += 3)
    for (int c = 0; c < 3; ++c)
      r.image.data[i + c] = std::clamp(r.gains[c] * img.data[i + c], 0.0, 1.0);
  return r;
}

/// mu * (I - mean), clamped to [0,1].
inline ImageRGB contrast_enhance(const ImageRGB& img) {
  const auto s = mean_luminance(img);
  ImageRGB out = img;
  for (double& v : out.data)
    v = std::clamp(s.amplification * (v - s.mean_luminance), 0.0, 1.0);
  return out;
}

inline ImageRGB gamma_correct(const ImageRGB& img, double alpha = kDefaultGammaAlpha,
                              double gamma = kDefaultGamma) {
  if (!(alpha > 0.0)) throw ParameterError("gamma_correct: alpha must be positive");
  if (!(gamma > 0.0)) throw ParameterError("gamma_correct: gamma must be positive");
  ImageRGB out = img;
  for (double& v : out.data) v = std::clamp(alpha * std::pow(v, gamma), 0.0, 1.0);
  return out;
}

inline DerivedInputs derive_inputs(const ImageRGB& img, double alpha = kDefaultGammaAlpha,
                                   double gamma = kDefaultGamma) {
  auto wb = white_balance(img);
  DerivedInputs d;
  d.warning = wb.degenerate_channel || wb.gain_clamped;
  d.wb = std::move(wb.image);
  d.ce = contrast_enhance(img);
  d.gc = gamma_correct(img, alpha, gamma);
  return d;
}

}  // namespace gfn
