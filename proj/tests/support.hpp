#pragma once

// Test-only oracles. Nothing here calls into the code paths it is used to
// check: convolution, SSIM and PSNR are re-derived with direct loops.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gfn/autodiff.hpp"
#include "gfn/image.hpp"
#include "gfn/tensor.hpp"

namespace gfn::test {

inline Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(s);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline ImageRGB random_image(int h, int w, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ImageRGB img(h, w);
  for (auto& v : img.data) v = u(rng);
  return img;
}

/// Direct six-loop cross-correlation with zero padding.
inline Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                                   const ConvSpec& s) {
  const Shape xs = x.shape();
  const int ho = (xs.h + 2 * s.padding - s.dilation * (s.kh - 1) - 1) / s.stride + 1;
  const int wo = (xs.w + 2 * s.padding - s.dilation * (s.kw - 1) - 1) / s.stride + 1;
  Tensor<double> y(Shape{xs.n, s.out_channels, ho, wo});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < s.out_channels; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = b[o];
          for (int c = 0; c < xs.c; ++c)
            for (int i = 0; i < s.kh; ++i)
              for (int j = 0; j < s.kw; ++j) {
                const int iy = oy * s.stride - s.padding + i * s.dilation;
                const int ix = ox * s.stride - s.padding + j * s.dilation;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += w.at(o, c, i, j) * x.at(n, c, iy, ix);
              }
          y.at(n, o, oy, ox) = acc;
        }
  return y;
}

/// Direct scatter form of a stride-1 transposed convolution, weights
/// (in, out, kh, kw): every input pixel spreads its kernel over the output.
inline Tensor<double> naive_deconv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                                     const ConvSpec& s) {
  const Shape xs = x.shape();
  const int ho = xs.h - 2 * s.padding + s.dilation * (s.kh - 1);
  const int wo = xs.w - 2 * s.padding + s.dilation * (s.kw - 1);
  Tensor<double> y(Shape{xs.n, s.out_channels, ho, wo});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < s.out_channels; ++o)
      for (int yy = 0; yy < ho; ++yy)
        for (int xx = 0; xx < wo; ++xx) y.at(n, o, yy, xx) = b[o];
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int iy = 0; iy < xs.h; ++iy)
        for (int ix = 0; ix < xs.w; ++ix)
          for (int o = 0; o < s.out_channels; ++o)
            for (int i = 0; i < s.kh; ++i)
              for (int j = 0; j < s.kw; ++j) {
                const int oy = iy - s.padding + i * s.dilation;
                const int ox = ix - s.padding + j * s.dilation;
                if (oy < 0 || oy >= ho || ox < 0 || ox >= wo) continue;
                y.at(n, o, oy, ox) += w.at(c, o, i, j) * x.at(n, c, iy, ix);
              }
  return y;
}

inline double naive_psnr(const ImageRGB& a, const ImageRGB& b) {
  double se = 0.0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int c = 0; c < 3; ++c) se += std::pow(a.at(y, x, c) - b.at(y, x, c), 2);
  const double mse = se / (3.0 * a.height * a.width);
  return mse == 0.0 ? 100.0 : std::min(100.0, -10.0 * std::log10(mse));
}

/// SSIM with a directly evaluated 2-D Gaussian window at every valid position.
inline double naive_ssim(const ImageRGB& a, const ImageRGB& b) {
  double wsum = 0.0;
  double win[11][11];
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      win[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2.0 * 1.5 * 1.5));
      wsum += win[i][j];
    }
  const double c1 = 0.0001, c2 = 0.0009;
  double total = 0.0;
  int count = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y + 11 <= a.height; ++y)
      for (int x = 0; x + 11 <= a.width; ++x) {
        double mx = 0, my = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double w = win[i][j] / wsum;
            mx += w * a.at(y + i, x + j, c);
            my += w * b.at(y + i, x + j, c);
          }
        double vx = 0, vy = 0, cov = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double w = win[i][j] / wsum;
            const double dx = a.at(y + i, x + j, c) - mx, dy = b.at(y + i, x + j, c) - my;
            vx += w * dx * dx;
            vy += w * dy * dy;
            cov += w * dx * dy;
          }
        total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
  return total / count;
}

/// Relative error with a floor on the denominator, so gradients that are
/// numerically zero compare absolutely.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

using LossBuilder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

/// Compares reverse-mode gradients of `build` against central differences
/// (step h) at up to `per_tensor` random coordinates of each input tensor.
/// Returns the worst relative error.
inline double gradient_check(const std::vector<Tensor<double>>& inputs, const LossBuilder& build,
                             int per_tensor, std::uint64_t seed, double h = 1e-5) {
  auto evaluate = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    return tape.value(build(tape, vars))[0];
  };
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.parameter(x));
  tape.backward(build(tape, vars));

  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const Tensor<double> g = tape.grad(vars[t]);
    const std::size_t n = inputs[t].size();
    std::vector<std::size_t> coords;
    if (static_cast<std::size_t>(per_tensor) >= n) {
      for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (int i = 0; i < per_tensor; ++i) coords.push_back(pick(rng));
    }
    for (std::size_t i : coords) {
      auto plus = inputs, minus = inputs;
      plus[t][i] += h;
      minus[t][i] -= h;
      const double numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * h);
      worst = std::max(worst, rel_error(g[i], numeric));
    }
  }
  return worst;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gfn_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace gfn::test
