#pragma once

// Multi-scale gated fusion network. Each scale is a small encoder-decoder
// that reads the hazy image and its three derived inputs (plus the upsampled
// output of the coarser scale) and predicts three confidence maps; the scale
// output is the map-weighted sum of the derived inputs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gfn/autodiff.hpp"
#include "gfn/derive.hpp"
#include "gfn/errors.hpp"
#include "gfn/image.hpp"
#include "gfn/tensor.hpp"

namespace gfn {

inline constexpr int kEncoderDilations[3] = {1, 2, 4};
inline constexpr double kAdversarialWeight = 0.001;
inline constexpr double kProbabilityEps = 1e-7;

struct GfnConfig {
  int scale_count = 3;
  int features = 32;
  bool equal_weight_fusion = false;
  double gamma_alpha = kDefaultGammaAlpha;  // gamma-corrected input: alpha * I^gamma
  double gamma = kDefaultGamma;

  void validate() const {
    if (scale_count < 1) throw ParameterError("scale_count must be >= 1");
    if (features < 1) throw ParameterError("features must be >= 1");
    if (!(gamma_alpha > 0) || !(gamma > 0)) throw ParameterError("gamma and gamma_alpha must be positive");
  }
  friend bool operator==(const GfnConfig&, const GfnConfig&) = default;
};

template <class T>
struct ScaleNetParams {
  int in_channels = 12;  // hazy + 3 derived, +3 for the previous scale
  Tensor<T> first_w, first_b;      // conv 5x5, in -> F
  std::array<Tensor<T>, 3> enc_w;  // conv 3x3, F -> F, dilations 1, 2, 4
  std::array<Tensor<T>, 3> enc_b;
  std::array<Tensor<T>, 3> dec_w;  // deconv 3x3 (in, out, k, k): F -> F, 2F -> F, 2F -> F
  std::array<Tensor<T>, 3> dec_b;
  Tensor<T> out_w, out_b;          // conv 3x3, F -> 3 confidence channels

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "first.w", first_w);
    f(prefix + "first.b", first_b);
    for (int i = 0; i < 3; ++i) {
      f(prefix + "enc" + std::to_string(i + 1) + ".w", enc_w[i]);
      f(prefix + "enc" + std::to_string(i + 1) + ".b", enc_b[i]);
    }
    for (int i = 0; i < 3; ++i) {
      f(prefix + "dec" + std::to_string(i + 1) + ".w", dec_w[i]);
      f(prefix + "dec" + std::to_string(i + 1) + ".b", dec_b[i]);
    }
    f(prefix + "out.w", out_w);
    f(prefix + "out.b", out_b);
  }
};

template <class T>
struct GfnParams {
  GfnConfig config;
  std::vector<ScaleNetParams<T>> scales;  // coarsest first

  template <class F>
  void for_each(F&& f) {
    for (std::size_t k = 0; k < scales.size(); ++k)
      scales[k].for_each("gen.s" + std::to_string(k) + ".", f);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<GfnParams*>(this)->for_each([&](const std::string& n, Tensor<T>& t) {
      f(n, static_cast<const Tensor<T>&>(t));
    });
  }
};

template <class T>
struct DiscParams {
  static constexpr int kLayers = 5;
  static constexpr int kChannels[kLayers + 1] = {3, 32, 64, 128, 256, 1};
  int input_size = 128;  // expected square resolution of the finest scale
  std::array<Tensor<T>, kLayers> w;
  std::array<Tensor<T>, kLayers> b;

  template <class F>
  void for_each(F&& f) {
    for (int i = 0; i < kLayers; ++i) {
      f("disc.conv" + std::to_string(i + 1) + ".w", w[i]);
      f("disc.conv" + std::to_string(i + 1) + ".b", b[i]);
    }
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<DiscParams*>(this)->for_each([&](const std::string& n, Tensor<T>& t) {
      f(n, static_cast<const Tensor<T>&>(t));
    });
  }
};

namespace detail {

template <class T>
Tensor<T> he_normal(Shape s, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  Tensor<T> t(s);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

inline Shape bias_shape(int c) { return Shape{1, c, 1, 1}; }

}  // namespace detail

/// Zero biases; kernels drawn from N(0, 2 / fan_in).
template <class T>
ScaleNetParams<T> init_scale_params(int in_channels, int features, std::mt19937_64& rng) {
  const int f = features;
  ScaleNetParams<T> p;
  p.in_channels = in_channels;
  p.first_w = detail::he_normal<T>(Shape{f, in_channels, 5, 5}, in_channels * 25, rng);
  p.first_b = Tensor<T>(detail::bias_shape(f));
  for (int i = 0; i < 3; ++i) {
    p.enc_w[i] = detail::he_normal<T>(Shape{f, f, 3, 3}, f * 9, rng);
    p.enc_b[i] = Tensor<T>(detail::bias_shape(f));
  }
  for (int i = 0; i < 3; ++i) {
    const int in = i == 0 ? f : 2 * f;
    p.dec_w[i] = detail::he_normal<T>(Shape{in, f, 3, 3}, in * 9, rng);
    p.dec_b[i] = Tensor<T>(detail::bias_shape(f));
  }
  p.out_w = detail::he_normal<T>(Shape{3, f, 3, 3}, f * 9, rng);
  p.out_b = Tensor<T>(detail::bias_shape(3));
  return p;
}

template <class T>
GfnParams<T> init_gfn_params(const GfnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  GfnParams<T> p;
  p.config = cfg;
  for (int k = 0; k < cfg.scale_count; ++k)
    p.scales.push_back(init_scale_params<T>(k == 0 ? 12 : 15, cfg.features, rng));
  return p;
}

template <class T>
DiscParams<T> init_disc_params(int input_size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DiscParams<T> d;
  d.input_size = input_size;
  for (int i = 0; i < DiscParams<T>::kLayers; ++i) {
    const int in = DiscParams<T>::kChannels[i], out = DiscParams<T>::kChannels[i + 1];
    d.w[i] = detail::he_normal<T>(Shape{out, in, 3, 3}, in * 9, rng);
    d.b[i] = Tensor<T>(detail::bias_shape(out));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Image <-> tensor

template <class T>
Tensor<T> to_tensor(const std::vector<const ImageRGB*>& batch) {
  if (batch.empty()) throw ShapeError("to_tensor: empty batch");
  const int h = batch[0]->height, w = batch[0]->width;
  Tensor<T> t(Shape{static_cast<int>(batch.size()), 3, h, w});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const ImageRGB& img = *batch[n];
    if (img.height != h || img.width != w) throw ShapeError("to_tensor: batch images differ in size");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t.at(static_cast<int>(n), c, y, x) = static_cast<T>(img.at(y, x, c));
  }
  return t;
}

template <class T>
Tensor<T> to_tensor(const ImageRGB& img) {
  return to_tensor<T>(std::vector<const ImageRGB*>{&img});
}

/// Batch item n of a (N,3,H,W) tensor, clamped to [0,1].
template <class T>
ImageRGB to_image(const Tensor<T>& t, int n = 0) {
  const Shape s = t.shape();
  if (s.c != 3) throw ShapeError("to_image: tensor must have 3 channels");
  ImageRGB img(s.h, s.w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x)
        img.at(y, x, c) = std::clamp(static_cast<double>(t.at(n, c, y, x)), 0.0, 1.0);
  return img;
}

template <class T>
GrayImage to_gray(const Tensor<T>& t, int n = 0, int c = 0) {
  const Shape s = t.shape();
  GrayImage g(s.h, s.w);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) g.at(y, x) = static_cast<double>(t.at(n, c, y, x));
  return g;
}

/// Derived inputs as (N,3,H,W) tensors, batch item order preserved.
template <class T>
struct DerivedTensors {
  Tensor<T> wb, ce, gc;
};

template <class T>
DerivedTensors<T> derive_tensors(const std::vector<const ImageRGB*>& hazy, double alpha = kDefaultGammaAlpha,
                                 double gamma = kDefaultGamma) {
  std::vector<DerivedInputs> d;
  d.reserve(hazy.size());
  for (const ImageRGB* img : hazy) d.push_back(derive_inputs(*img, alpha, gamma));
  std::vector<const ImageRGB*> wb, ce, gc;
  for (const auto& x : d) {
    wb.push_back(&x.wb);
    ce.push_back(&x.ce);
    gc.push_back(&x.gc);
  }
  return {to_tensor<T>(wb), to_tensor<T>(ce), to_tensor<T>(gc)};
}

/// Pyramid by repeated half-pixel x1/2 bilinear resampling (2x2 box
/// averages), coarsest first; the finest entry is the input itself.
template <class T>
std::vector<Tensor<T>> build_pyramid(const Tensor<T>& full, int scale_count) {
  std::vector<Tensor<T>> p(scale_count);
  p[scale_count - 1] = full;
  for (int k = scale_count - 2; k >= 0; --k) {
    const Shape s = p[k + 1].shape();
    if (s.h % 2 != 0 || s.w % 2 != 0)
      throw ShapeError("build_pyramid: dimensions not divisible by 2^(scales-1)");
    p[k] = kernels::resize_bilinear(p[k + 1], s.h / 2, s.w / 2);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes on a tape

template <class T>
struct ScaleVars {
  Var first_w, first_b;
  std::array<Var, 3> enc_w, enc_b, dec_w, dec_b;
  Var out_w, out_b;
};

/// Places the parameters on the tape, as trainable leaves or as constants.
template <class T>
ScaleVars<T> bind(Tape<T>& tape, const ScaleNetParams<T>& p, bool trainable) {
  auto put = [&](const Tensor<T>& t) { return trainable ? tape.parameter(t) : tape.constant(t); };
  ScaleVars<T> v;
  v.first_w = put(p.first_w);
  v.first_b = put(p.first_b);
  for (int i = 0; i < 3; ++i) {
    v.enc_w[i] = put(p.enc_w[i]);
    v.enc_b[i] = put(p.enc_b[i]);
    v.dec_w[i] = put(p.dec_w[i]);
    v.dec_b[i] = put(p.dec_b[i]);
  }
  v.out_w = put(p.out_w);
  v.out_b = put(p.out_b);
  return v;
}

template <class T>
struct GfnVars {
  std::vector<ScaleVars<T>> scales;

  // Same traversal order as GfnParams::for_each.
  template <class F>
  void for_each(F&& f) const {
    const_cast<GfnVars*>(this)->for_each([&](Var& v) { f(static_cast<const Var&>(v)); });
  }
  template <class F>
  void for_each(F&& f) {
    for (auto& s : scales) {
      f(s.first_w);
      f(s.first_b);
      for (int i = 0; i < 3; ++i) {
        f(s.enc_w[i]);
        f(s.enc_b[i]);
      }
      for (int i = 0; i < 3; ++i) {
        f(s.dec_w[i]);
        f(s.dec_b[i]);
      }
      f(s.out_w);
      f(s.out_b);
    }
  }
};

template <class T>
GfnVars<T> bind(Tape<T>& tape, const GfnParams<T>& p, bool trainable) {
  GfnVars<T> v;
  for (const auto& s : p.scales) v.scales.push_back(bind(tape, s, trainable));
  return v;
}

/// Confidence maps C_wb, C_ce, C_gc, each (N,1,H,W) in (0,1).
struct ConfidenceVars {
  Var wb, ce, gc;
  Var stacked;  // (N,3,H,W)
};

template <class T>
ConfidenceVars scale_forward(Tape<T>& tape, Var hazy, Var wb, Var ce, Var gc,
                             std::optional<Var> prev_upsampled, const ScaleNetParams<T>& p,
                             const ScaleVars<T>& v) {
  const Shape hs = tape.value(hazy).shape();
  for (Var d : {wb, ce, gc})
    if (!(tape.value(d).shape() == hs)) throw ShapeError("scale_forward: derived input shape mismatch");
  if (prev_upsampled && !(tape.value(*prev_upsampled).shape() == hs))
    throw ShapeError("scale_forward: previous-scale output shape mismatch");
  const int expected_in = prev_upsampled ? 15 : 12;
  if (p.in_channels != expected_in)
    throw ShapeError("scale_forward: scale expects " + std::to_string(p.in_channels) +
                     " input channels, got " + std::to_string(expected_in));

  const int f = p.first_w.shape().n;
  Var x = ad::concat_channels(tape, ad::concat_channels(tape, hazy, wb),
                              ad::concat_channels(tape, ce, gc));
  if (prev_upsampled) x = ad::concat_channels(tape, x, *prev_upsampled);

  Var h0 = ad::relu(tape, ad::conv2d(tape, x, v.first_w, v.first_b, ConvSpec::same(expected_in, f, 5)));
  Var e1 = ad::relu(tape, ad::conv2d(tape, h0, v.enc_w[0], v.enc_b[0], ConvSpec::same(f, f, 3, kEncoderDilations[0])));
  Var e2 = ad::relu(tape, ad::conv2d(tape, e1, v.enc_w[1], v.enc_b[1], ConvSpec::same(f, f, 3, kEncoderDilations[1])));
  Var e3 = ad::relu(tape, ad::conv2d(tape, e2, v.enc_w[2], v.enc_b[2], ConvSpec::same(f, f, 3, kEncoderDilations[2])));

  Var d1 = ad::relu(tape, ad::deconv2d(tape, e3, v.dec_w[0], v.dec_b[0], ConvSpec::same(f, f, 3)));
  Var d2 = ad::relu(tape, ad::deconv2d(tape, ad::concat_channels(tape, d1, e2), v.dec_w[1], v.dec_b[1],
                                       ConvSpec::same(2 * f, f, 3)));
  Var d3 = ad::relu(tape, ad::deconv2d(tape, ad::concat_channels(tape, d2, e1), v.dec_w[2], v.dec_b[2],
                                       ConvSpec::same(2 * f, f, 3)));

  Var maps = ad::sigmoid(tape, ad::conv2d(tape, d3, v.out_w, v.out_b, ConvSpec::same(f, 3, 3)));
  return ConfidenceVars{ad::slice_channels(tape, maps, 0, 1), ad::slice_channels(tape, maps, 1, 1),
                        ad::slice_channels(tape, maps, 2, 1), maps};
}

/// C_wb * I_wb + C_ce * I_ce + C_gc * I_gc with each map broadcast over RGB.
/// No clamping: values may exceed 1 inside the loss path.
template <class T>
Var fuse(Tape<T>& tape, const ConfidenceVars& maps, Var wb, Var ce, Var gc) {
  return ad::add(tape, ad::add(tape, ad::gate(tape, maps.wb, wb), ad::gate(tape, maps.ce, ce)),
                 ad::gate(tape, maps.gc, gc));
}

template <class T>
ConfidenceVars equal_weight_maps(Tape<T>& tape, const Shape& image_shape) {
  const Shape s{image_shape.n, 1, image_shape.h, image_shape.w};
  Var third = tape.constant(Tensor<T>(s, static_cast<T>(1.0 / 3.0)));
  Var stacked = tape.constant(Tensor<T>(Shape{s.n, 3, s.h, s.w}, static_cast<T>(1.0 / 3.0)));
  return ConfidenceVars{third, third, third, stacked};
}

struct PyramidVars {
  std::vector<Var> outputs;               // J_k, coarsest first
  std::vector<ConfidenceVars> maps;       // per scale
};

/// Coarse-to-fine pass. `hazy` and the derived inputs are full-resolution
/// (N,3,H,W) tensors with H, W divisible by 2^(scales-1).
template <class T>
PyramidVars multi_scale_forward(Tape<T>& tape, const Tensor<T>& hazy, const DerivedTensors<T>& derived,
                                const GfnParams<T>& params, const GfnVars<T>& vars) {
  const int scales = params.config.scale_count;
  if (static_cast<int>(params.scales.size()) != scales)
    throw ShapeError("multi_scale_forward: parameter scale count mismatch");
  const auto hp = build_pyramid(hazy, scales);
  const auto wbp = build_pyramid(derived.wb, scales);
  const auto cep = build_pyramid(derived.ce, scales);
  const auto gcp = build_pyramid(derived.gc, scales);

  PyramidVars out;
  std::optional<Var> prev;
  for (int k = 0; k < scales; ++k) {
    Var h = tape.constant(hp[k]);
    Var wb = tape.constant(wbp[k]);
    Var ce = tape.constant(cep[k]);
    Var gc = tape.constant(gcp[k]);
    std::optional<Var> up;
    if (prev) up = ad::resize_bilinear(tape, *prev, hp[k].shape().h, hp[k].shape().w);
    ConfidenceVars maps = params.config.equal_weight_fusion
                              ? equal_weight_maps(tape, hp[k].shape())
                              : scale_forward(tape, h, wb, ce, gc, up, params.scales[k], vars.scales[k]);
    Var j = fuse(tape, maps, wb, ce, gc);
    out.outputs.push_back(j);
    out.maps.push_back(maps);
    prev = j;
  }
  return out;
}

/// Sum over scales of the per-scale MSE, scales weighted equally.
template <class T>
Var content_loss(Tape<T>& tape, const std::vector<Var>& pred, const std::vector<Tensor<T>>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw ShapeError("content_loss: pyramid depth mismatch");
  Var total = ad::mse(tape, pred[0], tape.constant(truth[0]));
  for (std::size_t k = 1; k < pred.size(); ++k)
    total = ad::add(tape, total, ad::mse(tape, pred[k], tape.constant(truth[k])));
  return total;
}

template <class T>
struct DiscVars {
  std::array<Var, DiscParams<T>::kLayers> w, b;
};

template <class T>
DiscVars<T> bind(Tape<T>& tape, const DiscParams<T>& p, bool trainable) {
  DiscVars<T> v;
  for (int i = 0; i < DiscParams<T>::kLayers; ++i) {
    v.w[i] = trainable ? tape.parameter(p.w[i]) : tape.constant(p.w[i]);
    v.b[i] = trainable ? tape.parameter(p.b[i]) : tape.constant(p.b[i]);
  }
  return v;
}

/// Five stride-2 3x3 convolutions with leaky ReLU between them, global
/// average, sigmoid. Returns (N,1,1,1) probabilities.
template <class T>
Var discriminator_forward(Tape<T>& tape, Var img, const DiscParams<T>& p, const DiscVars<T>& v) {
  const Shape s = tape.value(img).shape();
  if (s.c != 3 || s.h != p.input_size || s.w != p.input_size)
    throw ShapeError("discriminator: expected (N,3," + std::to_string(p.input_size) + "," +
                     std::to_string(p.input_size) + "), got " + s.str());
  Var x = img;
  for (int i = 0; i < DiscParams<T>::kLayers; ++i) {
    const ConvSpec spec{DiscParams<T>::kChannels[i], DiscParams<T>::kChannels[i + 1], 3, 3, 2, 1, 1};
    x = ad::conv2d(tape, x, v.w[i], v.b[i], spec);
    if (i + 1 < DiscParams<T>::kLayers) x = ad::leaky_relu(tape, x);
  }
  return ad::sigmoid(tape, ad::global_average(tape, x));
}

// ---------------------------------------------------------------------------
// Scalar loss arithmetic

/// E[log D(J)] + E[log(1 - D(F(I)))] with probabilities clamped to
/// [1e-7, 1 - 1e-7].
inline double adversarial_loss(const std::vector<double>& d_real, const std::vector<double>& d_fake) {
  auto mean_log = [](const std::vector<double>& p, bool complement) {
    double acc = 0.0;
    for (double q : p) {
      q = std::clamp(q, kProbabilityEps, 1.0 - kProbabilityEps);
      acc += std::log(complement ? 1.0 - q : q);
    }
    return acc / static_cast<double>(p.size());
  };
  return mean_log(d_real, false) + mean_log(d_fake, true);
}

inline double adversarial_loss(double d_real, double d_fake) {
  return adversarial_loss(std::vector<double>{d_real}, std::vector<double>{d_fake});
}

inline double total_loss(double content, double adversarial, double weight = kAdversarialWeight) {
  return content + weight * adversarial;
}

// ---------------------------------------------------------------------------
// Inference

inline ImageRGB reflect_pad(const ImageRGB& img, int h, int w) {
  auto fold = [](int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
  };
  ImageRGB out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(fold(y, img.height), fold(x, img.width), c);
  return out;
}

inline ImageRGB crop(const ImageRGB& img, int y0, int x0, int h, int w) {
  ImageRGB out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

struct DehazeResult {
  std::vector<ImageRGB> pyramid;       // coarsest first; finest is cropped to the input size
  std::array<GrayImage, 3> maps;       // finest-scale C_wb, C_ce, C_gc
  ImageRGB image() const { return pyramid.back(); }
};

/// Full inference: derive inputs, run the pyramid, clamp on export. Inputs
/// whose sides are not multiples of 2^(scales-1) are reflect-padded and the
/// finest output is cropped back.
template <class T>
DehazeResult dehaze_full(const ImageRGB& img, const GfnParams<T>& params) {
  img.validate();
  const int m = 1 << (params.config.scale_count - 1);
  const int ph = (img.height + m - 1) / m * m, pw = (img.width + m - 1) / m * m;
  const ImageRGB padded = (ph == img.height && pw == img.width) ? img : reflect_pad(img, ph, pw);

  Tape<T> tape;
  const auto vars = bind(tape, params, false);
  const auto derived = derive_tensors<T>({&padded}, params.config.gamma_alpha, params.config.gamma);
  const auto pyr = multi_scale_forward(tape, to_tensor<T>(padded), derived, params, vars);

  DehazeResult r;
  for (std::size_t k = 0; k < pyr.outputs.size(); ++k) r.pyramid.push_back(to_image(tape.value(pyr.outputs[k])));
  if (ph != img.height || pw != img.width) r.pyramid.back() = crop(r.pyramid.back(), 0, 0, img.height, img.width);
  const auto& fm = pyr.maps.back();
  std::array<Var, 3> mv{fm.wb, fm.ce, fm.gc};
  for (int i = 0; i < 3; ++i) {
    GrayImage g = to_gray(tape.value(mv[i]));
    if (ph != img.height || pw != img.width) {
      GrayImage c(img.height, img.width);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) c.at(y, x) = g.at(y, x);
      g = std::move(c);
    }
    r.maps[i] = std::move(g);
  }
  return r;
}

template <class T>
ImageRGB dehaze(const ImageRGB& img, const GfnParams<T>& params) {
  return dehaze_full(img, params).image();
}

}  // namespace gfn
