#pragma once

// Dense NCHW tensors and the forward/backward kernels behind the autodiff
// tape. Everything here is a pure function of its arguments.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "gfn/errors.hpp"

namespace gfn {

struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t count() const {
    return static_cast<std::size_t>(n) * c * static_cast<std::size_t>(h) * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape_(s), data_(checked_count(s), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape_(s), data_(std::move(values)) {
    if (data_.size() != checked_count(s))
      throw ShapeError("tensor data length does not match shape " + s.str());
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  T at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t checked_count(const Shape& s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
      throw ShapeError("tensor shape components must be >= 1, got " + s.str());
    return s.count();
  }

  Shape shape_{};
  std::vector<T> data_;
};

/// Geometry of a 2-D convolution. Output size along an axis is
/// (in + 2 padding - dilation (k - 1) - 1) / stride + 1.
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kh = 3;
  int kw = 3;
  int stride = 1;
  int dilation = 1;
  int padding = 0;

  // Odd square kernel, stride 1, padding that preserves spatial size.
  static ConvSpec same(int in, int out, int k, int dilation = 1) {
    return ConvSpec{in, out, k, k, 1, dilation, dilation * (k - 1) / 2};
  }

  int out_extent(int in, int k) const {
    const int span = in + 2 * padding - dilation * (k - 1) - 1;
    if (span < 0) throw ShapeError("convolution input smaller than dilated kernel");
    return span / stride + 1;
  }

  void validate() const {
    if (in_channels < 1 || out_channels < 1 || kh < 1 || kw < 1 || stride < 1 || dilation < 1 ||
        padding < 0)
      throw ParameterError("invalid convolution spec");
  }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

namespace kernels {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

inline void check_conv_shapes(const Shape& x, const Shape& w, const Shape& b, const ConvSpec& s) {
  s.validate();
  if (x.c != s.in_channels)
    throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, spec expects " +
                     std::to_string(s.in_channels));
  if (!(w == Shape{s.out_channels, s.in_channels, s.kh, s.kw}))
    throw ShapeError("conv2d: weight shape " + w.str() + " inconsistent with spec");
  if (b.count() != static_cast<std::size_t>(s.out_channels))
    throw ShapeError("conv2d: bias length must equal out_channels");
}

// Output columns [lo, hi) whose input column ox * stride + offset lies in [0, w).
inline std::pair<int, int> valid_range(int offset, int stride, int w, int wo) {
  int lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  int hi = w - offset <= 0 ? 0 : (w - offset - 1) / stride + 1;
  lo = std::min(lo, wo);
  hi = std::clamp(hi, lo, wo);
  return {lo, hi};
}

// Unfold output rows [oy0, oy1) of one batch item into a
// (C kh kw) x ((oy1 - oy0) Wo) matrix.
template <class T>
void im2col(const T* x, int channels, int h, int w, const ConvSpec& s, int ho, int wo, T* col, int oy0 = 0,
            int oy1 = -1) {
  if (oy1 < 0) oy1 = ho;
  const std::size_t span = static_cast<std::size_t>(oy1 - oy0) * wo;
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < s.kh; ++i)
      for (int j = 0; j < s.kw; ++j) {
        T* row = col + ((static_cast<std::size_t>(c) * s.kh + i) * s.kw + j) * span;
        const int dy = i * s.dilation - s.padding;
        const int dx = j * s.dilation - s.padding;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * s.stride + dy;
          T* out = row + static_cast<std::size_t>(oy - oy0) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * h + iy) * w;
          const auto [lo, hi] = valid_range(dx, s.stride, w, wo);
          std::fill(out, out + lo, T(0));
          if (s.stride == 1)
            std::copy(src + lo + dx, src + hi + dx, out + lo);
          else
            for (int ox = lo; ox < hi; ++ox) out[ox] = src[ox * s.stride + dx];
          std::fill(out + hi, out + wo, T(0));
        }
      }
}

// Adjoint of im2col: scatter-add a column matrix back into an image.
template <class T>
void col2im(const T* col, int channels, int h, int w, const ConvSpec& s, int ho, int wo, T* x, int oy0 = 0,
            int oy1 = -1) {
  if (oy1 < 0) oy1 = ho;
  const std::size_t span = static_cast<std::size_t>(oy1 - oy0) * wo;
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < s.kh; ++i)
      for (int j = 0; j < s.kw; ++j) {
        const T* row = col + ((static_cast<std::size_t>(c) * s.kh + i) * s.kw + j) * span;
        const int dy = i * s.dilation - s.padding;
        const int dx = j * s.dilation - s.padding;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * s.stride + dy;
          if (iy < 0 || iy >= h) continue;
          const T* in = row + static_cast<std::size_t>(oy - oy0) * wo;
          T* dst = x + (static_cast<std::size_t>(c) * h + iy) * w;
          const auto [lo, hi] = valid_range(dx, s.stride, w, wo);
          if (s.stride == 1) {
            T* d = dst + dx;
            for (int ox = lo; ox < hi; ++ox) d[ox] += in[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox * s.stride + dx] += in[ox];
          }
        }
      }
}

// Output rows per im2col tile, sized so a tile's columns stay cache-resident.
inline int tile_rows(int k, int wo, int ho) {
  constexpr std::size_t kTileElements = 1 << 18;
  const std::size_t per_row = static_cast<std::size_t>(k) * wo;
  return static_cast<int>(std::clamp<std::size_t>(kTileElements / std::max<std::size_t>(per_row, 1), 1, ho));
}

template <class T>
using StridedMap = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;

/// Cross-correlation with dilation, stride and zero padding.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias,
                 const ConvSpec& s) {
  check_conv_shapes(x.shape(), weights.shape(), bias.shape(), s);
  const Shape xs = x.shape();
  const int ho = s.out_extent(xs.h, s.kh), wo = s.out_extent(xs.w, s.kw);
  Tensor<T> y(Shape{xs.n, s.out_channels, ho, wo});
  const int k = s.in_channels * s.kh * s.kw;
  const int p = ho * wo;
  const int rows = tile_rows(k, wo, ho);
  std::vector<T> col(static_cast<std::size_t>(k) * rows * wo);
  ConstMatrixMap<T> wm(weights.data(), s.out_channels, k);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(bias.data(), s.out_channels);
  for (int n = 0; n < xs.n; ++n)
    for (int oy0 = 0; oy0 < ho; oy0 += rows) {
      const int oy1 = std::min(ho, oy0 + rows), pt = (oy1 - oy0) * wo;
      im2col(x.data() + x.index(n, 0, 0, 0), xs.c, xs.h, xs.w, s, ho, wo, col.data(), oy0, oy1);
      ConstMatrixMap<T> cm(col.data(), k, pt);
      StridedMap<T> ym(y.data() + y.index(n, 0, oy0, 0), s.out_channels, pt, Eigen::OuterStride<>(p));
      ym.noalias() = wm * cm;
      ym.colwise() += bv;
    }
  return y;
}

template <class T>
struct ConvGrads {
  Tensor<T> dx;  // empty when not requested
  Tensor<T> dw;
  Tensor<T> db;
};

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weights, const ConvSpec& s,
                             const Tensor<T>& dy, bool want_dx) {
  const Shape xs = x.shape();
  const int ho = dy.shape().h, wo = dy.shape().w;
  const int k = s.in_channels * s.kh * s.kw;
  const int p = ho * wo;
  ConvGrads<T> g;
  g.dw = Tensor<T>(weights.shape());
  g.db = Tensor<T>(Shape{1, s.out_channels, 1, 1});
  if (want_dx) g.dx = Tensor<T>(xs);
  const int rows = tile_rows(k, wo, ho);
  std::vector<T> col(static_cast<std::size_t>(k) * rows * wo);
  ConstMatrixMap<T> wm(weights.data(), s.out_channels, k);
  MatrixMap<T> dwm(g.dw.data(), s.out_channels, k);
  for (int n = 0; n < xs.n; ++n) {
    // Plain loop: Eigen's vectorized reduction order depends on pointer
    // alignment, which would make results vary between runs.
    for (int o = 0; o < s.out_channels; ++o) {
      const T* row = dy.data() + dy.index(n, o, 0, 0);
      T acc = T(0);
      for (int i = 0; i < p; ++i) acc += row[i];
      g.db[o] += acc;
    }
    for (int oy0 = 0; oy0 < ho; oy0 += rows) {
      const int oy1 = std::min(ho, oy0 + rows), pt = (oy1 - oy0) * wo;
      ConstStridedMap<T> dym(dy.data() + dy.index(n, 0, oy0, 0), s.out_channels, pt, Eigen::OuterStride<>(p));
      im2col(x.data() + x.index(n, 0, 0, 0), xs.c, xs.h, xs.w, s, ho, wo, col.data(), oy0, oy1);
      ConstMatrixMap<T> cm(col.data(), k, pt);
      dwm.noalias() += dym * cm.transpose();
      if (want_dx) {
        MatrixMap<T> dcol(col.data(), k, pt);
        dcol.noalias() = wm.transpose() * dym;
        col2im(col.data(), xs.c, xs.h, xs.w, s, ho, wo, g.dx.data() + g.dx.index(n, 0, 0, 0), oy0, oy1);
      }
    }
  }
  return g;
}

/// Transposed-convolution weights (in, out, kh, kw) -> equivalent direct
/// convolution weights (out, in, kh, kw) with both spatial axes reversed.
template <class T>
Tensor<T> flip_transpose(const Tensor<T>& w) {
  const Shape s = w.shape();
  Tensor<T> r(Shape{s.c, s.n, s.h, s.w});
  for (int i = 0; i < s.n; ++i)
    for (int o = 0; o < s.c; ++o)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) r.at(o, i, s.h - 1 - y, s.w - 1 - x) = w.at(i, o, y, x);
  return r;
}

// Direct-convolution spec equivalent to a stride-1 transposed convolution.
inline ConvSpec deconv_as_conv(const ConvSpec& s) {
  if (s.stride != 1) throw ParameterError("deconv2d: only stride 1 is supported");
  ConvSpec c = s;
  c.padding = s.dilation * (s.kh - 1) - s.padding;
  if (s.kh != s.kw || c.padding < 0)
    throw ParameterError("deconv2d: padding exceeds dilated kernel extent");
  return c;
}

/// Stride-1 transposed convolution. Weights are laid out (in, out, kh, kw).
template <class T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias,
                   const ConvSpec& s) {
  const ConvSpec c = deconv_as_conv(s);
  if (!(weights.shape() == Shape{s.in_channels, s.out_channels, s.kh, s.kw}))
    throw ShapeError("deconv2d: weight shape " + weights.shape().str() + " inconsistent with spec");
  return conv2d(x, flip_transpose(weights), bias, c);
}

// Half-pixel-centre bilinear sampling along one axis: output index o maps to
// source coordinate (o + 0.5) * in / out - 0.5, clamped to [0, in - 1]; the two
// bracketing source samples get weights (1 - f) and f.
struct AxisWeights {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

inline AxisWeights bilinear_axis(int in, int out) {
  AxisWeights a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.frac.resize(out);
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    a.lo[o] = lo;
    a.hi[o] = std::min(lo + 1, in - 1);
    a.frac[o] = src - lo;
  }
  return a;
}

inline int scaled_extent(int in, double scale) {
  const int out = static_cast<int>(std::lround(in * scale));
  if (out < 1) throw ShapeError("resize_bilinear: resulting dimension < 1");
  return out;
}

template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: resulting dimension < 1");
  const Shape s = x.shape();
  const auto ay = bilinear_axis(s.h, out_h);
  const auto ax = bilinear_axis(s.w, out_w);
  Tensor<T> y(Shape{s.n, s.c, out_h, out_w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* src = x.data() + x.index(n, c, 0, 0);
      T* dst = y.data() + y.index(n, c, 0, 0);
      for (int oy = 0; oy < out_h; ++oy) {
        const T fy = static_cast<T>(ay.frac[oy]);
        const T* r0 = src + static_cast<std::size_t>(ay.lo[oy]) * s.w;
        const T* r1 = src + static_cast<std::size_t>(ay.hi[oy]) * s.w;
        for (int ox = 0; ox < out_w; ++ox) {
          const T fx = static_cast<T>(ax.frac[ox]);
          const T top = r0[ax.lo[ox]] * (T(1) - fx) + r0[ax.hi[ox]] * fx;
          const T bot = r1[ax.lo[ox]] * (T(1) - fx) + r1[ax.hi[ox]] * fx;
          dst[static_cast<std::size_t>(oy) * out_w + ox] = top * (T(1) - fy) + bot * fy;
        }
      }
    }
  return y;
}

template <class T>
Tensor<T> resize_bilinear_backward(const Shape& in, const Tensor<T>& dy) {
  const Shape s = dy.shape();
  const auto ay = bilinear_axis(in.h, s.h);
  const auto ax = bilinear_axis(in.w, s.w);
  Tensor<T> dx(in);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* g = dy.data() + dy.index(n, c, 0, 0);
      T* dst = dx.data() + dx.index(n, c, 0, 0);
      for (int oy = 0; oy < s.h; ++oy) {
        const T fy = static_cast<T>(ay.frac[oy]);
        T* r0 = dst + static_cast<std::size_t>(ay.lo[oy]) * in.w;
        T* r1 = dst + static_cast<std::size_t>(ay.hi[oy]) * in.w;
        for (int ox = 0; ox < s.w; ++ox) {
          const T fx = static_cast<T>(ax.frac[ox]);
          const T v = g[static_cast<std::size_t>(oy) * s.w + ox];
          r0[ax.lo[ox]] += v * (T(1) - fy) * (T(1) - fx);
          r0[ax.hi[ox]] += v * (T(1) - fy) * fx;
          r1[ax.lo[ox]] += v * fy * (T(1) - fx);
          r1[ax.hi[ox]] += v * fy * fx;
        }
      }
    }
  return dx;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError("concat_channels: " + sa.str() + " and " + sb.str() + " differ outside channels");
  Tensor<T> y(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t pa = sa.c * sa.plane(), pb = sb.c * sb.plane();
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a.data() + n * pa, pa, y.data() + n * (pa + pb));
    std::copy_n(b.data() + n * pb, pb, y.data() + n * (pa + pb) + pa);
  }
  return y;
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count) {
  const Shape s = x.shape();
  if (begin < 0 || count < 1 || begin + count > s.c)
    throw ShapeError("slice_channels: range outside " + s.str());
  Tensor<T> y(Shape{s.n, count, s.h, s.w});
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n)
    std::copy_n(x.data() + x.index(n, begin, 0, 0), count * plane, y.data() + y.index(n, 0, 0, 0));
  return y;
}

template <class T>
T mse(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape()))
    throw ShapeError("mse: shapes " + a.shape().str() + " and " + b.shape().str() + " differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return static_cast<T>(acc / static_cast<double>(a.size()));
}

}  // namespace kernels

using kernels::concat_channels;
using kernels::conv2d;
using kernels::deconv2d;
using kernels::mse;
using kernels::resize_bilinear;
using kernels::slice_channels;

template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& x, double scale) {
  return kernels::resize_bilinear(x, kernels::scaled_extent(x.shape().h, scale),
                                  kernels::scaled_extent(x.shape().w, scale));
}

template <class U, class T>
Tensor<U> tensor_cast(const Tensor<T>& t) {
  if constexpr (std::is_same_v<U, T>) {
    return t;
  } else {
    std::vector<U> v(t.values().begin(), t.values().end());
    return Tensor<U>(t.shape(), std::move(v));
  }
}

}  // namespace gfn
