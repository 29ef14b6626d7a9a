#pragma once

// Reverse-mode differentiation over Tensor<T>. A Tape records every op as a
// node holding its value and a closure that pushes the node's gradient into
// its inputs. Nodes that do not depend on a parameter carry no closure and
// receive no gradient.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gfn/errors.hpp"
#include "gfn/tensor.hpp"

namespace gfn {

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Var constant(Tensor<T> value) { return push(std::move(value), false, {}); }
  Var parameter(Tensor<T> value) { return push(std::move(value), true, {}); }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of the last backward() target w.r.t. v; zeros if v did not
  // influence it.
  Tensor<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
  }

  // Accumulator for node id, allocated on first use.
  Tensor<T>& grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  void backward(Var loss) {
    if (nodes_.at(loss.id).value.size() != 1)
      throw std::logic_error("backward: loss must be a scalar, got shape " +
                             nodes_[loss.id].value.shape().str());
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_slot(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  // Records a derived node. `inputs` decide whether it needs a gradient;
  // the closure is kept only in that case.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backward fn) {
    bool rg = false;
    for (Var in : inputs) rg |= nodes_.at(in.id).requires_grad;
    return push(std::move(value), rg, rg ? std::move(fn) : Backward{});
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor<T> value, bool rg, Backward fn) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), rg, std::move(fn)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

namespace ad {

template <class T>
void accumulate(Tape<T>& tape, Var target, const Tensor<T>& g) {
  if (!tape.requires_grad(target)) return;
  Tensor<T>& slot = tape.grad_slot(target.id);
  for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
}

template <class T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b, const ConvSpec& spec) {
  auto y = kernels::conv2d(tape.value(x), tape.value(w), tape.value(b), spec);
  return tape.record(std::move(y), {x, w, b}, [x, w, b, spec](Tape<T>& t, std::size_t self) {
    auto g = kernels::conv2d_backward(t.value(x), t.value(w), spec, t.grad_slot(self),
                                      t.requires_grad(x));
    if (t.requires_grad(x)) accumulate(t, x, g.dx);
    accumulate(t, w, g.dw);
    accumulate(t, b, g.db);
  });
}

template <class T>
Var flip_transpose(Tape<T>& tape, Var w) {
  return tape.record(kernels::flip_transpose(tape.value(w)), {w}, [w](Tape<T>& t, std::size_t self) {
    // The map is a permutation whose inverse is itself up to the axis swap.
    accumulate(t, w, kernels::flip_transpose(t.grad_slot(self)));
  });
}

/// Stride-1 transposed convolution, weights (in, out, kh, kw); realized as
/// a direct convolution with flipped, axis-swapped kernels.
template <class T>
Var deconv2d(Tape<T>& tape, Var x, Var w, Var b, const ConvSpec& spec) {
  const ConvSpec as_conv = kernels::deconv_as_conv(spec);
  if (!(tape.value(w).shape() == Shape{spec.in_channels, spec.out_channels, spec.kh, spec.kw}))
    throw ShapeError("deconv2d: weight shape " + tape.value(w).shape().str() +
                     " inconsistent with spec");
  return conv2d(tape, x, flip_transpose(tape, w), b, as_conv);
}

enum class Activation { relu, sigmoid, leaky_relu };

inline constexpr double kLeakySlope = 0.2;

template <class T>
Var activation(Tape<T>& tape, Var x, Activation kind) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T v = xv[i];
    switch (kind) {
      case Activation::relu: y[i] = v > T(0) ? v : T(0); break;
      case Activation::sigmoid: y[i] = T(1) / (T(1) + std::exp(-v)); break;
      case Activation::leaky_relu: y[i] = v > T(0) ? v : static_cast<T>(kLeakySlope) * v; break;
    }
  }
  return tape.record(std::move(y), {x}, [x, kind](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_slot(self);
    Tensor<T> dx(g.shape());
    if (kind == Activation::sigmoid) {
      const Tensor<T>& yv = t.value(Var{self});
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * yv[i] * (T(1) - yv[i]);
    } else {
      const T neg = kind == Activation::relu ? T(0) : static_cast<T>(kLeakySlope);
      const Tensor<T>& xv = t.value(x);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] = xv[i] > T(0) ? g[i] : neg * g[i];
    }
    accumulate(t, x, dx);
  });
}

template <class T>
Var relu(Tape<T>& tape, Var x) { return activation(tape, x, Activation::relu); }
template <class T>
Var sigmoid(Tape<T>& tape, Var x) { return activation(tape, x, Activation::sigmoid); }
template <class T>
Var leaky_relu(Tape<T>& tape, Var x) { return activation(tape, x, Activation::leaky_relu); }

template <class T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const int ca = tape.value(a).shape().c, cb = tape.value(b).shape().c;
  auto y = kernels::concat_channels(tape.value(a), tape.value(b));
  return tape.record(std::move(y), {a, b}, [a, b, ca, cb](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_slot(self);
    if (t.requires_grad(a)) accumulate(t, a, kernels::slice_channels(g, 0, ca));
    if (t.requires_grad(b)) accumulate(t, b, kernels::slice_channels(g, ca, cb));
  });
}

template <class T>
Var slice_channels(Tape<T>& tape, Var x, int begin, int count) {
  auto y = kernels::slice_channels(tape.value(x), begin, count);
  return tape.record(std::move(y), {x}, [x, begin, count](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_slot(self);
    Tensor<T>& dx = t.grad_slot(x.id);
    const Shape s = dx.shape();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < count; ++c)
        for (std::size_t p = 0; p < s.plane(); ++p)
          dx[dx.index(n, begin + c, 0, 0) + p] += g[g.index(n, c, 0, 0) + p];
  });
}

template <class T>
Var resize_bilinear(Tape<T>& tape, Var x, int out_h, int out_w) {
  const Shape in = tape.value(x).shape();
  auto y = kernels::resize_bilinear(tape.value(x), out_h, out_w);
  return tape.record(std::move(y), {x}, [x, in](Tape<T>& t, std::size_t self) {
    accumulate(t, x, kernels::resize_bilinear_backward(in, t.grad_slot(self)));
  });
}

template <class T>
Var resize_bilinear(Tape<T>& tape, Var x, double scale) {
  const Shape s = tape.value(x).shape();
  return resize_bilinear(tape, x, kernels::scaled_extent(s.h, scale),
                         kernels::scaled_extent(s.w, scale));
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (!(av.shape() == bv.shape())) throw ShapeError("add: shape mismatch");
  Tensor<T> y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return tape.record(std::move(y), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const Tensor<T> g = t.grad_slot(self);
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

template <class T>
Var scale(Tape<T>& tape, Var x, T k) {
  Tensor<T> y = tape.value(x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= k;
  return tape.record(std::move(y), {x}, [x, k](Tape<T>& t, std::size_t self) {
    Tensor<T> g = t.grad_slot(self);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= k;
    accumulate(t, x, g);
  });
}

/// gate (N,1,H,W) broadcast across the channels of x (N,C,H,W), multiplied
/// elementwise. Equal channel counts multiply without broadcasting.
template <class T>
Var gate(Tape<T>& tape, Var gate_map, Var x) {
  const Tensor<T>& gv = tape.value(gate_map);
  const Tensor<T>& xv = tape.value(x);
  const Shape gs = gv.shape(), xs = xv.shape();
  if (gs.n != xs.n || gs.h != xs.h || gs.w != xs.w || (gs.c != 1 && gs.c != xs.c))
    throw ShapeError("gate: map " + gs.str() + " cannot broadcast over " + xs.str());
  Tensor<T> y(xs);
  const std::size_t plane = xs.plane();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T* gp = gv.data() + gv.index(n, gs.c == 1 ? 0 : c, 0, 0);
      const T* xp = xv.data() + xv.index(n, c, 0, 0);
      T* yp = y.data() + y.index(n, c, 0, 0);
      for (std::size_t p = 0; p < plane; ++p) yp[p] = gp[p] * xp[p];
    }
  return tape.record(std::move(y), {gate_map, x}, [gate_map, x](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_slot(self);
    const Tensor<T>& gv = t.value(gate_map);
    const Tensor<T>& xv = t.value(x);
    const Shape gs = gv.shape(), xs = xv.shape();
    const std::size_t plane = xs.plane();
    if (t.requires_grad(gate_map)) {
      Tensor<T>& dg = t.grad_slot(gate_map.id);
      for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
          T* dgp = dg.data() + dg.index(n, gs.c == 1 ? 0 : c, 0, 0);
          const T* xp = xv.data() + xv.index(n, c, 0, 0);
          const T* gp = g.data() + g.index(n, c, 0, 0);
          for (std::size_t p = 0; p < plane; ++p) dgp[p] += gp[p] * xp[p];
        }
    }
    if (t.requires_grad(x)) {
      Tensor<T>& dx = t.grad_slot(x.id);
      for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
          const T* gmp = gv.data() + gv.index(n, gs.c == 1 ? 0 : c, 0, 0);
          const T* gp = g.data() + g.index(n, c, 0, 0);
          T* dxp = dx.data() + dx.index(n, c, 0, 0);
          for (std::size_t p = 0; p < plane; ++p) dxp[p] += gp[p] * gmp[p];
        }
    }
  });
}

/// Mean of squared differences over all elements; scalar (1,1,1,1) result.
template <class T>
Var mse(Tape<T>& tape, Var a, Var b) {
  const T value = kernels::mse(tape.value(a), tape.value(b));
  return tape.record(Tensor<T>(Shape{}, value), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const T g = t.grad_slot(self)[0];
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    const T k = T(2) * g / static_cast<T>(av.size());
    Tensor<T> da(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) da[i] = k * (av[i] - bv[i]);
    accumulate(t, a, da);
    if (t.requires_grad(b)) {
      for (auto& v : da.values()) v = -v;
      accumulate(t, b, da);
    }
  });
}

/// Per-item spatial and channel mean: (N,C,H,W) -> (N,1,1,1).
template <class T>
Var global_average(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  const Shape s = xv.shape();
  const std::size_t per = s.c * s.plane();
  Tensor<T> y(Shape{s.n, 1, 1, 1});
  for (int n = 0; n < s.n; ++n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) acc += xv[n * per + i];
    y[n] = static_cast<T>(acc / static_cast<double>(per));
  }
  return tape.record(std::move(y), {x}, [x, s, per](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_slot(self);
    Tensor<T> dx(s);
    for (int n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < per; ++i) dx[n * per + i] = g[n] / static_cast<T>(per);
    accumulate(t, x, dx);
  });
}

/// mean_i log(clamp(p_i)) or, with `complement`, mean_i log(1 - clamp(p_i)),
/// where clamp restricts to [eps, 1 - eps]. The gradient is zero where the
/// clamp is active.
template <class T>
Var mean_log(Tape<T>& tape, Var p, bool complement, double eps = 1e-7) {
  const Tensor<T>& pv = tape.value(p);
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double q = std::clamp(static_cast<double>(pv[i]), eps, 1.0 - eps);
    acc += std::log(complement ? 1.0 - q : q);
  }
  const T value = static_cast<T>(acc / static_cast<double>(pv.size()));
  return tape.record(Tensor<T>(Shape{}, value), {p},
                     [p, complement, eps](Tape<T>& t, std::size_t self) {
                       const T g = t.grad_slot(self)[0];
                       const Tensor<T>& pv = t.value(p);
                       Tensor<T> dp(pv.shape());
                       const double n = static_cast<double>(pv.size());
                       for (std::size_t i = 0; i < pv.size(); ++i) {
                         const double q = static_cast<double>(pv[i]);
                         if (q < eps || q > 1.0 - eps) continue;
                         dp[i] = static_cast<T>(g * (complement ? -1.0 / (1.0 - q) : 1.0 / q) / n);
                       }
                       accumulate(t, p, dp);
                     });
}

}  // namespace ad
}  // namespace gfn
