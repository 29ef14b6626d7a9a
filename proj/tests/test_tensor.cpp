#include <gtest/gtest.h>

#include <random>

#include "gfn/autodiff.hpp"
#include "gfn/tensor.hpp"
#include "support.hpp"

using namespace gfn;
using gfn::test::random_tensor;

namespace {

Tensor<double> zero_bias(int c) { return Tensor<double>(Shape{1, c, 1, 1}); }

Tensor<double> center_kernel() {
  Tensor<double> w(Shape{1, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1.0;
  return w;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Conv2d, IdentityKernelReproducesInput) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor({1, 1, 6, 7}, rng);
  const auto y = conv2d(x, center_kernel(), zero_bias(1), ConvSpec::same(1, 1, 3));
  EXPECT_EQ(y, x);
}

TEST(Conv2d, AllOnesKernelSumsNineNeighbours) {
  const Tensor<double> x(Shape{1, 1, 5, 5}, 0.3);
  const Tensor<double> w(Shape{1, 1, 3, 3}, 1.0);
  const auto y = conv2d(x, w, zero_bias(1), ConvSpec::same(1, 1, 3));
  EXPECT_NEAR(y.at(0, 0, 2, 2), 9 * 0.3, 1e-15);
  EXPECT_NEAR(y.at(0, 0, 0, 0), 4 * 0.3, 1e-15);  // zero padding at the corner
}

TEST(Conv2d, DilatedIdentity) {
  std::mt19937_64 rng(2);
  const auto x = random_tensor({1, 1, 8, 8}, rng);
  const auto y = conv2d(x, center_kernel(), zero_bias(1), ConvSpec::same(1, 1, 3, 2));
  EXPECT_EQ(ConvSpec::same(1, 1, 3, 2).padding, 2);
  EXPECT_EQ(y, x);
}

TEST(Conv2d, MatchesNaiveReference) {
  std::mt19937_64 rng(3);
  const std::vector<ConvSpec> specs = {
      ConvSpec::same(3, 4, 3), ConvSpec::same(2, 5, 5), ConvSpec::same(4, 3, 3, 2), ConvSpec::same(3, 3, 3, 4),
      ConvSpec{3, 2, 3, 3, 2, 1, 1}, ConvSpec{2, 2, 3, 3, 1, 1, 0}};
  for (const auto& s : specs) {
    const auto x = random_tensor({2, s.in_channels, 11, 9}, rng);
    const auto w = random_tensor({s.out_channels, s.in_channels, s.kh, s.kw}, rng);
    const auto b = random_tensor({1, s.out_channels, 1, 1}, rng);
    EXPECT_LT(max_abs_diff(conv2d(x, w, b, s), test::naive_conv2d(x, w, b, s)), 1e-10);
  }
}

TEST(Conv2d, ShapeErrors) {
  const Tensor<double> x(Shape{1, 3, 4, 4});
  EXPECT_THROW(conv2d(x, Tensor<double>(Shape{2, 2, 3, 3}), zero_bias(2), ConvSpec::same(3, 2, 3)), ShapeError);
  EXPECT_THROW(conv2d(x, Tensor<double>(Shape{2, 3, 3, 3}), zero_bias(3), ConvSpec::same(3, 2, 3)), ShapeError);
  EXPECT_THROW(conv2d(x, Tensor<double>(Shape{2, 4, 3, 3}), zero_bias(2), ConvSpec::same(4, 2, 3)), ShapeError);
}

TEST(Deconv2d, IdentityAndBiasOnly) {
  std::mt19937_64 rng(4);
  const auto x = random_tensor({1, 1, 5, 5}, rng);
  EXPECT_EQ(deconv2d(x, center_kernel(), zero_bias(1), ConvSpec::same(1, 1, 3)), x);

  Tensor<double> bias(Shape{1, 2, 1, 1});
  bias[0] = 0.25;
  bias[1] = -0.5;
  const auto y = deconv2d(x, Tensor<double>(Shape{1, 2, 3, 3}), bias, ConvSpec::same(1, 2, 3));
  for (int yy = 0; yy < 5; ++yy)
    for (int xx = 0; xx < 5; ++xx) {
      EXPECT_EQ(y.at(0, 0, yy, xx), 0.25);
      EXPECT_EQ(y.at(0, 1, yy, xx), -0.5);
    }
}

TEST(Deconv2d, EqualsConvWithFlippedKernel) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor({1, 1, 4, 4}, rng);
  const auto w = random_tensor({1, 1, 3, 3}, rng);
  const auto b = zero_bias(1);
  const ConvSpec s = ConvSpec::same(1, 1, 3);
  Tensor<double> flipped(Shape{1, 1, 3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) flipped.at(0, 0, i, j) = w.at(0, 0, 2 - i, 2 - j);
  EXPECT_LT(max_abs_diff(deconv2d(x, w, b, s), test::naive_conv2d(x, flipped, b, s)), 1e-10);
}

TEST(Deconv2d, MatchesScatterReference) {
  std::mt19937_64 rng(6);
  for (const auto& s : {ConvSpec::same(4, 3, 3), ConvSpec::same(6, 2, 3, 2), ConvSpec::same(2, 3, 5)}) {
    const auto x = random_tensor({2, s.in_channels, 7, 6}, rng);
    const auto w = random_tensor({s.in_channels, s.out_channels, s.kh, s.kw}, rng);
    const auto b = random_tensor({1, s.out_channels, 1, 1}, rng);
    EXPECT_LT(max_abs_diff(deconv2d(x, w, b, s), test::naive_deconv2d(x, w, b, s)), 1e-10);
  }
}

TEST(Deconv2d, RejectsStride) {
  const Tensor<double> x(Shape{1, 1, 4, 4});
  ConvSpec s = ConvSpec::same(1, 1, 3);
  s.stride = 2;
  EXPECT_THROW(deconv2d(x, center_kernel(), zero_bias(1), s), ParameterError);
}

TEST(Activation, Values) {
  Tape<double> tape;
  Tensor<double> x(Shape{1, 1, 1, 3});
  x[0] = -1.0;
  x[1] = 2.0;
  x[2] = 0.0;
  const Var v = tape.constant(x);
  const auto& r = tape.value(ad::relu(tape, v));
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 2.0);
  const auto& s = tape.value(ad::sigmoid(tape, v));
  EXPECT_NEAR(s[1], 0.880797, 1e-6);
  EXPECT_EQ(s[2], 0.5);
  const auto& l = tape.value(ad::leaky_relu(tape, v));
  EXPECT_DOUBLE_EQ(l[0], -0.2);
  EXPECT_EQ(l[1], 2.0);
}

TEST(Concat, ShapeOrderAndRoundTrip) {
  std::mt19937_64 rng(7);
  const auto a = random_tensor({1, 3, 8, 8}, rng);
  const auto b = random_tensor({1, 32, 8, 8}, rng);
  const auto ab = concat_channels(a, b);
  EXPECT_EQ(ab.shape(), (Shape{1, 35, 8, 8}));
  EXPECT_EQ(slice_channels(ab, 0, 3), a);
  EXPECT_EQ(slice_channels(ab, 3, 32), b);

  const auto c = random_tensor({1, 3, 8, 8}, rng);
  EXPECT_NE(concat_channels(a, c), concat_channels(c, a));
  EXPECT_THROW(concat_channels(a, random_tensor({1, 3, 4, 8}, rng)), ShapeError);
}

TEST(ResizeBilinear, ConstantsStayConstant) {
  const Tensor<double> x(Shape{1, 2, 6, 5}, 0.7);
  for (double scale : {0.5, 2.0, 1.5}) {
    const auto y = resize_bilinear(x, scale);
    for (double v : y.values()) EXPECT_NEAR(v, 0.7, 1e-15);
  }
}

TEST(ResizeBilinear, HalfPixelUpsampleGolden) {
  // Columns 0,1 upsampled x2: source coords -0.25, 0.25, 0.75, 1.25, clamped
  // to [0,1] -> weights give 0, 0.25, 0.75, 1.
  Tensor<double> x(Shape{1, 1, 2, 2});
  x.at(0, 0, 0, 1) = 1.0;
  x.at(0, 0, 1, 1) = 1.0;
  const auto y = resize_bilinear(x, 2.0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  const double expected[4] = {0.0, 0.25, 0.75, 1.0};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(y.at(0, 0, r, c), expected[c], 1e-15);
}

TEST(ResizeBilinear, HalvingIsBoxAverage) {
  std::mt19937_64 rng(8);
  const auto x = random_tensor({1, 3, 128, 128}, rng);
  const auto y = resize_bilinear(x, 0.5);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 64, 64}));
  const double box = (x.at(0, 1, 10, 20) + x.at(0, 1, 10, 21) + x.at(0, 1, 11, 20) + x.at(0, 1, 11, 21)) / 4;
  EXPECT_NEAR(y.at(0, 1, 5, 10), box, 1e-15);
}

TEST(ResizeBilinear, PreservesRange) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_tensor({1, 2, 3 + trial % 7, 4 + trial % 5}, rng, -2.0, 3.0);
    const auto [lo, hi] = std::minmax_element(x.values().begin(), x.values().end());
    for (double scale : {0.5, 2.0, 1.7}) {
      const auto y = resize_bilinear(x, scale);
      for (double v : y.values()) {
        EXPECT_GE(v, *lo - 1e-12);
        EXPECT_LE(v, *hi + 1e-12);
      }
    }
  }
}

TEST(ResizeBilinear, RejectsEmptyResult) {
  EXPECT_THROW(resize_bilinear(Tensor<double>(Shape{1, 1, 2, 2}), 0.1), ShapeError);
}

TEST(Mse, Examples) {
  std::mt19937_64 rng(10);
  const auto a = random_tensor({1, 3, 4, 4}, rng);
  EXPECT_EQ(mse(a, a), 0.0);
  Tensor<double> p(Shape{}, 0.5), q(Shape{}, 0.3);
  EXPECT_NEAR(mse(p, q), 0.04, 1e-15);
  const auto b = random_tensor({1, 3, 4, 4}, rng);
  EXPECT_EQ(mse(a, b), mse(b, a));
  EXPECT_THROW(mse(a, random_tensor({1, 3, 4, 5}, rng)), ShapeError);
}

TEST(Tensor, ShapeInvariants) {
  EXPECT_THROW(Tensor<double>(Shape{1, 0, 2, 2}), ShapeError);
  EXPECT_THROW(Tensor<double>(Shape{1, 1, 2, 2}, std::vector<double>(3)), ShapeError);
}
