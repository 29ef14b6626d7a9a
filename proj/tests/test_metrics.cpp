#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gfn/evaluate.hpp"
#include "support.hpp"

using namespace gfn;

TEST(Psnr, WorkedExampleAndCap) {
  const ImageRGB a(8, 8, 0.5), b(8, 8, 0.6);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
  EXPECT_EQ(psnr(a, a), 100.0);
  ImageRGB c = a;
  c.data[0] += 1e-8;
  EXPECT_EQ(psnr(a, c), 100.0);
  EXPECT_THROW(psnr(a, ImageRGB(8, 9)), ShapeError);
}

TEST(Psnr, SymmetricAndMatchesOracle) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto a = test::random_image(13, 17, rng), b = test::random_image(13, 17, rng);
    EXPECT_DOUBLE_EQ(psnr(a, b), psnr(b, a));
    EXPECT_NEAR(psnr(a, b), test::naive_psnr(a, b), 1e-10);
  }
}

TEST(Ssim, IdentityIsOne) {
  std::mt19937_64 rng(2);
  const auto a = test::random_image(24, 31, rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, ConstantBlackVersusWhite) {
  EXPECT_NEAR(ssim(ImageRGB(16, 16, 0.0), ImageRGB(16, 16, 1.0)), 9.999e-5, 1e-9);
}

TEST(Ssim, SymmetricBoundedAndMatchesOracle) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto a = test::random_image(11 + i % 7, 11 + i % 5, rng);
    auto b = a;
    std::normal_distribution<double> n(0.0, 0.05 * (i + 1));
    for (double& v : b.data) v = std::clamp(v + n(rng), 0.0, 1.0);
    const double s = ssim(a, b);
    EXPECT_NEAR(s, ssim(b, a), 1e-15);
    EXPECT_LE(s, 1.0);
    EXPECT_GE(s, -1.0);
    EXPECT_NEAR(s, test::naive_ssim(a, b), 1e-8);
  }
}

TEST(Ssim, InvariantToCommonTranslation) {
  // Circularly shifting both images by the same amount only changes which
  // windows are valid; for periodic content the score is unchanged.
  const int h = 32, w = 32;
  ImageRGB a(h, w), b(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        a.at(y, x, c) = 0.5 + 0.4 * std::sin(2 * M_PI * (x + 2 * y + c) / 16.0);
        b.at(y, x, c) = 0.5 + 0.3 * std::sin(2 * M_PI * (x + 2 * y + c + 1) / 16.0);
      }
  auto shift = [&](const ImageRGB& src, int dy, int dx) {
    ImageRGB out(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at((y + dy) % h, (x + dx) % w, c);
    return out;
  };
  EXPECT_NEAR(ssim(shift(a, 16, 16), shift(b, 16, 16)), ssim(a, b), 1e-6);
}

TEST(Ssim, TooSmall) { EXPECT_THROW(ssim(ImageRGB(10, 20), ImageRGB(10, 20)), ShapeError); }

TEST(Metrics, HazeGroups) {
  EXPECT_EQ(haze_group(0.8), "light");
  EXPECT_EQ(haze_group(1.0), "medium");
  EXPECT_EQ(haze_group(1.2), "heavy");
  EXPECT_EQ(haze_group(0.93), "random");
}

TEST(Metrics, Quantize) {
  ImageRGB a(1, 1, 0.5);
  a.data[1] = 1.3;
  const auto q = quantize8(a);
  EXPECT_DOUBLE_EQ(q.data[0], 128.0 / 255.0);
  EXPECT_EQ(q.data[1], 1.0);
}

TEST(Report, AggregationMatchesManualMeans) {
  MetricReport r;
  r.images = {{"a", "light", 0.8, 20.0, 0.8, ""},
              {"b", "light", 0.8, 30.0, 0.9, ""},
              {"c", "random", 1.1, 25.0, 0.7, ""},
              {"d", "heavy", 1.2, 0.0, 0.0, "unreadable"}};
  r.aggregate();
  EXPECT_EQ(r.failed, 1);
  EXPECT_EQ(r.overall.count, 3);
  EXPECT_NEAR(r.overall.mean_psnr, 25.0, 1e-12);
  EXPECT_NEAR(r.overall.mean_ssim, 0.8, 1e-12);
  EXPECT_NEAR(r.groups.at("light").mean_psnr, 25.0, 1e-12);
  EXPECT_NEAR(r.groups.at("light").mean_ssim, 0.85, 1e-12);
  EXPECT_EQ(r.groups.count("heavy"), 0u);

  const auto table = report_table(r);
  EXPECT_NE(table.find("Light\t25.00/0.850"), std::string::npos) << table;
  EXPECT_NE(table.find("All\t25.00/0.800"), std::string::npos) << table;
  const auto j = report_to_json(r);
  EXPECT_EQ(j["failed"], 1);
  EXPECT_EQ(j["images"][3]["error"], "unreadable");
}

TEST(Evaluate, IdentityModelScoresHazyInput) {
  const auto dir = test::temp_dir("metrics_eval");
  const auto pairs = write_procedural_sources(2, 24, 24, 9, dir / "src", ".gfni");
  SynthOptions opt;
  opt.variants = 3;
  opt.fixed_betas = {0.8, 1.0, 1.2};
  opt.extension = ".gfni";
  auto m = generate_dataset(pairs, opt, dir / "data");
  m.entries.push_back(ManifestEntry{99, "missing.gfni", "missing_d.gfni", "missing_h.gfni", {}, 0, ""});

  const auto r = evaluate(m, [](const ImageRGB& x) { return x; });
  ASSERT_EQ(r.images.size(), 7u);
  EXPECT_EQ(r.failed, 1);
  EXPECT_EQ(r.groups.at("light").count, 2);
  double sum = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto [clean, hazy] = load_entry(m, m.entries[i]);
    EXPECT_NEAR(r.images[i].psnr, test::naive_psnr(hazy, clean), 1e-10);
    EXPECT_NEAR(r.images[i].ssim, test::naive_ssim(hazy, clean), 1e-8);
    sum += r.images[i].psnr;
  }
  EXPECT_NEAR(r.overall.mean_psnr, sum / 6, 1e-12);
  // Heavier haze scores lower against the clean image.
  EXPECT_GT(r.groups.at("light").mean_psnr, r.groups.at("heavy").mean_psnr);

  const auto q = evaluate(m, [](const ImageRGB& x) { return x; }, EvalOptions{true});
  EXPECT_NEAR(q.overall.mean_psnr, r.overall.mean_psnr, 1.0);
}
