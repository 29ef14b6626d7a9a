#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gfn/dataset.hpp"
#include "gfn/hazesim.hpp"
#include "support.hpp"

using namespace gfn;

namespace {

DepthMap ramp_depth(int h, int w, double max_depth) {
  DepthMap d(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) d.at(y, x) = max_depth * (y * w + x) / (h * w - 1.0);
  return d;
}

HazeParams no_noise(double a, double beta = 1.0) { return HazeParams{a, beta, 0.0}; }

}  // namespace

TEST(Transmission, Examples) {
  DepthMap d(1, 3);
  d.at(0, 0) = 0.0;
  d.at(0, 1) = 0.693147;
  d.at(0, 2) = 2.0;
  const auto t = transmission_from_depth(d, 1.0, false);
  EXPECT_EQ(t.at(0, 0), 1.0);
  EXPECT_NEAR(t.at(0, 1), 0.5, 1e-6);

  const auto tn = transmission_from_depth(ramp_depth(4, 4, 7.0), 1.5, true);
  EXPECT_NEAR(*std::min_element(tn.data.begin(), tn.data.end()), 0.22313, 1e-5);
  EXPECT_NEAR(*std::min_element(tn.data.begin(), tn.data.end()), std::exp(-1.5), 1e-15);
}

TEST(Transmission, Errors) {
  const auto d = ramp_depth(2, 2, 1.0);
  EXPECT_THROW(transmission_from_depth(d, 0.0, false), ParameterError);
  EXPECT_THROW(transmission_from_depth(d, -1.0, true), ParameterError);
  EXPECT_THROW(transmission_from_depth(DepthMap(2, 2, 0.0), 1.0, true), ParameterError);
}

TEST(Transmission, Monotonicity) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int trial = 0; trial < 500; ++trial) {
    DepthMap d(1, 2);
    d.at(0, 0) = u(rng);
    d.at(0, 1) = u(rng);
    const double b1 = 0.1 + u(rng), b2 = b1 + u(rng);
    const auto t1 = transmission_from_depth(d, b1, false);
    const auto t2 = transmission_from_depth(d, b2, false);
    if (d.at(0, 0) <= d.at(0, 1)) EXPECT_GE(t1.at(0, 0), t1.at(0, 1));
    EXPECT_GE(t1.at(0, 0), t2.at(0, 0));
    EXPECT_GT(t2.at(0, 1), 0.0);
    EXPECT_LE(t1.at(0, 0), 1.0);
  }
}

TEST(Synthesize, LimitCases) {
  std::mt19937_64 rng(2);
  const auto clean = test::random_image(5, 4, rng);
  EXPECT_EQ(synthesize_hazy(clean, TransmissionMap(5, 4, 1.0), no_noise(0.9), 0), clean);
  const auto hazy = synthesize_hazy(clean, TransmissionMap(5, 4, 1e-15), no_noise(0.85), 0);
  for (double v : hazy.data) EXPECT_NEAR(v, 0.85, 1e-14);
}

TEST(Synthesize, ScatteringModelValue) {
  const ImageRGB clean(1, 1, 0.8);
  const auto hazy = synthesize_hazy(clean, TransmissionMap(1, 1, 0.5), no_noise(0.9), 0);
  for (double v : hazy.data) EXPECT_NEAR(v, 0.85, 1e-15);
}

TEST(Synthesize, ShapeMismatch) {
  EXPECT_THROW(synthesize_hazy(ImageRGB(2, 3), TransmissionMap(3, 2, 1.0), no_noise(0.9), 0), ShapeError);
}

TEST(Synthesize, ConvexBoundAndInversion) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto clean = test::random_image(6, 7, rng);
    const double a = 0.8 + 0.2 * u(rng), beta = 0.5 + u(rng);
    const auto t = transmission_from_depth(ramp_depth(6, 7, 1.0 + 5 * u(rng)), beta, true);
    const auto hazy = synthesize_hazy(clean, t, no_noise(a, beta), trial);
    for (std::size_t p = 0; p < clean.pixels(); ++p)
      for (int c = 0; c < 3; ++c) {
        const double j = clean.data[p * 3 + c], i = hazy.data[p * 3 + c];
        EXPECT_GE(i, std::min(j, a) - 1e-15);
        EXPECT_LE(i, std::max(j, a) + 1e-15);
        if (t.data[p] >= 0.05) EXPECT_NEAR((i - a * (1 - t.data[p])) / t.data[p], j, 1e-6);
      }
  }
}

TEST(Synthesize, SeededNoise) {
  const ImageRGB clean(64, 64, 0.5);
  const TransmissionMap t(64, 64, 1.0);
  const HazeParams p{0.9, 1.0, 0.01};
  const auto a = synthesize_hazy(clean, t, p, 99);
  EXPECT_EQ(a, synthesize_hazy(clean, t, p, 99));
  EXPECT_NE(a, synthesize_hazy(clean, t, p, 100));
  double sq = 0.0;
  for (double v : a.data) sq += (v - 0.5) * (v - 0.5);
  EXPECT_NEAR(std::sqrt(sq / a.data.size()), 0.01, 0.0005);
}

TEST(SampleHazeParams, RangesDeterminismAndMean) {
  double beta_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto p = sample_haze_params(seed);
    EXPECT_GT(p.atmospheric_light, 0.8);
    EXPECT_LT(p.atmospheric_light, 1.0);
    EXPECT_GE(p.scattering_coefficient, 0.5);
    EXPECT_LE(p.scattering_coefficient, 1.5);
    EXPECT_EQ(p.noise_sigma, 0.01);
    beta_sum += p.scattering_coefficient;
  }
  EXPECT_NEAR(beta_sum / 10000.0, 1.0, 0.02);
  EXPECT_EQ(sample_haze_params(1234), sample_haze_params(1234));
}

TEST(ProceduralScene, ValidAndSeeded) {
  const auto s = procedural_scene(48, 64, 5);
  EXPECT_NO_THROW(s.clean.validate());
  EXPECT_NO_THROW(validate_depth(s.depth));
  EXPECT_EQ(s.clean, procedural_scene(48, 64, 5).clean);
  EXPECT_NE(s.clean, procedural_scene(48, 64, 6).clean);
}

class DatasetTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = test::temp_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
  }
  std::filesystem::path dir_;
};

TEST_F(DatasetTest, SevenVariantsPerPair) {
  const auto pairs = write_procedural_sources(2, 32, 32, 1, dir_ / "src");
  SynthOptions opt;
  opt.global_seed = 7;
  const auto m = generate_dataset(pairs, opt, dir_ / "out");
  ASSERT_EQ(m.entries.size(), 14u);
  int files = 0;
  for (const auto& e : m.entries) {
    EXPECT_TRUE(e.error.empty()) << e.error;
    EXPECT_TRUE(std::filesystem::exists(m.resolve(e.hazy_path)));
    EXPECT_EQ(e.rng_seed, entry_seed(7, e.index));
    EXPECT_EQ(e.haze, entry_params(e.rng_seed, e.index % 7, opt));
    ++files;
  }
  EXPECT_EQ(files, 14);
  EXPECT_TRUE(std::filesystem::exists(dir_ / "out" / "manifest.json"));
}

TEST_F(DatasetTest, ReproducibleFromSeed) {
  const auto pairs = write_procedural_sources(1, 24, 24, 2, dir_ / "src");
  SynthOptions opt;
  opt.global_seed = 11;
  opt.variants = 3;
  const auto a = generate_dataset(pairs, opt, dir_ / "a");
  const auto b = generate_dataset(pairs, opt, dir_ / "b");
  EXPECT_EQ(a.entries, b.entries);
  EXPECT_EQ(io::read_file(dir_ / "a" / "manifest.json"), io::read_file(dir_ / "b" / "manifest.json"));
  for (std::size_t i = 0; i < a.entries.size(); ++i)
    EXPECT_EQ(io::read_file(a.resolve(a.entries[i].hazy_path)), io::read_file(b.resolve(b.entries[i].hazy_path)));
}

TEST_F(DatasetTest, NoiseFreeEntryMatchesIndependentRecomputation) {
  const auto pairs = write_procedural_sources(1, 20, 28, 3, dir_ / "src", ".gfni");
  SynthOptions opt;
  opt.variants = 1;
  opt.noise_sigma = 0.0;
  opt.extension = ".gfni";
  const auto m = generate_dataset(pairs, opt, dir_ / "out");
  const auto& e = m.entries.at(0);
  const ImageRGB clean = io::load_image(m.resolve(e.clean_path));
  const GrayImage depth = io::load_depth(m.resolve(e.depth_path), m.depth_scale);
  const ImageRGB hazy = io::load_image(m.resolve(e.hazy_path));
  const double dmax = *std::max_element(depth.data.begin(), depth.data.end());
  for (int y = 0; y < clean.height; ++y)
    for (int x = 0; x < clean.width; ++x) {
      const double t = std::exp(-e.haze.scattering_coefficient * depth.at(y, x) / dmax);
      for (int c = 0; c < 3; ++c) {
        const double expected = clean.at(y, x, c) * t + e.haze.atmospheric_light * (1 - t);
        EXPECT_NEAR(hazy.at(y, x, c), expected, 1e-6);
      }
    }
}

TEST_F(DatasetTest, UnreadableInputsRecordedAndGenerationContinues) {
  auto pairs = write_procedural_sources(1, 16, 16, 4, dir_ / "src");
  pairs.insert(pairs.begin(), SourcePair{(dir_ / "missing.png").string(), (dir_ / "missing_d.png").string()});
  SynthOptions opt;
  opt.variants = 2;
  const auto m = generate_dataset(pairs, opt, dir_ / "out");
  ASSERT_EQ(m.entries.size(), 4u);
  EXPECT_FALSE(m.entries[0].error.empty());
  EXPECT_FALSE(m.entries[1].error.empty());
  EXPECT_TRUE(m.entries[2].error.empty());
  EXPECT_EQ(m.usable().size(), 2u);
}

TEST_F(DatasetTest, EmptyInputIsAnError) {
  EXPECT_THROW(generate_dataset({}, SynthOptions{}, dir_), ParameterError);
}

TEST_F(DatasetTest, ManifestRoundTripAndFixedBetas) {
  const auto pairs = write_procedural_sources(1, 16, 16, 5, dir_ / "src");
  SynthOptions opt;
  opt.variants = 3;
  opt.fixed_betas = {0.8, 1.0, 1.2};
  opt.normalize_depth = false;
  const auto m = generate_dataset(pairs, opt, dir_ / "out");
  const auto loaded = load_manifest(dir_ / "out" / "manifest.json");
  EXPECT_EQ(loaded.entries, m.entries);
  EXPECT_FALSE(loaded.depth_normalization);
  EXPECT_EQ(loaded.entries[0].haze.scattering_coefficient, 0.8);
  EXPECT_EQ(loaded.entries[2].haze.scattering_coefficient, 1.2);
  const auto j = manifest_to_json(m);
  for (const char* key : {"version", "global_seed", "depth_normalization", "entries"}) EXPECT_TRUE(j.contains(key));
  for (const char* key : {"clean_path", "depth_path", "hazy_path", "A", "beta", "noise_sigma", "rng_seed"})
    EXPECT_TRUE(j["entries"][0].contains(key)) << key;
}

TEST_F(DatasetTest, MalformedManifestRejected) {
  io::write_file(dir_ / "bad.json", "{\"version\": 9, \"global_seed\": 0, \"depth_normalization\": true, \"entries\": []}");
  EXPECT_THROW(load_manifest(dir_ / "bad.json"), FormatError);
  io::write_file(dir_ / "bad2.json", "{not json");
  EXPECT_THROW(load_manifest(dir_ / "bad2.json"), FormatError);
}
