#pragma once

// Dataset manifests and hazy-dataset generation from clean/depth pairs.
//
// Manifest document (JSON):
//   { "version": 1, "global_seed": u64, "depth_normalization": bool,
//     "depth_scale": real,
//     "entries": [ { "index", "clean_path", "depth_path", "hazy_path",
//                    "A", "beta", "noise_sigma", "rng_seed", ["error"] } ] }
// Paths are stored relative to the manifest's directory when possible.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gfn/errors.hpp"
#include "gfn/hazesim.hpp"
#include "gfn/io.hpp"
#include "gfn/rng.hpp"

namespace gfn {

namespace fs = std::filesystem;

inline constexpr int kManifestVersion = 1;
inline constexpr int kDefaultVariants = 7;
inline constexpr double kDefaultDepthScale = 10.0;

struct ManifestEntry {
  int index = 0;
  std::string clean_path;
  std::string depth_path;
  std::string hazy_path;
  HazeParams haze;
  std::uint64_t rng_seed = 0;
  std::string error;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  int version = kManifestVersion;
  std::uint64_t global_seed = 0;
  bool depth_normalization = true;
  double depth_scale = kDefaultDepthScale;
  std::vector<ManifestEntry> entries;
  fs::path base_dir;  // directory the relative paths resolve against; not serialized

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  }

  std::vector<const ManifestEntry*> usable() const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.error.empty()) out.push_back(&e);
    return out;
  }
};

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["version"] = m.version;
  j["global_seed"] = m.global_seed;
  j["depth_normalization"] = m.depth_normalization;
  j["depth_scale"] = m.depth_scale;
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : m.entries) {
    nlohmann::ordered_json r;
    r["index"] = e.index;
    r["clean_path"] = e.clean_path;
    r["depth_path"] = e.depth_path;
    r["hazy_path"] = e.hazy_path;
    r["A"] = e.haze.atmospheric_light;
    r["beta"] = e.haze.scattering_coefficient;
    r["noise_sigma"] = e.haze.noise_sigma;
    r["rng_seed"] = e.rng_seed;
    if (!e.error.empty()) r["error"] = e.error;
    j["entries"].push_back(std::move(r));
  }
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != kManifestVersion)
      throw FormatError("manifest: unsupported version " + std::to_string(m.version));
    m.global_seed = j.at("global_seed").get<std::uint64_t>();
    m.depth_normalization = j.at("depth_normalization").get<bool>();
    m.depth_scale = j.value("depth_scale", kDefaultDepthScale);
    for (const auto& r : j.at("entries")) {
      ManifestEntry e;
      e.index = r.at("index").get<int>();
      e.clean_path = r.at("clean_path").get<std::string>();
      e.depth_path = r.at("depth_path").get<std::string>();
      e.hazy_path = r.at("hazy_path").get<std::string>();
      e.haze.atmospheric_light = r.at("A").get<double>();
      e.haze.scattering_coefficient = r.at("beta").get<double>();
      e.haze.noise_sigma = r.at("noise_sigma").get<double>();
      e.rng_seed = r.at("rng_seed").get<std::uint64_t>();
      e.error = r.value("error", std::string());
      m.entries.push_back(std::move(e));
    }
    return m;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("manifest: ") + ex.what());
  }
}

inline void save_manifest(const fs::path& path, const DatasetManifest& m) {
  io::write_file(path, manifest_to_json(m).dump(2) + "\n");
}

inline DatasetManifest load_manifest(const fs::path& path) {
  const std::string text = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError("manifest " + path.string() + ": " + ex.what());
  }
  DatasetManifest m = manifest_from_json(j);
  m.base_dir = path.parent_path();
  return m;
}

// ---------------------------------------------------------------------------
// Generation

struct SourcePair {
  std::string clean_path;
  std::string depth_path;
};

struct SynthOptions {
  int variants = kDefaultVariants;
  std::uint64_t global_seed = 0;
  bool normalize_depth = true;
  double depth_scale = kDefaultDepthScale;
  std::optional<double> noise_sigma;  // overrides the sampled 0.01
  std::vector<double> fixed_betas;    // cycled per variant instead of sampling beta
  std::string extension = ".png";     // ".png" or ".gfni" for hazy outputs
};

// Per-entry seed and the two child streams drawn from it.
inline std::uint64_t entry_seed(std::uint64_t global_seed, int index) {
  return mix_seed(global_seed, static_cast<std::uint64_t>(index));
}
inline std::uint64_t params_seed(std::uint64_t rng_seed) { return mix_seed(rng_seed, 0); }
inline std::uint64_t noise_seed(std::uint64_t rng_seed) { return mix_seed(rng_seed, 1); }

inline std::string relative_to(const fs::path& p, const fs::path& base) {
  std::error_code ec;
  const auto rel = fs::relative(fs::absolute(p), fs::absolute(base), ec);
  return ec || rel.empty() ? p.string() : rel.generic_string();
}

/// Haze parameters of an entry, reproducible from its seed.
inline HazeParams entry_params(std::uint64_t rng_seed, int variant, const SynthOptions& opt) {
  HazeParams hp = sample_haze_params(params_seed(rng_seed));
  if (!opt.fixed_betas.empty())
    hp.scattering_coefficient = opt.fixed_betas[static_cast<std::size_t>(variant) % opt.fixed_betas.size()];
  if (opt.noise_sigma) hp.noise_sigma = *opt.noise_sigma;
  return hp;
}

/// Writes `variants` hazy images per pair under out_dir/hazy and the manifest
/// to out_dir/manifest.json. Unreadable pairs become error entries.
inline DatasetManifest generate_dataset(const std::vector<SourcePair>& pairs, const SynthOptions& opt,
                                        const fs::path& out_dir) {
  if (pairs.empty()) throw ParameterError("generate_dataset: no clean/depth pairs given");
  if (opt.variants < 1) throw ParameterError("generate_dataset: variants must be >= 1");
  fs::create_directories(out_dir / "hazy");

  DatasetManifest m;
  m.global_seed = opt.global_seed;
  m.depth_normalization = opt.normalize_depth;
  m.depth_scale = opt.depth_scale;
  m.base_dir = out_dir;

  int index = 0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& src = pairs[p];
    std::string failure;
    ImageRGB clean;
    GrayImage depth;
    try {
      clean = io::load_image(src.clean_path);
      clean.validate();
      depth = io::load_depth(src.depth_path, opt.depth_scale);
      if (depth.height != clean.height || depth.width != clean.width)
        throw ShapeError("depth and clean image differ in size");
      validate_depth(depth);
    } catch (const std::exception& ex) {
      failure = ex.what();
    }

    const std::string stem = fs::path(src.clean_path).stem().string();
    for (int v = 0; v < opt.variants; ++v, ++index) {
      ManifestEntry e;
      e.index = index;
      e.clean_path = relative_to(src.clean_path, out_dir);
      e.depth_path = relative_to(src.depth_path, out_dir);
      e.rng_seed = entry_seed(opt.global_seed, index);
      e.haze = entry_params(e.rng_seed, v, opt);
      if (!failure.empty()) {
        e.error = failure;
        m.entries.push_back(std::move(e));
        continue;
      }
      try {
        const auto t = transmission_from_depth(depth, e.haze.scattering_coefficient, opt.normalize_depth);
        const ImageRGB hazy = synthesize_hazy(clean, t, e.haze, noise_seed(e.rng_seed));
        const fs::path rel = fs::path("hazy") / (stem + "_p" + std::to_string(p) + "_v" +
                                                 std::to_string(v) + opt.extension);
        io::save_image(out_dir / rel, hazy);
        e.hazy_path = rel.generic_string();
      } catch (const std::exception& ex) {
        e.error = ex.what();
      }
      m.entries.push_back(std::move(e));
    }
  }
  save_manifest(out_dir / "manifest.json", m);
  return m;
}

/// Writes `count` procedural clean/depth scenes under out_dir/scenes.
inline std::vector<SourcePair> write_procedural_sources(int count, int height, int width,
                                                        std::uint64_t seed, const fs::path& out_dir,
                                                        const std::string& extension = ".png",
                                                        double depth_scale = kDefaultDepthScale) {
  std::vector<SourcePair> out;
  for (int i = 0; i < count; ++i) {
    const auto scene = procedural_scene(height, width, mix_seed(seed, static_cast<std::uint64_t>(i)));
    const fs::path clean = out_dir / "scenes" / ("scene" + std::to_string(i) + extension);
    const fs::path depth = out_dir / "scenes" / ("scene" + std::to_string(i) + "_depth" + extension);
    io::save_image(clean, scene.clean);
    io::save_depth(depth, scene.depth, depth_scale);
    out.push_back({clean.string(), depth.string()});
  }
  return out;
}

/// Loads the clean and hazy images of one manifest entry.
inline std::pair<ImageRGB, ImageRGB> load_entry(const DatasetManifest& m, const ManifestEntry& e) {
  if (!e.error.empty()) throw IoError("manifest entry " + std::to_string(e.index) + ": " + e.error);
  ImageRGB clean = io::load_image(m.resolve(e.clean_path));
  ImageRGB hazy = io::load_image(m.resolve(e.hazy_path));
  require_same_shape(clean, hazy, "manifest entry");
  return {std::move(clean), std::move(hazy)};
}

}  // namespace gfn
