#pragma once

#include <functional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "gfn/dataset.hpp"
#include "gfn/metrics.hpp"
#include "gfn/network.hpp"

namespace gfn {

using DehazeFn = std::function<ImageRGB(const ImageRGB&)>;

struct EvalOptions {
  bool quantize_8bit = false;  // score after rounding both images to 8 bits
};

/// Dehazes every usable manifest entry with `model`, scores it against its
/// clean image and aggregates per haze-level group. Entries that cannot be
/// read are reported with an error and excluded from the means.
inline MetricReport evaluate(const DatasetManifest& manifest, const DehazeFn& model,
                             const EvalOptions& opt = {}) {
  MetricReport report;
  for (const auto& e : manifest.entries) {
    ImageScore s;
    s.id = e.hazy_path.empty() ? "entry" + std::to_string(e.index) : e.hazy_path;
    s.beta = e.haze.scattering_coefficient;
    s.group = haze_group(s.beta);
    try {
      auto [clean, hazy] = load_entry(manifest, e);
      ImageRGB out = model(hazy);
      require_same_shape(out, clean, "evaluate");
      out.clamp_unit();
      if (opt.quantize_8bit) {
        out = quantize8(out);
        clean = quantize8(clean);
      }
      s.psnr = psnr(out, clean);
      s.ssim = ssim(out, clean);
    } catch (const std::exception& ex) {
      s.error = ex.what();
    }
    report.images.push_back(std::move(s));
  }
  report.aggregate();
  return report;
}

template <class T>
MetricReport evaluate(const DatasetManifest& manifest, const GfnParams<T>& params, const EvalOptions& opt = {}) {
  return evaluate(manifest, [&](const ImageRGB& img) { return dehaze(img, params); }, opt);
}

inline nlohmann::ordered_json report_to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["images"] = nlohmann::ordered_json::array();
  for (const auto& s : r.images) {
    nlohmann::ordered_json row{{"id", s.id}, {"group", s.group}, {"beta", s.beta}};
    if (s.error.empty()) {
      row["psnr"] = s.psnr;
      row["ssim"] = s.ssim;
    } else {
      row["error"] = s.error;
    }
    j["images"].push_back(std::move(row));
  }
  j["groups"] = nlohmann::ordered_json::object();
  for (const auto& [name, g] : r.groups)
    j["groups"][name] = {{"count", g.count}, {"psnr", g.mean_psnr}, {"ssim", g.mean_ssim}};
  j["overall"] = {{"count", r.overall.count}, {"psnr", r.overall.mean_psnr}, {"ssim", r.overall.mean_ssim}};
  j["failed"] = r.failed;
  return j;
}

/// Rows Light / Medium / Heavy / Random / All, "PSNR/SSIM" per row.
inline std::string report_table(const MetricReport& r, const std::string& method = "GFN") {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os << "haze\t" << method << "\n";
  auto row = [&](const std::string& label, const Aggregate& a) {
    os.precision(2);
    os << label << "\t" << a.mean_psnr << "/";
    os.precision(3);
    os << a.mean_ssim << "\n";
  };
  for (const char* g : {"light", "medium", "heavy", "random"}) {
    auto it = r.groups.find(g);
    if (it != r.groups.end()) {
      std::string label = g;
      label[0] = static_cast<char>(std::toupper(label[0]));
      row(label, it->second);
    }
  }
  row("All", r.overall);
  return os.str();
}

}  // namespace gfn
