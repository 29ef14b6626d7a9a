#pragma once

// Command-line front end: gfn synth | train | dehaze | eval.
//
// Every setting can come from a flag (--patch-size 64) or from a JSON
// config file (--config run.json, key "patch_size"). Flags win over the
// file, the file wins over defaults. The resolved settings are logged as a
// JSON object that is itself a valid config file for the same command.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gfn/checkpoint.hpp"
#include "gfn/dataset.hpp"
#include "gfn/errors.hpp"
#include "gfn/evaluate.hpp"
#include "gfn/io.hpp"
#include "gfn/trainer.hpp"

namespace gfn::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3, kValidation = 4, kNumerical = 5 };

struct CliConfig {
  std::string command;

  std::uint64_t seed = 0;
  std::string log_level = "info";  // quiet | info | debug
  std::string precision = "float";  // float | double, for fresh training runs
  std::string out;  // synth: dataset dir; train: checkpoint; dehaze: image or dir; eval: report

  // synth
  std::string clean_dir;  // <name>.png with <name>_depth.png (or .gfni)
  int procedural = 0;     // generate this many scenes instead of reading clean_dir
  int procedural_size = 128;
  int variants = kDefaultVariants;
  bool no_depth_normalization = false;
  double depth_scale = kDefaultDepthScale;
  std::optional<double> noise_sigma;
  std::vector<double> betas;  // fixed per-variant betas; empty samples them
  std::string format = "png";

  // train
  std::string manifest;
  std::string resume;
  std::int64_t iters = 240000;
  int patch_size = 128;
  int batch_size = 10;
  double lr = 1e-4;
  double lr_decay = 0.75;
  std::int64_t decay_every = 10000;
  double weight_decay = 1e-5;
  double adversarial_weight = kAdversarialWeight;
  int log_every = 100;
  std::int64_t checkpoint_every = 0;
  int scale_count = 3;
  int features = 32;
  bool single_scale = false;
  bool equal_weight_fusion = false;
  bool no_adversarial = false;
  double gamma = kDefaultGamma;
  double gamma_alpha = kDefaultGammaAlpha;

  // dehaze / eval
  std::string model;
  std::string input;
  bool dump_maps = false;
  bool identity = false;  // eval: score the hazy input itself
  bool quantize_8bit = false;
};

namespace detail {

struct Binding {
  std::string key;
  std::function<void(const nlohmann::json&)> from_json;
  std::function<Json()> to_json;
  std::function<bool()> given;  // set on the command line
  std::function<void()> commit;  // copy the flag value into the config
};

inline std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

template <class V>
bool json_matches(const nlohmann::json& j) {
  if constexpr (std::is_same_v<V, bool>) return j.is_boolean();
  else if constexpr (std::is_integral_v<V>) return j.is_number_integer() && (std::is_signed_v<V> || j.is_number_unsigned());
  else if constexpr (std::is_floating_point_v<V>) return j.is_number();
  else if constexpr (std::is_same_v<V, std::string>) return j.is_string();
  else if constexpr (std::is_same_v<V, std::optional<double>>) return j.is_null() || j.is_number();
  else if constexpr (std::is_same_v<V, std::vector<double>>)
    return j.is_array() && std::all_of(j.begin(), j.end(), [](const auto& e) { return e.is_number(); });
  else static_assert(sizeof(V) == 0, "unsupported setting type");
}

template <class V>
const char* type_label() {
  if constexpr (std::is_same_v<V, bool>) return "a boolean";
  else if constexpr (std::is_integral_v<V>) return "an integer";
  else if constexpr (std::is_floating_point_v<V>) return "a number";
  else if constexpr (std::is_same_v<V, std::string>) return "a string";
  else if constexpr (std::is_same_v<V, std::optional<double>>) return "a number or null";
  else return "an array of numbers";
}

class Registry {
 public:
  Registry(CLI::App* app, CliConfig& cfg) : app_(app), cfg_(cfg) {}

  template <class V>
  CLI::Option* add(const std::string& key, V CliConfig::*member, const std::string& help) {
    V& field = cfg_.*member;
    auto staged = std::make_shared<V>(field);
    CLI::Option* opt;
    if constexpr (std::is_same_v<V, bool>)
      opt = app_->add_flag(flag_name(key), *staged, help);
    else
      opt = app_->add_option(flag_name(key), *staged, help);
    bindings_.push_back(Binding{
        key,
        [&field, key](const nlohmann::json& j) {
          if (!json_matches<V>(j))
            throw UsageError("config key '" + key + "' must be " + type_label<V>() + ", got " + j.dump());
          if constexpr (std::is_same_v<V, std::optional<double>>)
            field = j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
          else
            field = j.get<V>();
        },
        [&field]() -> Json {
          if constexpr (std::is_same_v<V, std::optional<double>>)
            return field ? Json(*field) : Json(nullptr);
          else
            return Json(field);
        },
        [opt] { return opt->count() > 0; },
        [&field, staged] { field = *staged; }});
    return opt;
  }

  const std::vector<Binding>& bindings() const { return bindings_; }

 private:
  CLI::App* app_;
  CliConfig& cfg_;
  std::vector<Binding> bindings_;
};

inline void add_common(Registry& r) {
  r.add("seed", &CliConfig::seed, "Global RNG seed");
  r.add("log_level", &CliConfig::log_level, "quiet | info | debug");
}

}  // namespace detail

/// Parsed command line, or nullopt when --help was printed.
struct ParseResult {
  std::optional<CliConfig> config;
  Json resolved;  // command plus every setting of that command
};

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"synth", "train", "dehaze", "eval"};
  return c;
}

/// Parses `args` (without the program name). Usage problems throw
/// UsageError naming the offending flag or key; --help writes to `out`.
inline ParseResult parse_config(const std::vector<std::string>& args, std::ostream& out = std::cout) {
  CLI::App app{"Gated fusion network for single-image dehazing", "gfn"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");

  CliConfig cfg;
  std::map<std::string, std::unique_ptr<detail::Registry>> regs;
  std::map<std::string, std::string> config_files;
  std::map<std::string, CLI::App*> subs;

  auto make = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    subs[name] = sub;
    sub->add_option("--config", config_files[name], "JSON file with settings (flags take precedence)")
        ->check(CLI::ExistingFile);
    regs[name] = std::make_unique<detail::Registry>(sub, cfg);
    detail::add_common(*regs[name]);
    return regs[name].get();
  };

  {
    auto* r = make("synth", "Synthesize a hazy dataset from clean images and depth maps");
    r->add("clean_dir", &CliConfig::clean_dir, "Directory of <name>.png + <name>_depth.png pairs");
    r->add("procedural", &CliConfig::procedural, "Generate this many procedural scenes instead");
    r->add("procedural_size", &CliConfig::procedural_size, "Side length of procedural scenes");
    r->add("out", &CliConfig::out, "Output dataset directory");
    r->add("variants", &CliConfig::variants, "Hazy variants per clean image");
    r->add("no_depth_normalization", &CliConfig::no_depth_normalization, "Use raw depth instead of d / max(d)");
    r->add("depth_scale", &CliConfig::depth_scale, "Depth units per full-scale PNG value");
    r->add("noise_sigma", &CliConfig::noise_sigma, "Override the Gaussian noise level");
    r->add("betas", &CliConfig::betas, "Fixed scattering coefficients cycled over variants");
    r->add("format", &CliConfig::format, "png | gfni")->check(CLI::IsMember({"png", "gfni"}));
  }
  {
    auto* r = make("train", "Train a model on a dataset manifest");
    r->add("manifest", &CliConfig::manifest, "Dataset manifest.json");
    r->add("out", &CliConfig::out, "Checkpoint path");
    r->add("resume", &CliConfig::resume, "Continue from this checkpoint");
    r->add("precision", &CliConfig::precision, "float | double")->check(CLI::IsMember({"float", "double"}));
    r->add("iters", &CliConfig::iters, "Total iterations");
    r->add("patch_size", &CliConfig::patch_size, "Training crop side");
    r->add("batch_size", &CliConfig::batch_size, "Crops per iteration");
    r->add("lr", &CliConfig::lr, "Initial learning rate");
    r->add("lr_decay", &CliConfig::lr_decay, "Learning-rate decay factor");
    r->add("decay_every", &CliConfig::decay_every, "Iterations between decays");
    r->add("weight_decay", &CliConfig::weight_decay, "Decoupled weight decay");
    r->add("adversarial_weight", &CliConfig::adversarial_weight, "Weight of the adversarial term");
    r->add("log_every", &CliConfig::log_every, "Telemetry interval");
    r->add("checkpoint_every", &CliConfig::checkpoint_every, "Checkpoint interval (0: only at the end)");
    r->add("scale_count", &CliConfig::scale_count, "Pyramid levels");
    r->add("features", &CliConfig::features, "Channels per hidden layer");
    r->add("single_scale", &CliConfig::single_scale, "Ablation: one scale");
    r->add("equal_weight_fusion", &CliConfig::equal_weight_fusion, "Ablation: fixed 1/3 confidence maps");
    r->add("no_adversarial", &CliConfig::no_adversarial, "Ablation: content loss only");
    r->add("gamma", &CliConfig::gamma, "Gamma of the gamma-corrected input");
    r->add("gamma_alpha", &CliConfig::gamma_alpha, "Scale of the gamma-corrected input");
  }
  {
    auto* r = make("dehaze", "Dehaze an image or a directory of images");
    r->add("model", &CliConfig::model, "Checkpoint");
    r->add("input", &CliConfig::input, "Hazy image or directory");
    r->add("out", &CliConfig::out, "Output image or directory");
    r->add("dump_maps", &CliConfig::dump_maps, "Also write the three confidence maps");
  }
  {
    auto* r = make("eval", "Score a model on a dataset manifest");
    r->add("manifest", &CliConfig::manifest, "Dataset manifest.json");
    r->add("model", &CliConfig::model, "Checkpoint");
    r->add("identity", &CliConfig::identity, "Score the hazy inputs themselves");
    r->add("quantize_8bit", &CliConfig::quantize_8bit, "Round outputs and references to 8 bits first");
    r->add("out", &CliConfig::out, "JSON report path");
  }

  std::vector<const char*> argv{"gfn"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    const auto chosen = app.get_subcommands();
    out << (chosen.empty() ? app.help() : chosen.front()->help());
    return {};
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return {};
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  cfg.command = cmd;
  const auto& bindings = regs.at(cmd)->bindings();

  if (!config_files[cmd].empty()) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(io::read_file(config_files[cmd]));
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config file " + config_files[cmd] + ": " + e.what());
    }
    if (!doc.is_object()) throw UsageError("config file " + config_files[cmd] + " must hold a JSON object");
    for (const auto& [key, value] : doc.items()) {
      if (key == "command") {
        if (value != cmd) throw UsageError("config file is for command " + value.dump() + ", not '" + cmd + "'");
        continue;
      }
      auto it = std::find_if(bindings.begin(), bindings.end(), [&](const auto& b) { return b.key == key; });
      if (it == bindings.end()) throw UsageError("unknown config key '" + key + "' for command '" + cmd + "'");
      it->from_json(value);
    }
  }
  for (const auto& b : bindings)
    if (b.given()) b.commit();

  ParseResult r;
  r.resolved["command"] = cmd;
  for (const auto& b : bindings) r.resolved[b.key] = b.to_json();
  r.config = cfg;
  return r;
}

// ---------------------------------------------------------------------------
// Commands

namespace detail {

inline void require(const std::string& value, const std::string& key) {
  if (value.empty()) throw UsageError("missing required setting '" + key + "' (" + flag_name(key) + ")");
}

inline std::shared_ptr<spdlog::logger> make_logger(std::ostream& err, const std::string& level) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto log = std::make_shared<spdlog::logger>("gfn", sink);
  log->set_pattern("[%l] %v");
  if (level == "quiet")
    log->set_level(spdlog::level::warn);
  else if (level == "debug")
    log->set_level(spdlog::level::debug);
  else if (level == "info")
    log->set_level(spdlog::level::info);
  else
    throw UsageError("log_level must be quiet, info or debug, got '" + level + "'");
  return log;
}

inline bool is_image_file(const fs::path& p) { return p.extension() == ".png" || p.extension() == ".gfni"; }

inline std::vector<fs::path> sorted_images(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

/// Clean images in `dir` paired with their "<stem>_depth" sibling.
inline std::vector<SourcePair> scan_pairs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("synth: not a directory: " + dir.string());
  std::vector<SourcePair> pairs;
  for (const auto& p : sorted_images(dir)) {
    const std::string stem = p.stem().string();
    if (stem.size() > 6 && stem.ends_with("_depth")) continue;
    pairs.push_back({p.string(), (dir / (stem + "_depth" + p.extension().string())).string()});
  }
  if (pairs.empty()) throw IoError("synth: no clean images found in " + dir.string());
  return pairs;
}

inline int run_synth(const CliConfig& c, spdlog::logger& log) {
  require(c.out, "out");
  const std::string ext = "." + c.format;
  std::vector<SourcePair> pairs;
  if (c.procedural > 0) {
    pairs = write_procedural_sources(c.procedural, c.procedural_size, c.procedural_size, c.seed, c.out, ext,
                                     c.depth_scale);
    log.info("synth: wrote {} procedural scenes to {}", pairs.size(), (fs::path(c.out) / "scenes").string());
  } else {
    require(c.clean_dir, "clean_dir");
    pairs = scan_pairs(c.clean_dir);
  }
  SynthOptions opt;
  opt.variants = c.variants;
  opt.global_seed = c.seed;
  opt.normalize_depth = !c.no_depth_normalization;
  opt.depth_scale = c.depth_scale;
  opt.noise_sigma = c.noise_sigma;
  opt.fixed_betas = c.betas;
  opt.extension = ext;
  const auto m = generate_dataset(pairs, opt, c.out);
  const std::size_t ok = m.usable().size();
  for (const auto& e : m.entries)
    if (!e.error.empty()) log.warn("synth: entry {} ({}): {}", e.index, e.clean_path, e.error);
  log.info("synth: {} of {} hazy images written, manifest {}", ok, m.entries.size(),
           (fs::path(c.out) / "manifest.json").string());
  if (ok == 0) throw IoError("synth: no pair could be read");
  return kOk;
}

inline TrainConfig train_config(const CliConfig& c) {
  TrainConfig t;
  t.patch_size = c.patch_size;
  t.batch_size = c.batch_size;
  t.lr0 = c.lr;
  t.lr_decay = c.lr_decay;
  t.decay_every = c.decay_every;
  t.weight_decay = c.weight_decay;
  t.total_iters = c.iters;
  t.adversarial_enabled = !c.no_adversarial;
  t.adversarial_weight = c.adversarial_weight;
  t.seed = c.seed;
  t.log_every = c.log_every;
  t.checkpoint_every = c.checkpoint_every;
  t.model.scale_count = c.single_scale ? 1 : c.scale_count;
  t.model.features = c.features;
  t.model.equal_weight_fusion = c.equal_weight_fusion;
  t.model.gamma = c.gamma;
  t.model.gamma_alpha = c.gamma_alpha;
  return t;
}

template <class T>
void train_as(const CliConfig& c, const DatasetManifest& m, spdlog::logger& log) {
  const TrainConfig cfg = train_config(c);
  std::optional<TrainState<T>> resume;
  if (!c.resume.empty()) {
    resume = load_checkpoint<T>(c.resume);
    log.info("train: resuming {} at iteration {}", c.resume, resume->iteration);
  }
  TrainHooks hooks;
  hooks.checkpoint_path = fs::path(c.out);
  hooks.on_log = [&log](const std::string& line) { log.info("{}", line); };
  const auto s = train<T>(cfg, m, std::move(resume), hooks);
  log.info("train: {} iterations done, checkpoint {}", s.iteration, c.out);
}

inline DType dtype_of_file(const fs::path& p) { return checkpoint_dtype(io::read_file(p)); }

inline int run_train(const CliConfig& c, spdlog::logger& log) {
  require(c.manifest, "manifest");
  require(c.out, "out");
  const auto m = load_manifest(c.manifest);
  bool use_double = c.precision == "double";
  if (!c.resume.empty()) {
    use_double = dtype_of_file(c.resume) == DType::f64;
    if (use_double != (c.precision == "double"))
      log.warn("train: precision follows the resumed checkpoint ({})", use_double ? "double" : "float");
  } else if (c.precision != "float" && c.precision != "double") {
    throw UsageError("precision must be float or double, got '" + c.precision + "'");
  }
  if (use_double)
    train_as<double>(c, m, log);
  else
    train_as<float>(c, m, log);
  return kOk;
}

template <class T>
void dehaze_as(const CliConfig& c, const std::string& bytes, spdlog::logger& log) {
  const GfnParams<T> params = decode_checkpoint<T>(bytes).gen;
  const fs::path in(c.input), out(c.out);
  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(in)) {
    for (const auto& p : sorted_images(in)) jobs.emplace_back(p, out / p.filename());
    if (jobs.empty()) throw IoError("dehaze: no images in " + in.string());
  } else {
    jobs.emplace_back(in, out);
  }
  for (const auto& [src, dst] : jobs) {
    const ImageRGB img = io::load_image(src);
    const auto r = dehaze_full(img, params);
    io::save_image(dst, r.image());
    if (c.dump_maps) {
      const char* names[3] = {"wb", "ce", "gc"};
      for (int i = 0; i < 3; ++i) {
        const fs::path p = dst.parent_path() / (dst.stem().string() + "_conf_" + names[i] + ".png");
        io::write_png_gray8(p, r.maps[i]);
      }
    }
    log.info("dehaze: {} -> {}", src.string(), dst.string());
  }
}

inline int run_dehaze(const CliConfig& c, spdlog::logger& log) {
  require(c.model, "model");
  require(c.input, "input");
  require(c.out, "out");
  const std::string bytes = io::read_file(c.model);
  if (checkpoint_dtype(bytes) == DType::f64)
    dehaze_as<double>(c, bytes, log);
  else
    dehaze_as<float>(c, bytes, log);
  return kOk;
}

inline int run_eval(const CliConfig& c, std::ostream& out, spdlog::logger& log) {
  require(c.manifest, "manifest");
  if (c.identity == !c.model.empty()) throw UsageError("eval needs exactly one of --model and --identity");
  const auto m = load_manifest(c.manifest);
  const EvalOptions opt{c.quantize_8bit};
  MetricReport r;
  std::string method = "hazy";
  if (c.identity) {
    r = evaluate(m, [](const ImageRGB& x) { return x; }, opt);
  } else {
    const std::string bytes = io::read_file(c.model);
    method = fs::path(c.model).stem().string();
    if (checkpoint_dtype(bytes) == DType::f64)
      r = evaluate(m, decode_checkpoint<double>(bytes).gen, opt);
    else
      r = evaluate(m, decode_checkpoint<float>(bytes).gen, opt);
  }
  for (const auto& s : r.images)
    if (!s.error.empty()) log.warn("eval: {}: {}", s.id, s.error);
  if (r.overall.count == 0) throw IoError("eval: no entry could be scored");
  out << report_table(r, method);
  if (!c.out.empty()) {
    io::write_file(c.out, report_to_json(r).dump(2) + "\n");
    log.info("eval: report written to {}", c.out);
  }
  return kOk;
}

}  // namespace detail

/// Runs the already-parsed command. Errors propagate as exceptions.
inline int dispatch(const CliConfig& c, std::ostream& out, spdlog::logger& log) {
  if (c.command == "synth") return detail::run_synth(c, log);
  if (c.command == "train") return detail::run_train(c, log);
  if (c.command == "dehaze") return detail::run_dehaze(c, log);
  if (c.command == "eval") return detail::run_eval(c, out, log);
  throw UsageError("unknown command '" + c.command + "'");
}

/// Full entry point: parse, echo the resolved config, dispatch, and map
/// exceptions to exit codes.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::string cmd = "gfn";
  try {
    const ParseResult p = parse_config(args, out);
    if (!p.config) return kOk;
    cmd += " " + p.config->command;
    auto log = detail::make_logger(err, p.config->log_level);
    // The resolved config is always echoed, whatever the verbosity.
    const auto level = log->level();
    log->set_level(spdlog::level::info);
    log->info("resolved config: {}", p.resolved.dump());
    log->set_level(level);
    return dispatch(*p.config, out, *log);
  } catch (const UsageError& e) {
    err << cmd << ": usage error: " << e.what() << "\n" << "run 'gfn --help' for usage\n";
    return kUsage;
  } catch (const IoError& e) {
    err << cmd << ": I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << cmd << ": I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericalError& e) {
    err << cmd << ": numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::invalid_argument& e) {
    err << cmd << ": validation error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    err << cmd << ": error: " << e.what() << "\n";
    return kFailure;
  }
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace gfn::cli
