#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>

#include "gfn/checkpoint.hpp"
#include "gfn/train.hpp"

namespace gfn {

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;  // every iteration
  std::function<void(const std::string&)> on_log;  // telemetry lines, every log_every
  std::optional<std::filesystem::path> checkpoint_path;  // periodic and final saves
};

/// "iter=<i> lr=<lr> L_cont=<c> L_adv=<a> L_total=<t>"
inline std::string telemetry_line(const StepLog& s) {
  std::ostringstream os;
  os.precision(9);
  os << "iter=" << s.iteration << " lr=" << s.lr << " L_cont=" << s.content << " L_adv=" << s.adversarial
     << " L_total=" << s.total;
  return os.str();
}

/// Runs from state.iteration up to state.config.total_iters. A non-finite
/// loss saves a diagnostic checkpoint (".nonfinite" suffix) and rethrows.
template <class T>
void train(TrainState<T>& state, const DatasetManifest& manifest, const TrainHooks& hooks = {}) {
  state.config.validate();
  ImageCache cache(manifest);
  const TrainConfig& cfg = state.config;
  while (state.iteration < cfg.total_iters) {
    const PatchBatch batch = sample_patch_batch(cache, cfg, state.iteration);
    StepLog log;
    try {
      log = train_step(state, batch);
    } catch (const NumericalError&) {
      if (hooks.checkpoint_path) {
        auto p = *hooks.checkpoint_path;
        p += ".nonfinite";
        save_checkpoint(state, p);
      }
      throw;
    }
    if (hooks.on_step) hooks.on_step(log);
    if (hooks.on_log && (log.iteration % cfg.log_every == 0 || state.iteration == cfg.total_iters))
      hooks.on_log(telemetry_line(log));
    if (hooks.checkpoint_path && cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0)
      save_checkpoint(state, *hooks.checkpoint_path);
  }
  if (hooks.checkpoint_path) save_checkpoint(state, *hooks.checkpoint_path);
}

/// Fresh run, or continuation of `resume` (whose config wins except for
/// total_iters, taken from cfg).
template <class T>
TrainState<T> train(const TrainConfig& cfg, const DatasetManifest& manifest,
                    std::optional<TrainState<T>> resume = std::nullopt, const TrainHooks& hooks = {}) {
  TrainState<T> state = resume ? std::move(*resume) : init_train_state<T>(cfg);
  state.config.total_iters = cfg.total_iters;
  train(state, manifest, hooks);
  return state;
}

}  // namespace gfn
