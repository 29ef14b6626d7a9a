#pragma once

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gfn/autodiff.hpp"
#include "gfn/dataset.hpp"
#include "gfn/errors.hpp"
#include "gfn/network.hpp"
#include "gfn/rng.hpp"

namespace gfn {

struct TrainConfig {
  int patch_size = 128;
  int batch_size = 10;
  double lr0 = 1e-4;
  double lr_decay = 0.75;
  std::int64_t decay_every = 10000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-5;
  std::int64_t total_iters = 240000;
  bool adversarial_enabled = true;
  double adversarial_weight = kAdversarialWeight;
  std::uint64_t seed = 0;
  int log_every = 100;
  std::int64_t checkpoint_every = 0;  // 0: only at the end
  GfnConfig model;

  void validate() const {
    model.validate();
    if (patch_size < 1 || batch_size < 1 || !(lr0 > 0) || !(lr_decay > 0) || decay_every < 1 ||
        !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(epsilon > 0) ||
        weight_decay < 0 || total_iters < 0 || log_every < 1 || checkpoint_every < 0)
      throw ParameterError("invalid training configuration");
    if (patch_size % (1 << (model.scale_count - 1)) != 0)
      throw ParameterError("patch_size must be divisible by 2^(scale_count-1)");
    if (adversarial_enabled && patch_size < 32)
      throw ParameterError("the discriminator needs patches of at least 32x32");
  }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline nlohmann::ordered_json to_json(const GfnConfig& c) {
  return {{"scale_count", c.scale_count}, {"features", c.features},
          {"equal_weight_fusion", c.equal_weight_fusion}, {"gamma_alpha", c.gamma_alpha}, {"gamma", c.gamma}};
}

inline GfnConfig gfn_config_from_json(const nlohmann::json& j) {
  GfnConfig c;
  c.scale_count = j.at("scale_count").get<int>();
  c.features = j.at("features").get<int>();
  c.equal_weight_fusion = j.at("equal_weight_fusion").get<bool>();
  c.gamma_alpha = j.at("gamma_alpha").get<double>();
  c.gamma = j.at("gamma").get<double>();
  return c;
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"patch_size", c.patch_size},
          {"batch_size", c.batch_size},
          {"lr0", c.lr0},
          {"lr_decay", c.lr_decay},
          {"decay_every", c.decay_every},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"weight_decay", c.weight_decay},
          {"total_iters", c.total_iters},
          {"adversarial_enabled", c.adversarial_enabled},
          {"adversarial_weight", c.adversarial_weight},
          {"seed", c.seed},
          {"log_every", c.log_every},
          {"checkpoint_every", c.checkpoint_every},
          {"model", to_json(c.model)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.patch_size = j.at("patch_size").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr0 = j.at("lr0").get<double>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.decay_every = j.at("decay_every").get<std::int64_t>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.total_iters = j.at("total_iters").get<std::int64_t>();
  c.adversarial_enabled = j.at("adversarial_enabled").get<bool>();
  c.adversarial_weight = j.at("adversarial_weight").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.log_every = j.at("log_every").get<int>();
  c.checkpoint_every = j.at("checkpoint_every").get<std::int64_t>();
  c.model = gfn_config_from_json(j.at("model"));
  return c;
}

/// lr0 * decay^floor(iter / decay_every), rounded to 15 significant digits so
/// decimal settings give the decimal product (1e-4 * 0.75 == 7.5e-5).
inline double lr_at(std::int64_t iter, const TrainConfig& cfg) {
  if (iter < 0) throw ParameterError("lr_at: negative iteration");
  const double raw = cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(iter / cfg.decay_every));
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, raw, std::chars_format::scientific, 14).ptr;
  double lr = raw;
  std::from_chars(buf, end, lr);
  return lr;
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay

template <class T>
struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor<T>> m;  // first moments, one per parameter tensor
  std::vector<Tensor<T>> v;  // second moments

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

template <class T>
AdamState<T> adam_init(const std::vector<Tensor<T>*>& params) {
  AdamState<T> s;
  for (const auto* p : params) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

/// One bias-corrected Adam update (epsilon added to sqrt(v_hat)) followed by
/// the decoupled decay theta -= lr * weight_decay * theta, where the decay uses
/// theta from before the step.
template <class T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state, double lr, const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    const Tensor<T>& g = grads[i];
    if (!(p.shape() == g.shape()) || !(p.shape() == state.m[i].shape()))
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i));
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      const double mk = cfg.beta1 * static_cast<double>(m[k]) + (1.0 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * static_cast<double>(v[k]) + (1.0 - cfg.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double theta = static_cast<double>(p[k]);
      const double update = lr * (mk / c1) / (std::sqrt(vk / c2) + cfg.epsilon);
      p[k] = static_cast<T>(theta - update - lr * cfg.weight_decay * theta);
    }
  }
}

template <class T>
std::vector<Tensor<T>*> param_list(GfnParams<T>& p) {
  std::vector<Tensor<T>*> out;
  p.for_each([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <class T>
std::vector<Tensor<T>*> param_list(DiscParams<T>& p) {
  std::vector<Tensor<T>*> out;
  p.for_each([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

// ---------------------------------------------------------------------------
// Patch sampling

struct PatchBatch {
  std::vector<ImageRGB> hazy;
  std::vector<ImageRGB> clean;
  std::vector<int> entry;  // manifest entry index per item
  std::vector<std::pair<int, int>> offset;  // (y, x) in the (possibly padded) image
};

/// Decoded manifest images, loaded on first use.
class ImageCache {
 public:
  explicit ImageCache(const DatasetManifest& m) : manifest_(m), usable_(m.usable()) {
    if (usable_.empty()) throw ParameterError("manifest has no usable entries");
  }
  std::size_t size() const { return usable_.size(); }
  const ManifestEntry& entry(std::size_t i) const { return *usable_[i]; }
  const std::pair<ImageRGB, ImageRGB>& images(std::size_t i) {
    auto it = cache_.find(i);
    if (it == cache_.end()) it = cache_.emplace(i, load_entry(manifest_, *usable_[i])).first;
    return it->second;  // (clean, hazy)
  }

 private:
  const DatasetManifest& manifest_;
  std::vector<const ManifestEntry*> usable_;
  std::map<std::size_t, std::pair<ImageRGB, ImageRGB>> cache_;
};

inline std::uint64_t batch_seed(std::uint64_t seed, std::int64_t iter) {
  return mix_seed(mix_seed(seed, 0xBA7C4ULL), static_cast<std::uint64_t>(iter));
}

/// batch_size co-located hazy/clean crops, drawn with replacement uniformly
/// over entries and offsets from an RNG keyed by (seed, iter). Images smaller
/// than the patch are reflect-padded first.
inline PatchBatch sample_patch_batch(ImageCache& cache, const TrainConfig& cfg, std::int64_t iter) {
  std::mt19937_64 rng(batch_seed(cfg.seed, iter));
  const int ps = cfg.patch_size;
  PatchBatch b;
  for (int i = 0; i < cfg.batch_size; ++i) {
    const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, cache.size() - 1)(rng);
    const auto& [clean_full, hazy_full] = cache.images(idx);
    const ImageRGB* clean = &clean_full;
    const ImageRGB* hazy = &hazy_full;
    ImageRGB clean_pad, hazy_pad;
    if (clean->height < ps || clean->width < ps) {
      const int h = std::max(ps, clean->height), w = std::max(ps, clean->width);
      clean_pad = reflect_pad(*clean, h, w);
      hazy_pad = reflect_pad(*hazy, h, w);
      clean = &clean_pad;
      hazy = &hazy_pad;
    }
    const int y = std::uniform_int_distribution<int>(0, clean->height - ps)(rng);
    const int x = std::uniform_int_distribution<int>(0, clean->width - ps)(rng);
    b.clean.push_back(crop(*clean, y, x, ps, ps));
    b.hazy.push_back(crop(*hazy, y, x, ps, ps));
    b.entry.push_back(cache.entry(idx).index);
    b.offset.emplace_back(y, x);
  }
  return b;
}

// ---------------------------------------------------------------------------
// One optimization step

template <class T>
struct TrainState {
  TrainConfig config;
  GfnParams<T> gen;
  std::optional<DiscParams<T>> disc;
  AdamState<T> gen_opt;
  AdamState<T> disc_opt;
  std::int64_t iteration = 0;  // completed iterations
};

template <class T>
TrainState<T> init_train_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState<T> s;
  s.config = cfg;
  s.gen = init_gfn_params<T>(cfg.model, mix_seed(cfg.seed, 1));
  s.gen_opt = adam_init(param_list(s.gen));
  if (cfg.adversarial_enabled) {
    s.disc = init_disc_params<T>(cfg.patch_size, mix_seed(cfg.seed, 2));
    s.disc_opt = adam_init(param_list(*s.disc));
  }
  return s;
}

struct StepLog {
  std::int64_t iteration = 0;
  double lr = 0.0;
  double content = 0.0;
  double adversarial = 0.0;  // E log D(J) + E log(1 - D(F(I))), 0 when disabled
  double total = 0.0;
};

template <class T>
std::vector<Tensor<T>> collect_grads(const Tape<T>& tape, const std::vector<Var>& vars) {
  std::vector<Tensor<T>> g;
  g.reserve(vars.size());
  for (Var v : vars) g.push_back(tape.grad(v));
  return g;
}

/// Forward, losses, backward and Adam updates for one batch. With the
/// adversarial term enabled, the discriminator is updated first on the
/// detached generator output, then the generator with the non-saturating
/// objective L_cont + w * (-E log D(F(I))).
template <class T>
StepLog train_step(TrainState<T>& s, const PatchBatch& batch) {
  const TrainConfig& cfg = s.config;
  StepLog log;
  log.iteration = s.iteration;
  log.lr = lr_at(s.iteration, cfg);

  std::vector<const ImageRGB*> hazy_ptrs, clean_ptrs;
  for (std::size_t i = 0; i < batch.hazy.size(); ++i) {
    hazy_ptrs.push_back(&batch.hazy[i]);
    clean_ptrs.push_back(&batch.clean[i]);
  }
  const Tensor<T> hazy = to_tensor<T>(hazy_ptrs);
  const Tensor<T> clean = to_tensor<T>(clean_ptrs);
  const auto derived = derive_tensors<T>(hazy_ptrs, cfg.model.gamma_alpha, cfg.model.gamma);
  const auto truth = build_pyramid(clean, cfg.model.scale_count);

  Tape<T> tape;
  const GfnVars<T> gv = bind(tape, s.gen, true);
  const PyramidVars pyr = multi_scale_forward(tape, hazy, derived, s.gen, gv);
  const Var cont = content_loss(tape, pyr.outputs, truth);
  log.content = static_cast<double>(tape.value(cont)[0]);
  Var objective = cont;

  if (cfg.adversarial_enabled) {
    if (!s.disc) throw std::logic_error("adversarial training without discriminator parameters");
    const Tensor<T>& fake = tape.value(pyr.outputs.back());
    {
      Tape<T> dt;
      const DiscVars<T> dv = bind(dt, *s.disc, true);
      const Var d_real = discriminator_forward(dt, dt.constant(clean), *s.disc, dv);
      const Var d_fake = discriminator_forward(dt, dt.constant(fake), *s.disc, dv);
      const Var adv = ad::add(dt, ad::mean_log(dt, d_real, false, kProbabilityEps),
                              ad::mean_log(dt, d_fake, true, kProbabilityEps));
      log.adversarial = static_cast<double>(dt.value(adv)[0]);
      dt.backward(ad::scale(dt, adv, T(-1)));  // the discriminator ascends L_adv
      std::vector<Var> vars;
      for (int i = 0; i < DiscParams<T>::kLayers; ++i) {
        vars.push_back(dv.w[i]);
        vars.push_back(dv.b[i]);
      }
      adam_step(param_list(*s.disc), collect_grads(dt, vars), s.disc_opt, log.lr, cfg);
    }
    const DiscVars<T> dv = bind(tape, *s.disc, false);
    const Var d_fake = discriminator_forward(tape, pyr.outputs.back(), *s.disc, dv);
    const Var gen_adv = ad::scale(tape, ad::mean_log(tape, d_fake, false, kProbabilityEps), T(-1));
    objective = ad::add(tape, cont, ad::scale(tape, gen_adv, static_cast<T>(cfg.adversarial_weight)));
  }
  log.total = total_loss(log.content, log.adversarial, cfg.adversarial_weight);
  if (!std::isfinite(log.content) || !std::isfinite(log.total))
    throw NumericalError("non-finite loss at iteration " + std::to_string(s.iteration));

  if (!cfg.model.equal_weight_fusion) {
    tape.backward(objective);
    std::vector<Var> vars;
    gv.for_each([&](Var v) { vars.push_back(v); });
    adam_step(param_list(s.gen), collect_grads(tape, vars), s.gen_opt, log.lr, cfg);
  }
  ++s.iteration;
  return log;
}

}  // namespace gfn
