#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   "GFNC"                       magic
//   u16 version
//   u32 array count
//   per array: u16 name length, name bytes, u8 dtype (1 = f32, 2 = f64),
//              u8 rank, u32 dims[rank], raw values
//   u32 text length, config snapshot (JSON)
//   u64 FNV-1a checksum of every preceding byte
//
// Arrays hold generator and discriminator parameters ("gen.*", "disc.*") and
// Adam moments ("opt.gen.m.*", "opt.gen.v.*", ...). The snapshot carries the
// training config, iteration, optimizer step counters and sampler state.

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "gfn/errors.hpp"
#include "gfn/io.hpp"
#include "gfn/train.hpp"

namespace gfn {

inline constexpr std::array<char, 4> kCheckpointMagic{'G', 'F', 'N', 'C'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline std::uint64_t fnv1a64(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

template <class T>
void put_array(std::string& out, const std::string& name, const Tensor<T>& t) {
  io::put_le(out, static_cast<std::uint16_t>(name.size()));
  out += name;
  io::put_le(out, static_cast<std::uint8_t>(dtype_of<T>()));
  io::put_le(out, static_cast<std::uint8_t>(4));
  const Shape s = t.shape();
  for (int d : {s.n, s.c, s.h, s.w}) io::put_le(out, static_cast<std::uint32_t>(d));
  for (T v : t.values()) io::put_le(out, v);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes, std::size_t limit)
      : p_(reinterpret_cast<const unsigned char*>(bytes.data())), n_(limit) {}

  template <class U>
  U get() {
    need(sizeof(U));
    U v = io::get_le<U>(p_ + pos_);
    pos_ += sizeof(U);
    return v;
  }
  std::string str(std::size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
    pos_ += len;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t k) const {
    if (pos_ + k > n_) throw FormatError("checkpoint truncated");
  }
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

struct RawArray {
  DType dtype;
  Shape shape;
  std::vector<double> values;
};

}  // namespace detail

template <class T>
std::string encode_checkpoint(const TrainState<T>& s) {
  std::vector<std::pair<std::string, const Tensor<T>*>> arrays;
  s.gen.for_each([&](const std::string& n, const Tensor<T>& t) { arrays.emplace_back(n, &t); });
  auto add_opt = [&](const std::string& prefix, const AdamState<T>& st,
                     const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < st.m.size(); ++i) arrays.emplace_back(prefix + ".m." + names[i], &st.m[i]);
    for (std::size_t i = 0; i < st.v.size(); ++i) arrays.emplace_back(prefix + ".v." + names[i], &st.v[i]);
  };
  std::vector<std::string> gen_names, disc_names;
  s.gen.for_each([&](const std::string& n, const Tensor<T>&) { gen_names.push_back(n); });
  add_opt("opt.gen", s.gen_opt, gen_names);
  if (s.disc) {
    s.disc->for_each([&](const std::string& n, const Tensor<T>& t) {
      arrays.emplace_back(n, &t);
      disc_names.push_back(n);
    });
    add_opt("opt.disc", s.disc_opt, disc_names);
  }

  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  io::put_le(out, kCheckpointVersion);
  io::put_le(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, t] : arrays) detail::put_array(out, name, *t);

  nlohmann::ordered_json snap;
  snap["train_config"] = to_json(s.config);
  snap["iteration"] = s.iteration;
  snap["gen_adam_step"] = s.gen_opt.step;
  snap["disc_adam_step"] = s.disc_opt.step;
  snap["has_discriminator"] = s.disc.has_value();
  snap["disc_input_size"] = s.disc ? s.disc->input_size : 0;
  // Batches are keyed by (seed, iteration); this is the full sampler state.
  snap["rng"] = {{"seed", s.config.seed}, {"next_iteration", s.iteration}};
  const std::string text = snap.dump();
  io::put_le(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  io::put_le(out, fnv1a64(reinterpret_cast<const unsigned char*>(out.data()), out.size()));
  return out;
}

/// Element type stored in a checkpoint, from its first array.
inline DType checkpoint_dtype(const std::string& bytes) {
  detail::Reader r(bytes, bytes.size());
  if (r.str(4) != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end()))
    throw FormatError("not a GFNC checkpoint");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  if (r.get<std::uint32_t>() == 0) throw FormatError("checkpoint has no arrays");
  r.str(r.get<std::uint16_t>());
  return static_cast<DType>(r.get<std::uint8_t>());
}

template <class T>
TrainState<T> decode_checkpoint(const std::string& bytes) {
  constexpr std::size_t trailer = sizeof(std::uint64_t);
  if (bytes.size() < 4 + 2 + 4 + trailer) throw FormatError("checkpoint truncated");
  {
    detail::Reader head(bytes, bytes.size());
    if (head.str(4) != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end()))
      throw FormatError("not a GFNC checkpoint");
    const auto version = head.get<std::uint16_t>();
    if (version != kCheckpointVersion)
      throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                        std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t body = bytes.size() - trailer;
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (io::get_le<std::uint64_t>(raw + body) != fnv1a64(raw, body))
    throw FormatError("checkpoint checksum mismatch");

  detail::Reader r(bytes, body);
  r.str(4);
  r.get<std::uint16_t>();
  const auto count = r.get<std::uint32_t>();
  std::map<std::string, Tensor<T>> arrays;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.get<std::uint16_t>());
    const auto dtype = static_cast<DType>(r.get<std::uint8_t>());
    if (dtype != dtype_of<T>())
      throw FormatError("checkpoint array '" + name + "' has a different element type");
    const auto rank = r.get<std::uint8_t>();
    if (rank != 4) throw FormatError("checkpoint array '" + name + "' must have rank 4");
    Shape s;
    s.n = static_cast<int>(r.get<std::uint32_t>());
    s.c = static_cast<int>(r.get<std::uint32_t>());
    s.h = static_cast<int>(r.get<std::uint32_t>());
    s.w = static_cast<int>(r.get<std::uint32_t>());
    std::vector<T> values(s.count());
    for (auto& v : values) v = r.get<T>();
    arrays.emplace(name, Tensor<T>(s, std::move(values)));
  }
  const std::string text = r.str(r.get<std::uint32_t>());
  if (r.pos() != body) throw FormatError("checkpoint has trailing bytes before the checksum");

  nlohmann::json snap;
  try {
    snap = nlohmann::json::parse(text);
    TrainState<T> s;
    s.config = train_config_from_json(snap.at("train_config"));
    s.iteration = snap.at("iteration").get<std::int64_t>();
    s.gen = init_gfn_params<T>(s.config.model, 0);
    auto take = [&](const std::string& name, Tensor<T>& dst) {
      auto it = arrays.find(name);
      if (it == arrays.end()) throw FormatError("checkpoint missing array '" + name + "'");
      if (!(it->second.shape() == dst.shape()))
        throw FormatError("checkpoint array '" + name + "' has shape " + it->second.shape().str());
      dst = std::move(it->second);
    };
    auto restore_opt = [&](const std::string& prefix, AdamState<T>& st, auto& params,
                           std::int64_t step) {
      st = adam_init(param_list(params));
      st.step = step;
      std::size_t i = 0;
      params.for_each([&](const std::string& n, Tensor<T>&) {
        take(prefix + ".m." + n, st.m[i]);
        take(prefix + ".v." + n, st.v[i]);
        ++i;
      });
    };
    s.gen.for_each([&](const std::string& n, Tensor<T>& t) { take(n, t); });
    restore_opt("opt.gen", s.gen_opt, s.gen, snap.at("gen_adam_step").get<std::int64_t>());
    if (snap.at("has_discriminator").get<bool>()) {
      s.disc = init_disc_params<T>(snap.at("disc_input_size").get<int>(), 0);
      s.disc->for_each([&](const std::string& n, Tensor<T>& t) { take(n, t); });
      restore_opt("opt.disc", s.disc_opt, *s.disc, snap.at("disc_adam_step").get<std::int64_t>());
    }
    return s;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("checkpoint config snapshot: ") + ex.what());
  }
}

template <class T>
void save_checkpoint(const TrainState<T>& s, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(s));
}

template <class T>
TrainState<T> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<T>(io::read_file(path));
}

}  // namespace gfn
