#pragma once

// Checkpoint container:
//   magic "BVSCKPT\0", u32 version, str32 kind, str32 config text,
//   u64 training step, str32 rng state, u32 model count, then per model
//   str32 name, parameter set, optimizer (u64 step, 6 hyperparameters, m, v).
// A parameter set is u32 count then per tensor str32 name, u64 rows, u64 cols,
// u64 scalar count and that many little-endian f32 values. The file ends with
// the CRC-32 of everything before it.

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "bvs/errors.hpp"
#include "bvs/io.hpp"
#include "bvs/nn/adamw.hpp"
#include "bvs/nn/tensor.hpp"

namespace bvs::nn {

inline constexpr char kCheckpointMagic[8] = {'B', 'V', 'S', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ModelState {
  std::string name;
  ParamSet<float> params;
  OptimizerState<float> optimizer;
};

struct Checkpoint {
  std::string kind;    // e.g. "v2as" or "vs2a"
  std::string config;  // serialized configuration the models were built from
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<ModelState> models;

  const ModelState& model(const std::string& name) const {
    for (const auto& m : models)
      if (m.name == name) return m;
    throw IntegrityError("checkpoint has no model named " + name);
  }
};

inline std::uint32_t crc32_of(const std::string& bytes, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

inline void write_params(io::Writer& w, const ParamSet<float>& p) {
  w.u32(static_cast<std::uint32_t>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) {
    w.str32(p.name(i));
    w.u64(static_cast<std::uint64_t>(p[i].rows()));
    w.u64(static_cast<std::uint64_t>(p[i].cols()));
    w.u64(static_cast<std::uint64_t>(p[i].size()));
    const float* d = p[i].data();
    for (Eigen::Index k = 0; k < p[i].size(); ++k) w.f32(d[k]);
  }
}

inline ParamSet<float> read_params(io::Reader& r) {
  ParamSet<float> p;
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = r.str32();
    const auto rows = r.u64(), cols = r.u64(), count = r.u64();
    if (rows * cols != count || count > r.remaining() / 4)
      throw IntegrityError("checkpoint: tensor " + name + " has an inconsistent size");
    const auto idx = p.add(name, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    float* d = p[idx].data();
    for (std::uint64_t k = 0; k < count; ++k) d[k] = r.f32();
  }
  return p;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c) {
  io::Writer w;
  w.raw(std::string(kCheckpointMagic, 8));
  w.u32(kCheckpointVersion);
  w.str32(c.kind);
  w.str32(c.config);
  w.u64(c.step);
  w.str32(c.rng_state);
  w.u32(static_cast<std::uint32_t>(c.models.size()));
  for (const auto& m : c.models) {
    w.str32(m.name);
    detail::write_params(w, m.params);
    const auto& o = m.optimizer;
    w.u64(o.step);
    w.f64(o.config.lr);
    w.f64(o.config.beta1);
    w.f64(o.config.beta2);
    w.f64(o.config.eps);
    w.f64(o.config.weight_decay);
    w.u64(o.config.warmup_steps);
    detail::write_params(w, o.m);
    detail::write_params(w, o.v);
  }
  w.u32(crc32_of(w.bytes(), w.bytes().size()));
  return w.bytes();
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what = "checkpoint") {
  if (bytes.size() < 12 || bytes.compare(0, 8, std::string(kCheckpointMagic, 8)) != 0)
    throw IntegrityError(what + ": not a checkpoint file");
  {
    io::Reader tail(bytes.substr(bytes.size() - 4), what);
    if (tail.u32() != crc32_of(bytes, bytes.size() - 4))
      throw IntegrityError(what + ": checksum mismatch (truncated or corrupt)");
  }
  io::Reader r(bytes.substr(0, bytes.size() - 4), what);
  r.raw(8);
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw IntegrityError(what + ": unsupported format version " + std::to_string(v));
  Checkpoint c;
  c.kind = r.str32();
  c.config = r.str32();
  c.step = r.u64();
  c.rng_state = r.str32();
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    ModelState m;
    m.name = r.str32();
    m.params = detail::read_params(r);
    auto& o = m.optimizer;
    o.step = r.u64();
    o.config.lr = r.f64();
    o.config.beta1 = r.f64();
    o.config.beta2 = r.f64();
    o.config.eps = r.f64();
    o.config.weight_decay = r.f64();
    o.config.warmup_steps = r.u64();
    o.m = detail::read_params(r);
    o.v = detail::read_params(r);
    if (!o.m.same_layout(m.params) || !o.v.same_layout(m.params))
      throw IntegrityError(what + ": optimizer moments of " + m.name + " do not match its parameters");
    c.models.push_back(std::move(m));
  }
  if (!r.done()) throw IntegrityError(what + ": trailing bytes before the checksum");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const auto bytes = encode_checkpoint(c);
  const std::string tmp = path + ".tmp";
  io::write_file(tmp, bytes);
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw InputError("cannot move checkpoint into place: " + path);
}

/// Loads and, when `expected_kind`/`expected_config` are given, checks that
/// the file was produced for the same stage and configuration.
inline Checkpoint load_checkpoint(const std::string& path, const std::string* expected_kind = nullptr,
                                  const std::string* expected_config = nullptr) {
  auto c = decode_checkpoint(io::read_file(path), path);
  if (expected_kind && c.kind != *expected_kind)
    throw ConfigError(path + ": checkpoint is for stage `" + c.kind + "`, expected `" + *expected_kind + "`");
  if (expected_config && c.config != *expected_config)
    throw ConfigError(path + ": checkpoint configuration differs from the current configuration");
  return c;
}

/// Copies stored values into `params`, which must have the same layout.
inline void restore_params(const ParamSet<float>& stored, ParamSet<float>& params, const std::string& what) {
  if (!stored.same_layout(params))
    throw ConfigError(what + ": stored parameter layout does not match the model configuration");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = stored[i];
}

}  // namespace bvs::nn
