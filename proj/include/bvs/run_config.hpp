#pragma once

// Whole-pipeline configuration as dotted `key = value` text. Every field has
// a default; unknown keys are rejected.

#include <zlib.h>

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "bvs/errors.hpp"
#include "bvs/io.hpp"
#include "bvs/kv.hpp"
#include "bvs/nn/adamw.hpp"
#include "bvs/nn/model_config.hpp"
#include "bvs/sampler.hpp"
#include "bvs/synthworld.hpp"
#include "bvs/v2as.hpp"
#include "bvs/vs2a.hpp"

namespace bvs {

inline void model_to_kv(const nn::ModelConfig& c, const std::string& p, kv::Map& m) {
  m[p + "depth"] = std::to_string(c.depth);
  m[p + "model_dim"] = std::to_string(c.model_dim);
  m[p + "heads"] = std::to_string(c.heads);
  m[p + "feedforward_dim"] = std::to_string(c.feedforward_dim);
  m[p + "cross_attention_positions"] = kv::fmt_list(c.cross_attention_positions);
  m[p + "input_vocab"] = std::to_string(c.input_vocab);
  m[p + "output_vocab"] = std::to_string(c.output_vocab);
  m[p + "condition_vocab"] = std::to_string(c.condition_vocab);
  m[p + "condition_length"] = std::to_string(c.condition_length);
  m[p + "token_length"] = std::to_string(c.token_length);
  m[p + "video_length"] = std::to_string(c.video_length);
  m[p + "video_dim"] = std::to_string(c.video_dim);
  m[p + "max_sequence_length"] = std::to_string(c.max_sequence_length);
  m[p + "condition_dropout_prob"] = kv::fmt_double(c.condition_dropout_prob);
  m[p + "positional"] = c.positional;
  m[p + "init_std"] = kv::fmt_double(c.init_std);
}

inline void model_from_kv(kv::Reader& r, const std::string& p, nn::ModelConfig& c) {
  r.get(p + "depth", c.depth);
  r.get(p + "model_dim", c.model_dim);
  r.get(p + "heads", c.heads);
  r.get(p + "feedforward_dim", c.feedforward_dim);
  r.get(p + "cross_attention_positions", c.cross_attention_positions);
  r.get(p + "input_vocab", c.input_vocab);
  r.get(p + "output_vocab", c.output_vocab);
  r.get(p + "condition_vocab", c.condition_vocab);
  r.get(p + "condition_length", c.condition_length);
  r.get(p + "token_length", c.token_length);
  r.get(p + "video_length", c.video_length);
  r.get(p + "video_dim", c.video_dim);
  r.get(p + "max_sequence_length", c.max_sequence_length);
  r.get(p + "condition_dropout_prob", c.condition_dropout_prob);
  r.get(p + "positional", c.positional);
  r.get(p + "init_std", c.init_std);
}

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t train_samples = 2000;  // first N samples of the dataset
  std::size_t v2as_steps = 8000;
  std::size_t vs2a_steps = 3000;  // each step updates both stage-2 models
  std::size_t log_every = 50;
  std::size_t checkpoint_every = 1000;
  // Ablation: the speech memory is always the null vector.
  bool speech_disabled = false;

  bool operator==(const TrainConfig&) const = default;
};

struct RunConfig {
  WorldConfig world;
  nn::ModelConfig v2as;
  nn::ModelConfig vs2a_first;
  nn::ModelConfig vs2a_rest;
  nn::AdamWConfig optim;
  TrainConfig train;
  DecodeConfig v2as_decode;
  std::vector<std::size_t> vs2a_decode_steps = {20, 10, 1, 1};
  double vs2a_cfg_scale = 2.5;
  std::uint64_t init_seed = 1;
  std::uint64_t train_seed = 2;
  std::uint64_t decode_seed = 3;

  RunConfig() {
    // The toy stage-1 run needs a larger step than the optimizer default to
    // align speech within the step budget.
    optim.lr = 5e-4;
    sync_models();
  }

  /// Re-derives the model vocab/length fields from the world section.
  void sync_models() {
    const auto& w = world;
    auto depth_v2as = v2as;
    v2as = default_v2as_config(w.vocab, w.t_sem, w.t_v, w.video_dim);
    v2as.depth = depth_v2as.depth;
    v2as.model_dim = depth_v2as.model_dim;
    v2as.heads = depth_v2as.heads;
    v2as.feedforward_dim = depth_v2as.feedforward_dim;
    v2as.cross_attention_positions = depth_v2as.cross_attention_positions;
    v2as.condition_dropout_prob = depth_v2as.condition_dropout_prob;
    v2as.init_std = depth_v2as.init_std;
    for (auto* m : {&vs2a_first, &vs2a_rest}) {
      auto keep = *m;
      *m = default_vs2a_config(w.vocab, w.t_sem, w.t_v, w.video_dim);
      m->depth = keep.depth;
      m->model_dim = keep.model_dim;
      m->heads = keep.heads;
      m->feedforward_dim = keep.feedforward_dim;
      m->condition_dropout_prob = keep.condition_dropout_prob;
      m->init_std = keep.init_std;
    }
  }

  void validate() const {
    world.validate();
    v2as.validate();
    vs2a_first.validate();
    vs2a_rest.validate();
    v2as_decode.validate();
    const auto& v = world.vocab;
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw ConfigError("config: " + msg);
    };
    need(v2as.input_vocab == v.semantic_vocab_size() + 1 && v2as.output_vocab == v.semantic_vocab_size(),
         "v2as vocab sizes must be semantic vocab + 1 / semantic vocab");
    need(v2as.condition_vocab == v.speech_vocab_size && v2as.condition_length == world.t_sem,
         "v2as condition memory must match the speech stream");
    need(v2as.has_cross_attention(), "v2as needs at least one cross-attention block");
    for (const auto* m : {&v2as, &vs2a_first, &vs2a_rest})
      need(m->token_length == world.t_sem && m->video_length == world.t_v && m->video_dim == world.video_dim,
           "model lengths must match world.t_sem / world.t_v / world.video_dim");
    for (const auto* m : {&vs2a_first, &vs2a_rest})
      need(m->input_vocab == v.acoustic_vocab + 1 && m->output_vocab == v.acoustic_vocab &&
               !m->has_cross_attention(),
           "vs2a models must use the acoustic vocabulary and no cross-attention");
    need(vs2a_decode_steps.size() == v.acoustic_layers,
         "decode.vs2a.steps must list one count per acoustic layer (" + std::to_string(v.acoustic_layers) + ")");
    for (auto s : vs2a_decode_steps) need(s >= 1, "decode.vs2a.steps entries must be >= 1");
    need(vs2a_cfg_scale >= 0.0, "decode.vs2a.cfg_scale must be >= 0");
    need(train.batch_size >= 1 && train.train_samples >= 1, "train.batch_size and train.train_samples must be >= 1");
    need(train.log_every >= 1 && train.checkpoint_every >= 1, "train cadences must be >= 1");
    need(optim.lr > 0.0 && optim.beta1 >= 0.0 && optim.beta1 < 1.0 && optim.beta2 >= 0.0 && optim.beta2 < 1.0 &&
             optim.eps > 0.0 && optim.weight_decay >= 0.0,
         "optimizer hyperparameters out of range");
  }

  kv::Map to_kv() const {
    kv::Map m = world.to_kv("world.");
    model_to_kv(v2as, "v2as.", m);
    model_to_kv(vs2a_first, "vs2a_first.", m);
    model_to_kv(vs2a_rest, "vs2a_rest.", m);
    m["optim.lr"] = kv::fmt_double(optim.lr);
    m["optim.beta1"] = kv::fmt_double(optim.beta1);
    m["optim.beta2"] = kv::fmt_double(optim.beta2);
    m["optim.eps"] = kv::fmt_double(optim.eps);
    m["optim.weight_decay"] = kv::fmt_double(optim.weight_decay);
    m["optim.warmup_steps"] = std::to_string(optim.warmup_steps);
    m["train.batch_size"] = std::to_string(train.batch_size);
    m["train.train_samples"] = std::to_string(train.train_samples);
    m["train.v2as_steps"] = std::to_string(train.v2as_steps);
    m["train.vs2a_steps"] = std::to_string(train.vs2a_steps);
    m["train.log_every"] = std::to_string(train.log_every);
    m["train.checkpoint_every"] = std::to_string(train.checkpoint_every);
    m["train.speech_disabled"] = train.speech_disabled ? "true" : "false";
    m["decode.v2as.steps"] = std::to_string(v2as_decode.steps);
    m["decode.v2as.cfg_scale"] = kv::fmt_double(v2as_decode.cfg_scale);
    m["decode.temperature_start"] = kv::fmt_double(v2as_decode.temperature_start);
    m["decode.temperature_end"] = kv::fmt_double(v2as_decode.temperature_end);
    m["decode.noise_ratio"] = kv::fmt_double(v2as_decode.noise_ratio);
    m["decode.logit_clamp"] = kv::fmt_double(v2as_decode.logit_clamp);
    m["decode.plausibility"] = kv::fmt_double(v2as_decode.plausibility);
    m["decode.vs2a.steps"] = kv::fmt_list(vs2a_decode_steps);
    m["decode.vs2a.cfg_scale"] = kv::fmt_double(vs2a_cfg_scale);
    m["seed.init"] = std::to_string(init_seed);
    m["seed.train"] = std::to_string(train_seed);
    m["seed.decode"] = std::to_string(decode_seed);
    return m;
  }

  std::string serialize() const { return kv::serialize(to_kv()); }

  /// Parses config text over the defaults. Model vocab/length fields follow
  /// the world section unless given explicitly.
  static RunConfig parse(const std::string& text) {
    const auto map = kv::parse(text);
    kv::Reader r(map);
    RunConfig c;
    c.world.read_kv(r, "world.");
    c.sync_models();
    model_from_kv(r, "v2as.", c.v2as);
    model_from_kv(r, "vs2a_first.", c.vs2a_first);
    model_from_kv(r, "vs2a_rest.", c.vs2a_rest);
    r.get("optim.lr", c.optim.lr);
    r.get("optim.beta1", c.optim.beta1);
    r.get("optim.beta2", c.optim.beta2);
    r.get("optim.eps", c.optim.eps);
    r.get("optim.weight_decay", c.optim.weight_decay);
    r.get("optim.warmup_steps", c.optim.warmup_steps);
    r.get("train.batch_size", c.train.batch_size);
    r.get("train.train_samples", c.train.train_samples);
    r.get("train.v2as_steps", c.train.v2as_steps);
    r.get("train.vs2a_steps", c.train.vs2a_steps);
    r.get("train.log_every", c.train.log_every);
    r.get("train.checkpoint_every", c.train.checkpoint_every);
    r.get("train.speech_disabled", c.train.speech_disabled);
    r.get("decode.v2as.steps", c.v2as_decode.steps);
    r.get("decode.v2as.cfg_scale", c.v2as_decode.cfg_scale);
    r.get("decode.temperature_start", c.v2as_decode.temperature_start);
    r.get("decode.temperature_end", c.v2as_decode.temperature_end);
    r.get("decode.noise_ratio", c.v2as_decode.noise_ratio);
    r.get("decode.logit_clamp", c.v2as_decode.logit_clamp);
    r.get("decode.plausibility", c.v2as_decode.plausibility);
    r.get("decode.vs2a.steps", c.vs2a_decode_steps);
    r.get("decode.vs2a.cfg_scale", c.vs2a_cfg_scale);
    r.get("seed.init", c.init_seed);
    r.get("seed.train", c.train_seed);
    r.get("seed.decode", c.decode_seed);
    r.reject_unknown();
    c.validate();
    return c;
  }

  static RunConfig load(const std::string& path) { return parse(io::read_file(path)); }

  /// Decode settings of stage 2 share the stage-1 temperature/noise schedule.
  DecodeConfig vs2a_decode() const {
    DecodeConfig d = v2as_decode;
    d.cfg_scale = vs2a_cfg_scale;
    return d;
  }

  /// Text identifying what a stage checkpoint depends on.
  std::string stage_config(const std::string& stage) const {
    kv::Map m = world.to_kv("world.");
    if (stage == "v2as") {
      model_to_kv(v2as, "v2as.", m);
      m["train.speech_disabled"] = train.speech_disabled ? "true" : "false";
    } else {
      model_to_kv(vs2a_first, "vs2a_first.", m);
      model_to_kv(vs2a_rest, "vs2a_rest.", m);
    }
    return kv::serialize(m);
  }

  std::string hash() const {
    const auto text = serialize();
    const auto crc = ::crc32(::crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(text.data()),
                             static_cast<uInt>(text.size()));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
    return buf;
  }

  bool operator==(const RunConfig& o) const { return serialize() == o.serialize(); }
};

}  // namespace bvs
