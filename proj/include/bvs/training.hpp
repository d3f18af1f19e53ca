#pragma once

// Training loops for both stages with resumable state, plus held-out
// accuracy probes.

#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "bvs/errors.hpp"
#include "bvs/nn/checkpoint.hpp"
#include "bvs/run_config.hpp"
#include "bvs/synthworld.hpp"
#include "bvs/v2as.hpp"
#include "bvs/vs2a.hpp"

namespace bvs {

struct V2ASAccuracy {
  double background = 0.0;  // over all positions
  double speech = 0.0;      // over positions whose true speech id is not silence
  std::size_t positions = 0, speech_positions = 0;
};

/// Fully masked input, conditioned on video and (unless disabled) speech;
/// argmax per position compared against the sample's semantic stream.
template <typename S>
V2ASAccuracy v2as_heldout_accuracy(const V2ASModel<S>& model, const std::vector<WorldSample>& samples,
                                   bool speech_disabled = false, std::size_t chunk = 32) {
  const auto& vocab = model.vocab();
  const TokenSeq masked(static_cast<std::size_t>(model.token_length()), vocab.semantic_mask_id());
  std::size_t bg_ok = 0, sp_ok = 0;
  V2ASAccuracy out;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t end = std::min(samples.size(), start + chunk);
    std::vector<V2ASInput> inputs;
    for (std::size_t i = start; i < end; ++i)
      inputs.push_back({&masked, &samples[i].video, &samples[i].speech.tokens, speech_disabled, false});
    const auto logits = model.forward(inputs);
    for (std::size_t i = start; i < end; ++i)
      for (Eigen::Index p = 0; p < model.token_length(); ++p) {
        Eigen::Index best = 0;
        logits.row(static_cast<Eigen::Index>(i - start) * model.token_length() + p).maxCoeff(&best);
        const auto [ps, pb] = split_semantic(static_cast<TokenId>(best), vocab);
        const auto [ts, tb] = split_semantic(samples[i].semantic.tokens[static_cast<std::size_t>(p)], vocab);
        bg_ok += pb == tb;
        ++out.positions;
        if (ts != 0) {
          sp_ok += ps == ts;
          ++out.speech_positions;
        }
      }
  }
  out.background = out.positions ? static_cast<double>(bg_ok) / static_cast<double>(out.positions) : 0.0;
  out.speech = out.speech_positions ? static_cast<double>(sp_ok) / static_cast<double>(out.speech_positions) : 0.0;
  return out;
}

/// Per-layer exact match of stage-2 decoding started from the true
/// semantic stream.
template <AcousticScorer Bundle>
std::vector<double> vs2a_heldout_accuracy(const Bundle& bundle, const std::vector<WorldSample>& samples,
                                          const std::vector<std::size_t>& steps, double cfg_scale,
                                          std::uint64_t seed, const DecodeConfig& base = DecodeConfig{}) {
  const std::size_t k = bundle.vocab().acoustic_layers;
  std::vector<double> hits(k, 0.0);
  std::size_t positions = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    const auto grid = vs2a_generate(bundle, samples[i].semantic, samples[i].video, steps, cfg_scale, rng, nullptr, base);
    for (std::size_t l = 0; l < k; ++l)
      for (std::size_t p = 0; p < grid.layers[l].size(); ++p) hits[l] += grid.layers[l][p] == samples[i].acoustic.layers[l][p];
    positions += samples[i].semantic.tokens.size();
  }
  for (auto& h : hits) h = positions ? h / static_cast<double>(positions) : 0.0;
  return hits;
}

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

inline std::vector<std::size_t> draw_batch(Rng& rng, std::size_t pool, std::size_t batch) {
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(pool) - 1));
  return idx;
}

}  // namespace detail

class V2ASTrainer {
 public:
  static constexpr const char* kKind = "v2as";

  V2ASTrainer(const RunConfig& config, std::vector<WorldSample> train) : config_(config), train_(std::move(train)) {
    check_pool();
    Rng init(derive_seed(config_.init_seed, 1));
    model_ = V2ASModel<float>::initialized(config_.v2as, config_.world.vocab, init);
    opt_ = nn::OptimizerState<float>(config_.optim, model_.params());
    rng_ = Rng(derive_seed(config_.train_seed, 1));
  }

  V2ASTrainer(const RunConfig& config, std::vector<WorldSample> train, const nn::Checkpoint& ckpt)
      : config_(config), train_(std::move(train)) {
    check_pool();
    check_kind(ckpt);
    model_ = V2ASModel<float>(config_.v2as, config_.world.vocab);
    const auto& st = ckpt.model("v2as");
    nn::restore_params(st.params, model_.params(), "v2as checkpoint");
    opt_ = st.optimizer;
    opt_.config = config_.optim;
    rng_ = deserialize_rng(ckpt.rng_state);
    step_ = ckpt.step;
  }

  std::string step_once() {
    const auto idx = detail::draw_batch(rng_, train_.size(), config_.train.batch_size);
    V2ASBatch batch;
    for (auto i : idx) {
      batch.targets.push_back(train_[i].semantic.tokens);
      batch.speech.push_back(train_[i].speech.tokens);
      batch.video.push_back(train_[i].video);
    }
    TrainStepOptions o;
    o.condition_dropout = config_.v2as.condition_dropout_prob;
    o.speech_disabled = config_.train.speech_disabled;
    StepResult r;
    try {
      r = v2as_train_step(model_, opt_, batch, rng_, o);
    } catch (const NumericError& e) {
      throw NumericError("v2as step " + std::to_string(step_ + 1) + ": " + e.what());
    }
    ++step_;
    const double acc = r.loss.masked ? static_cast<double>(r.loss.correct) / static_cast<double>(r.loss.masked) : 0.0;
    return "step " + std::to_string(step_) + " loss " + detail::fmt("%.6f", r.loss.loss) + " acc " +
           detail::fmt("%.6f", acc) + " masked " + std::to_string(r.loss.masked);
  }

  nn::Checkpoint checkpoint() const {
    nn::Checkpoint c;
    c.kind = kKind;
    c.config = config_.stage_config(kKind);
    c.step = step_;
    c.rng_state = serialize_rng(rng_);
    c.models.push_back({"v2as", model_.params(), opt_});
    return c;
  }

  std::uint64_t step() const { return step_; }
  std::uint64_t total_steps() const { return config_.train.v2as_steps; }
  const V2ASModel<float>& model() const { return model_; }

 private:
  void check_pool() const {
    if (train_.empty()) throw ConfigError("v2as training needs at least one sample");
  }
  void check_kind(const nn::Checkpoint& c) const {
    if (c.kind != kKind) throw ConfigError("checkpoint is for stage `" + c.kind + "`, expected `v2as`");
    if (c.config != config_.stage_config(kKind))
      throw ConfigError("checkpoint configuration differs from the current configuration");
  }

  RunConfig config_;
  std::vector<WorldSample> train_;
  V2ASModel<float> model_;
  nn::OptimizerState<float> opt_;
  Rng rng_;
  std::uint64_t step_ = 0;
};

/// Each step updates the layer-1 model and the layers 2..K model on the same
/// drawn examples.
class VS2ATrainer {
 public:
  static constexpr const char* kKind = "vs2a";

  VS2ATrainer(const RunConfig& config, std::vector<WorldSample> train) : config_(config), train_(std::move(train)) {
    if (train_.empty()) throw ConfigError("vs2a training needs at least one sample");
    Rng init(derive_seed(config_.init_seed, 2));
    bundle_ = VS2ABundle<float>::initialized(config_.vs2a_first, config_.vs2a_rest, config_.world.vocab, init);
    opt_first_ = nn::OptimizerState<float>(config_.optim, bundle_.first.params());
    opt_rest_ = nn::OptimizerState<float>(config_.optim, bundle_.rest.params());
    rng_ = Rng(derive_seed(config_.train_seed, 2));
  }

  VS2ATrainer(const RunConfig& config, std::vector<WorldSample> train, const nn::Checkpoint& ckpt)
      : config_(config), train_(std::move(train)) {
    if (train_.empty()) throw ConfigError("vs2a training needs at least one sample");
    if (ckpt.kind != kKind) throw ConfigError("checkpoint is for stage `" + ckpt.kind + "`, expected `vs2a`");
    if (ckpt.config != config_.stage_config(kKind))
      throw ConfigError("checkpoint configuration differs from the current configuration");
    bundle_ = load_bundle(config_, ckpt);
    opt_first_ = ckpt.model("first").optimizer;
    opt_rest_ = ckpt.model("rest").optimizer;
    opt_first_.config = opt_rest_.config = config_.optim;
    rng_ = deserialize_rng(ckpt.rng_state);
    step_ = ckpt.step;
  }

  static VS2ABundle<float> load_bundle(const RunConfig& config, const nn::Checkpoint& ckpt) {
    VS2ABundle<float> b{VS2AModel<float>(config.vs2a_first, config.world.vocab, VS2ARole::kFirstLayer),
                        VS2AModel<float>(config.vs2a_rest, config.world.vocab, VS2ARole::kUpperLayers)};
    nn::restore_params(ckpt.model("first").params, b.first.params(), "vs2a checkpoint (first)");
    nn::restore_params(ckpt.model("rest").params, b.rest.params(), "vs2a checkpoint (rest)");
    return b;
  }

  std::string step_once() {
    const auto idx = detail::draw_batch(rng_, train_.size(), config_.train.batch_size);
    VS2ABatch batch;
    for (auto i : idx) {
      batch.semantic.push_back(train_[i].semantic.tokens);
      batch.acoustic.push_back(train_[i].acoustic);
      batch.video.push_back(train_[i].video);
    }
    VS2ABatch batch_rest = batch;
    TrainStepOptions o;
    VS2AStepResult first, rest;
    try {
      o.condition_dropout = config_.vs2a_first.condition_dropout_prob;
      first = vs2a_train_step(bundle_.first, opt_first_, batch, rng_, o);
      o.condition_dropout = config_.vs2a_rest.condition_dropout_prob;
      rest = vs2a_train_step(bundle_.rest, opt_rest_, batch_rest, rng_, o);
    } catch (const NumericError& e) {
      throw NumericError("vs2a step " + std::to_string(step_ + 1) + ": " + e.what());
    }
    ++step_;
    std::string line = "step " + std::to_string(step_);
    const std::size_t k = config_.world.vocab.acoustic_layers;
    for (std::size_t l = 1; l <= k; ++l) {
      const auto& m = (l == 1 ? first : rest).loss.per_layer[l - 1];
      line += " layer" + std::to_string(l) + " " + (m.degenerate ? std::string("-") : detail::fmt("%.6f", m.loss));
    }
    return line;
  }

  nn::Checkpoint checkpoint() const {
    nn::Checkpoint c;
    c.kind = kKind;
    c.config = config_.stage_config(kKind);
    c.step = step_;
    c.rng_state = serialize_rng(rng_);
    c.models.push_back({"first", bundle_.first.params(), opt_first_});
    c.models.push_back({"rest", bundle_.rest.params(), opt_rest_});
    return c;
  }

  std::uint64_t step() const { return step_; }
  std::uint64_t total_steps() const { return config_.train.vs2a_steps; }
  const VS2ABundle<float>& bundle() const { return bundle_; }

 private:
  RunConfig config_;
  std::vector<WorldSample> train_;
  VS2ABundle<float> bundle_;
  nn::OptimizerState<float> opt_first_, opt_rest_;
  Rng rng_;
  std::uint64_t step_ = 0;
};

inline V2ASModel<float> load_v2as(const RunConfig& config, const nn::Checkpoint& ckpt) {
  if (ckpt.kind != V2ASTrainer::kKind) throw ConfigError("checkpoint is for stage `" + ckpt.kind + "`, expected `v2as`");
  if (ckpt.config != config.stage_config(V2ASTrainer::kKind))
    throw ConfigError("v2as checkpoint configuration differs from the current configuration");
  V2ASModel<float> m(config.v2as, config.world.vocab);
  nn::restore_params(ckpt.model("v2as").params, m.params(), "v2as checkpoint");
  return m;
}

inline VS2ABundle<float> load_vs2a(const RunConfig& config, const nn::Checkpoint& ckpt) {
  if (ckpt.kind != VS2ATrainer::kKind) throw ConfigError("checkpoint is for stage `" + ckpt.kind + "`, expected `vs2a`");
  if (ckpt.config != config.stage_config(VS2ATrainer::kKind))
    throw ConfigError("vs2a checkpoint configuration differs from the current configuration");
  return VS2ATrainer::load_bundle(config, ckpt);
}

struct LoopOptions {
  std::uint64_t until = 0;  // absolute step to stop at
  std::size_t log_every = 50;
  std::size_t checkpoint_every = 1000;
  std::string checkpoint_path;  // empty: no periodic checkpoints
};

/// Runs `trainer` to `until`, writing every log_every-th line (and the last)
/// to `log`. Periodic and final checkpoints go to checkpoint_path.
template <typename Trainer>
void run_training(Trainer& trainer, const LoopOptions& o, std::ostream& log,
                  const std::function<void(const Trainer&)>& on_log = {}) {
  while (trainer.step() < o.until) {
    const auto line = trainer.step_once();
    const bool last = trainer.step() == o.until;
    if (trainer.step() % o.log_every == 0 || last) {
      log << line << "\n" << std::flush;
      if (on_log) on_log(trainer);
    }
    if (!o.checkpoint_path.empty() && (trainer.step() % o.checkpoint_every == 0 || last))
      nn::save_checkpoint(trainer.checkpoint(), o.checkpoint_path);
  }
}

}  // namespace bvs
