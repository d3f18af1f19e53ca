#pragma once

// Stage 2: semantic tokens (+ video) to K acoustic layers, coarse to fine.
//
// Two models share one input scheme. Per position the main segment is the sum
//   embed(semantic) + sum_{k<i} embed_k(layer k) + embed_i(masked layer i)
// plus, for the model that handles layers 2..K, a layer-index embedding. The
// video prefix is assembled exactly as in stage 1.

#include <concepts>
#include <string>
#include <vector>

#include "bvs/conditioning.hpp"
#include "bvs/errors.hpp"
#include "bvs/masksched.hpp"
#include "bvs/nn/adamw.hpp"
#include "bvs/nn/transformer.hpp"
#include "bvs/sampler.hpp"
#include "bvs/tokenspace.hpp"
#include "bvs/v2as.hpp"

namespace bvs {

enum class VS2ARole { kFirstLayer, kUpperLayers };

inline nn::ModelConfig default_vs2a_config(const VocabSpec& vocab, std::size_t t_sem = 100, std::size_t t_v = 10,
                                           std::size_t video_dim = 16) {
  nn::ModelConfig c;
  c.depth = 4;
  c.model_dim = 64;
  c.heads = 4;
  c.feedforward_dim = 256;
  c.cross_attention_positions = {};
  c.input_vocab = vocab.acoustic_vocab + 1;
  c.output_vocab = vocab.acoustic_vocab;
  c.condition_vocab = 0;
  c.condition_length = 0;
  c.token_length = t_sem;
  c.video_length = t_v;
  c.video_dim = video_dim;
  c.max_sequence_length = t_sem + t_v;
  return c;
}

struct VS2AInput {
  const TokenSeq* semantic = nullptr;
  const std::vector<TokenSeq>* layers = nullptr;  // at least `layer - 1` ground-truth/decoded layers
  const TokenSeq* masked_layer = nullptr;         // layer `layer`, may contain the mask id
  std::size_t layer = 1;                          // 1-based
  const VideoFeatureSequence* video = nullptr;
  bool drop_video = false;
};

template <typename S>
class VS2AModel {
 public:
  struct Cache {
    typename nn::Transformer<S>::Cache backbone;
    std::vector<VS2AInput> inputs;
  };

  VS2AModel() = default;

  VS2AModel(const nn::ModelConfig& config, const VocabSpec& vocab, VS2ARole role)
      : config_(config), vocab_(vocab), role_(role) {
    vocab_.validate();
    config_.validate();
    if (config_.input_vocab != vocab_.acoustic_vocab + 1 || config_.output_vocab != vocab_.acoustic_vocab)
      throw ConfigError("vs2a: model vocab sizes do not match the acoustic vocabulary (" +
                        std::to_string(vocab_.acoustic_vocab) + " + mask)");
    if (config_.has_cross_attention()) throw ConfigError("vs2a: conditions enter by summation, not cross-attention");
    const auto d = static_cast<Eigen::Index>(config_.model_dim);
    semantic_table_ = params_.add("semantic.table", static_cast<Eigen::Index>(vocab_.semantic_vocab_size()), d);
    const std::size_t tables = role_ == VS2ARole::kFirstLayer ? 1 : vocab_.acoustic_layers;
    for (std::size_t k = 1; k <= tables; ++k)
      acoustic_tables_.push_back(
          params_.add("acoustic" + std::to_string(k) + ".table", static_cast<Eigen::Index>(config_.input_vocab), d));
    if (role_ == VS2ARole::kUpperLayers)
      layer_table_ = params_.add("layer.table", static_cast<Eigen::Index>(vocab_.acoustic_layers), d);
    video_ = VideoPrefixParams::add(params_, config_.video_dim, config_.model_dim);
    backbone_ = nn::Transformer<S>(config_, params_);
  }

  static VS2AModel initialized(const nn::ModelConfig& config, const VocabSpec& vocab, VS2ARole role, Rng& rng) {
    VS2AModel m(config, vocab, role);
    nn::init_params(m.params_, rng, config.init_std);
    return m;
  }

  const nn::ModelConfig& config() const { return config_; }
  const VocabSpec& vocab() const { return vocab_; }
  VS2ARole role() const { return role_; }
  nn::ParamSet<S>& params() { return params_; }
  const nn::ParamSet<S>& params() const { return params_; }
  Eigen::Index video_length() const { return static_cast<Eigen::Index>(config_.video_length); }
  Eigen::Index token_length() const { return static_cast<Eigen::Index>(config_.token_length); }
  Eigen::Index joint_length() const { return video_length() + token_length(); }

  bool handles_layer(std::size_t layer) const {
    return role_ == VS2ARole::kFirstLayer ? layer == 1 : layer >= 2 && layer <= vocab_.acoustic_layers;
  }

  /// Main-segment sum for one example (no video prefix, modality or positions).
  nn::Mat<S> sum_condition_embeddings(const TokenSeq& semantic, const std::vector<TokenSeq>& below,
                                      const TokenSeq& masked_layer, std::size_t layer) const {
    nn::Mat<S> out = nn::Mat<S>::Zero(token_length(), static_cast<Eigen::Index>(config_.model_dim));
    add_main(semantic, below, masked_layer, layer, out);
    return out;
  }

  nn::Mat<S> forward(const std::vector<VS2AInput>& inputs, Cache* cache = nullptr) const {
    const auto n = static_cast<Eigen::Index>(inputs.size());
    const auto d = static_cast<Eigen::Index>(config_.model_dim);
    const Eigen::Index tv = video_length(), ts = token_length(), len = joint_length();
    nn::Mat<S> x(n * len, d);
    for (Eigen::Index e = 0; e < n; ++e) {
      const auto& in = inputs[static_cast<std::size_t>(e)];
      if (!in.semantic || !in.masked_layer || !in.video || (in.layer > 1 && !in.layers))
        throw ShapeError("vs2a: input is missing semantic tokens, layers or video");
      auto rows = x.middleRows(e * len, len);
      write_video_prefix(params_, video_, *in.video, in.drop_video, rows.topRows(tv));
      auto main = rows.bottomRows(ts);
      main.rowwise() = params_[video_.modality_tokens].row(0);
      static const std::vector<TokenSeq> kNone;
      add_main(*in.semantic, in.layers ? *in.layers : kNone, *in.masked_layer, in.layer, main);
    }
    if (cache) cache->inputs = inputs;
    return backbone_.forward(params_, x, n, nullptr, {}, tv, cache ? &cache->backbone : nullptr);
  }

  void backward(const Cache& cache, const nn::Mat<S>& dlogits, nn::ParamSet<S>& grads) const {
    const Eigen::Index tv = video_length(), ts = token_length(), len = joint_length();
    const nn::Mat<S> dx = backbone_.backward(params_, cache.backbone, dlogits, grads);
    for (std::size_t e = 0; e < cache.inputs.size(); ++e) {
      const auto& in = cache.inputs[e];
      const auto rows = dx.middleRows(static_cast<Eigen::Index>(e) * len, len);
      video_prefix_backward(video_, *in.video, in.drop_video, rows.topRows(tv), grads);
      const auto main = rows.bottomRows(ts);
      grads[video_.modality_tokens].row(0) += main.colwise().sum();
      scatter_lookup(grads[semantic_table_], *in.semantic, main);
      for (std::size_t k = 1; k < in.layer; ++k) scatter_lookup(grads[acoustic_tables_[k - 1]], (*in.layers)[k - 1], main);
      scatter_lookup(grads[acoustic_tables_[in.layer - 1]], *in.masked_layer, main);
      if (role_ == VS2ARole::kUpperLayers)
        grads[layer_table_].row(static_cast<Eigen::Index>(in.layer - 1)) += main.colwise().sum();
    }
  }

  template <typename T>
  VS2AModel<T> cast() const {
    VS2AModel<T> out(config_, vocab_, role_);
    out.params() = params_.template cast<T>();
    return out;
  }

 private:
  template <typename Block>
  void add_main(const TokenSeq& semantic, const std::vector<TokenSeq>& below, const TokenSeq& masked_layer,
                std::size_t layer, Block&& out) const {
    const Eigen::Index ts = token_length();
    if (!handles_layer(layer))
      throw ConfigError("vs2a: layer " + std::to_string(layer) + " is not handled by this model");
    if (below.size() < layer - 1)
      throw ShapeError("vs2a: layer " + std::to_string(layer) + " needs " + std::to_string(layer - 1) +
                       " lower layers, got " + std::to_string(below.size()));
    auto check = [&](const TokenSeq& s, const char* what) {
      if (static_cast<Eigen::Index>(s.size()) != ts)
        throw ShapeError(std::string("vs2a: ") + what + " length " + std::to_string(s.size()) + " != " +
                         std::to_string(ts));
    };
    check(semantic, "semantic");
    check(masked_layer, "masked layer");
    add_lookup(params_[semantic_table_], semantic, out);
    for (std::size_t k = 1; k < layer; ++k) {
      check(below[k - 1], "lower layer");
      add_lookup(params_[acoustic_tables_[k - 1]], below[k - 1], out);
    }
    add_lookup(params_[acoustic_tables_[layer - 1]], masked_layer, out);
    if (role_ == VS2ARole::kUpperLayers) out.rowwise() += params_[layer_table_].row(static_cast<Eigen::Index>(layer - 1));
  }

  nn::ModelConfig config_;
  VocabSpec vocab_;
  VS2ARole role_ = VS2ARole::kFirstLayer;
  nn::ParamSet<S> params_;
  std::size_t semantic_table_ = 0, layer_table_ = 0;
  std::vector<std::size_t> acoustic_tables_;
  VideoPrefixParams video_;
  nn::Transformer<S> backbone_;
};

template <typename S>
struct VS2ABundle {
  VS2AModel<S> first;  // layer 1
  VS2AModel<S> rest;   // layers 2..K, shared with a layer-index embedding

  const VocabSpec& vocab() const { return first.vocab(); }
  Eigen::Index token_length() const { return first.token_length(); }
  const VS2AModel<S>& model_for(std::size_t layer) const { return layer == 1 ? first : rest; }
  VS2AModel<S>& model_for(std::size_t layer) { return layer == 1 ? first : rest; }

  static VS2ABundle initialized(const nn::ModelConfig& first_cfg, const nn::ModelConfig& rest_cfg,
                                const VocabSpec& vocab, Rng& rng) {
    if (first_cfg.token_length != rest_cfg.token_length)
      throw ConfigError("vs2a: both models must share the sequence length");
    return {VS2AModel<S>::initialized(first_cfg, vocab, VS2ARole::kFirstLayer, rng),
            VS2AModel<S>::initialized(rest_cfg, vocab, VS2ARole::kUpperLayers, rng)};
  }
};

struct VS2ABatch {
  std::vector<TokenSeq> semantic;
  std::vector<AcousticTokenGrid> acoustic;
  std::vector<VideoFeatureSequence> video;
  std::vector<std::size_t> layer;  // 1-based layer predicted per example
  std::vector<MaskState> masks;    // over that layer
  std::vector<std::uint8_t> drop_video;

  std::size_t size() const { return semantic.size(); }
  void validate() const {
    const auto n = semantic.size();
    if (acoustic.size() != n || video.size() != n || layer.size() != n || masks.size() != n || drop_video.size() != n)
      throw ShapeError("vs2a batch: field counts differ");
    for (std::size_t i = 0; i < n; ++i) {
      if (layer[i] < 1 || layer[i] > acoustic[i].layers.size())
        throw ShapeError("vs2a batch: layer index out of range in example " + std::to_string(i));
      if (masks[i].size() != semantic[i].size() || acoustic[i].length() != semantic[i].size())
        throw ShapeError("vs2a batch: lengths differ in example " + std::to_string(i));
    }
  }
};

struct VS2ALoss {
  MaskedLoss total;
  std::vector<MaskedLoss> per_layer;  // index k-1 holds layer k statistics
};

/// Masked cross-entropy of `model` on the batch. Lower layers
/// always come from the ground truth grid.
template <typename S>
VS2ALoss vs2a_loss(const VS2AModel<S>& model, const VS2ABatch& batch, nn::ParamSet<S>* grads = nullptr) {
  batch.validate();
  const std::size_t n = batch.size();
  const TokenId mask_id = model.vocab().acoustic_mask_id();
  std::vector<TokenSeq> masked(n);
  std::vector<VS2AInput> inputs(n);
  TokenSeq targets;
  std::vector<std::uint8_t> mask;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t layer = batch.layer[i];
    masked[i] = apply_mask(batch.acoustic[i].layers[layer - 1], batch.masks[i], mask_id);
    inputs[i] = {&batch.semantic[i], &batch.acoustic[i].layers, &masked[i], layer, &batch.video[i],
                 batch.drop_video[i] != 0};
    const auto& t = batch.acoustic[i].layers[layer - 1];
    targets.insert(targets.end(), t.begin(), t.end());
    mask.insert(mask.end(), batch.masks[i].mask.begin(), batch.masks[i].mask.end());
  }
  typename VS2AModel<S>::Cache cache;
  const auto logits = model.forward(inputs, grads ? &cache : nullptr);
  nn::Mat<S> dlogits;
  VS2ALoss out;
  out.total = masked_ce_loss<S>(logits, targets, mask, grads ? &dlogits : nullptr);
  if (!std::isfinite(out.total.loss)) throw NumericError("vs2a: non-finite loss");
  const std::size_t k = model.vocab().acoustic_layers;
  out.per_layer.resize(k);
  for (std::size_t layer = 1; layer <= k; ++layer) {
    std::vector<std::uint8_t> sub(mask.size(), 0);
    bool any = false;
    const auto ts = static_cast<std::size_t>(model.token_length());
    for (std::size_t i = 0; i < n; ++i)
      if (batch.layer[i] == layer) {
        std::copy(batch.masks[i].mask.begin(), batch.masks[i].mask.end(), sub.begin() + static_cast<std::ptrdiff_t>(i * ts));
        any = true;
      }
    if (any) out.per_layer[layer - 1] = masked_ce_loss<S>(logits, targets, sub);
    else out.per_layer[layer - 1].degenerate = true;
  }
  if (grads && !out.total.degenerate) model.backward(cache, dlogits, *grads);
  return out;
}

/// Loss of the bundle on layer `layer` for every example of the batch.
template <typename S>
VS2ALoss vs2a_loss(const VS2ABundle<S>& bundle, VS2ABatch batch, std::size_t layer) {
  batch.layer.assign(batch.size(), layer);
  return vs2a_loss(bundle.model_for(layer), batch);
}

struct VS2AStepResult {
  VS2ALoss loss;
  std::uint64_t step = 0;
};

/// One AdamW step of `model`. Layers are drawn uniformly from the model's
/// range per example, then t, the mask over that layer, and the video drop.
template <typename S>
VS2AStepResult vs2a_train_step(VS2AModel<S>& model, nn::OptimizerState<S>& opt, VS2ABatch& batch, Rng& rng,
                               const TrainStepOptions& options = {}) {
  const std::size_t n = batch.size();
  const std::size_t k = model.vocab().acoustic_layers;
  batch.layer.resize(n);
  batch.masks.resize(n);
  batch.drop_video.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    batch.layer[i] = model.role() == VS2ARole::kFirstLayer
                         ? 1
                         : static_cast<std::size_t>(uniform_int(rng, 2, static_cast<std::int64_t>(k)));
    const double t = uniform01(rng);
    batch.masks[i] = sample_mask(batch.semantic[i].size(), t, rng, options.schedule);
    batch.drop_video[i] = uniform01(rng) < options.condition_dropout;
  }
  auto grads = model.params().zeros_like();
  VS2AStepResult out;
  out.loss = vs2a_loss(model, batch, &grads);
  if (!grads.all_finite()) throw NumericError("vs2a: non-finite gradients");
  if (!out.loss.total.degenerate) nn::optimizer_step(opt, model.params(), grads);
  out.step = opt.step;
  return out;
}

/// Scores layer `layer` given the semantic stream and the already decoded
/// lower layers; unconditional = video dropped.
template <typename S>
ScorePair score_acoustic(const VS2ABundle<S>& bundle, std::size_t layer, const TokenSeq& semantic,
                         const std::vector<TokenSeq>& below, const TokenSeq& current,
                         const VideoFeatureSequence& video, bool want_uncond) {
  const auto& model = bundle.model_for(layer);
  std::vector<VS2AInput> inputs{{&semantic, &below, &current, layer, &video, false}};
  if (want_uncond) inputs.push_back({&semantic, &below, &current, layer, &video, true});
  const nn::Mat<S> logits = model.forward(inputs);
  const Eigen::Index ts = model.token_length();
  ScorePair out;
  out.cond = logits.topRows(ts).template cast<float>();
  if (want_uncond) out.uncond = logits.bottomRows(ts).template cast<float>();
  return out;
}

template <typename T>
concept AcousticScorer = requires(const T& m, std::size_t layer, const TokenSeq& seq,
                                  const std::vector<TokenSeq>& below, const VideoFeatureSequence& video, bool u) {
  { m.vocab() } -> std::convertible_to<VocabSpec>;
  { m.token_length() } -> std::convertible_to<Eigen::Index>;
  { score_acoustic(m, layer, seq, below, seq, video, u) } -> std::same_as<ScorePair>;
};

struct VS2ATrace {
  std::vector<DecodeTrace> layers;
};

/// Decodes layer 1 first, then each higher layer conditioned on the layers
/// already decoded, with steps_per_layer[k-1] steps for layer k.
template <AcousticScorer Bundle>
AcousticTokenGrid vs2a_generate(const Bundle& bundle, const SemanticTokenSequence& semantic,
                                const VideoFeatureSequence& video, const std::vector<std::size_t>& steps_per_layer,
                                double cfg_scale, Rng& rng, VS2ATrace* trace = nullptr,
                                DecodeConfig base = DecodeConfig{}) {
  const std::size_t k = bundle.vocab().acoustic_layers;
  if (steps_per_layer.size() != k)
    throw ConfigError("vs2a_generate: " + std::to_string(steps_per_layer.size()) + " step counts for " +
                      std::to_string(k) + " layers");
  if (static_cast<Eigen::Index>(semantic.tokens.size()) != bundle.token_length())
    throw ShapeError("vs2a_generate: semantic length does not match the model");
  const TokenId mask_id = bundle.vocab().acoustic_mask_id();
  AcousticTokenGrid grid;
  for (std::size_t layer = 1; layer <= k; ++layer) {
    DecodeConfig decode = base;
    decode.steps = steps_per_layer[layer - 1];
    decode.cfg_scale = cfg_scale;
    decode.validate();
    const bool want_uncond = cfg_scale != 1.0;
    ScoreFn fn = [&](const TokenSeq& cur) {
      return score_acoustic(bundle, layer, semantic.tokens, grid.layers, cur, video, want_uncond);
    };
    DecodeTrace layer_trace;
    const TokenSeq initial(semantic.tokens.size(), mask_id);
    grid.layers.push_back(iterative_decode(fn, initial, mask_id, decode, rng, trace ? &layer_trace : nullptr));
    if (trace) trace->layers.push_back(std::move(layer_trace));
  }
  return grid;
}

}  // namespace bvs
