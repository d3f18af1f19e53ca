#pragma once

// Stage 1: video- and speech-conditioned semantic token model.
//
// Input rows per example: [video prefix (T_v) ; masked semantic tokens (T_sem)],
// with one modality embedding added to each segment. Speech tokens are
// embedded with their own table and positional table and enter only through
// the cross-attention blocks. Logits are read from the semantic segment.

#include <cmath>
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

namespace bvs {

inline nn::ModelConfig default_v2as_config(const VocabSpec& vocab, std::size_t t_sem = 100, std::size_t t_v = 10,
                                           std::size_t video_dim = 16) {
  nn::ModelConfig c;
  c.depth = 4;
  c.model_dim = 64;
  c.heads = 4;
  c.feedforward_dim = 256;
  c.cross_attention_positions = {3, 4};
  c.input_vocab = vocab.semantic_vocab_size() + 1;
  c.output_vocab = vocab.semantic_vocab_size();
  c.condition_vocab = vocab.speech_vocab_size;
  c.condition_length = t_sem;
  c.token_length = t_sem;
  c.video_length = t_v;
  c.video_dim = video_dim;
  c.max_sequence_length = t_sem + t_v;
  return c;
}

/// One example as seen by the model.
struct V2ASInput {
  const TokenSeq* masked_semantic = nullptr;
  const VideoFeatureSequence* video = nullptr;
  const TokenSeq* speech = nullptr;
  bool drop_speech = false;
  bool drop_video = false;
};

struct V2ASBatch {
  std::vector<TokenSeq> targets;  // semantic
  std::vector<TokenSeq> speech;
  std::vector<VideoFeatureSequence> video;
  std::vector<MaskState> masks;
  std::vector<std::uint8_t> drop_speech, drop_video;

  std::size_t size() const { return targets.size(); }
  void validate() const {
    const auto n = targets.size();
    if (speech.size() != n || video.size() != n || masks.size() != n || drop_speech.size() != n ||
        drop_video.size() != n)
      throw ShapeError("v2as batch: field counts differ");
    for (std::size_t i = 0; i < n; ++i)
      if (speech[i].size() != targets[i].size() || masks[i].size() != targets[i].size())
        throw ShapeError("v2as batch: semantic, speech and mask lengths differ in example " + std::to_string(i));
  }
};

template <typename S>
class V2ASModel {
 public:
  struct Cache {
    typename nn::Transformer<S>::Cache backbone;
    std::vector<V2ASInput> inputs;
  };

  V2ASModel() = default;

  V2ASModel(const nn::ModelConfig& config, const VocabSpec& vocab) : config_(config), vocab_(vocab) {
    vocab_.validate();
    config_.validate();
    if (config_.input_vocab != vocab_.semantic_vocab_size() + 1 || config_.output_vocab != vocab_.semantic_vocab_size())
      throw ConfigError("v2as: model vocab sizes do not match the semantic vocabulary (" +
                        std::to_string(vocab_.semantic_vocab_size()) + " + mask)");
    if (config_.condition_vocab != vocab_.speech_vocab_size)
      throw ConfigError("v2as: condition vocab must equal the speech vocabulary");
    if (config_.condition_length != config_.token_length)
      throw ConfigError("v2as: speech memory length must equal the semantic length");
    const auto d = static_cast<Eigen::Index>(config_.model_dim);
    semantic_table_ = params_.add("semantic.table", static_cast<Eigen::Index>(config_.input_vocab), d);
    video_ = VideoPrefixParams::add(params_, config_.video_dim, config_.model_dim);
    speech_table_ = params_.add("speech.table", static_cast<Eigen::Index>(config_.condition_vocab), d);
    speech_pos_ = params_.add("speech.pos", static_cast<Eigen::Index>(config_.condition_length), d);
    backbone_ = nn::Transformer<S>(config_, params_);
  }

  /// Random init, except that both positional tables start as sinusoids and
  /// speech row i equals the main-sequence row of semantic position i, so
  /// cross-attention starts with matching position codes on both sides.
  static V2ASModel initialized(const nn::ModelConfig& config, const VocabSpec& vocab, Rng& rng) {
    V2ASModel m(config, vocab);
    nn::init_params(m.params_, rng, config.init_std);
    const double amp = config.init_std * std::sqrt(2.0);
    nn::sinusoid_rows(m.params_.at("pos.table"), amp);
    nn::sinusoid_rows(m.params_[m.speech_pos_], amp, m.video_length());
    return m;
  }

  const nn::ModelConfig& config() const { return config_; }
  const VocabSpec& vocab() const { return vocab_; }
  nn::ParamSet<S>& params() { return params_; }
  const nn::ParamSet<S>& params() const { return params_; }
  const nn::Transformer<S>& backbone() const { return backbone_; }

  Eigen::Index video_length() const { return static_cast<Eigen::Index>(config_.video_length); }
  Eigen::Index token_length() const { return static_cast<Eigen::Index>(config_.token_length); }
  Eigen::Index joint_length() const { return video_length() + token_length(); }

  /// Joint embedded sequence [video ; semantic] without positional terms.
  nn::Mat<S> assemble_inputs(const TokenSeq& masked_semantic, const VideoFeatureSequence& video,
                             bool drop_video = false) const {
    nn::Mat<S> out(joint_length(), static_cast<Eigen::Index>(config_.model_dim));
    write_example(masked_semantic, video, drop_video, out);
    return out;
  }

  /// Stacked semantic-segment logits, one block of T_sem rows per input.
  nn::Mat<S> forward(const std::vector<V2ASInput>& inputs, Cache* cache = nullptr) const {
    const auto n = static_cast<Eigen::Index>(inputs.size());
    const auto d = static_cast<Eigen::Index>(config_.model_dim);
    const Eigen::Index tv = video_length(), ts = token_length(), len = joint_length();
    nn::Mat<S> x(n * len, d);
    std::vector<nn::RowSpan> spans(inputs.size());
    Eigen::Index mem_rows = 0;
    for (const auto& in : inputs)
      if (!in.drop_speech) mem_rows += ts;
    nn::Mat<S> memory(mem_rows, d);
    Eigen::Index at = 0;
    for (Eigen::Index e = 0; e < n; ++e) {
      const auto& in = inputs[static_cast<std::size_t>(e)];
      if (!in.masked_semantic || !in.video) throw ShapeError("v2as: input is missing semantic tokens or video");
      auto rows = x.middleRows(e * len, len);
      write_example(*in.masked_semantic, *in.video, in.drop_video, rows);
      if (in.drop_speech) {
        spans[static_cast<std::size_t>(e)] = {0, 0};
        continue;
      }
      if (!in.speech) throw ConditionError("v2as: speech condition required unless dropped");
      if (static_cast<Eigen::Index>(in.speech->size()) != ts)
        throw ShapeError("v2as: speech length " + std::to_string(in.speech->size()) + " != " + std::to_string(ts));
      auto mem = memory.middleRows(at, ts);
      mem = params_[speech_pos_];
      add_lookup(params_[speech_table_], *in.speech, mem);
      spans[static_cast<std::size_t>(e)] = {at, ts};
      at += ts;
    }
    if (cache) cache->inputs = inputs;
    return backbone_.forward(params_, x, n, &memory, spans, tv, cache ? &cache->backbone : nullptr);
  }

  void backward(const Cache& cache, const nn::Mat<S>& dlogits, nn::ParamSet<S>& grads) const {
    const auto& inputs = cache.inputs;
    const Eigen::Index tv = video_length(), ts = token_length(), len = joint_length();
    Eigen::Index mem_rows = 0;
    for (const auto& in : inputs)
      if (!in.drop_speech) mem_rows += ts;
    nn::Mat<S> dmemory = nn::Mat<S>::Zero(mem_rows, static_cast<Eigen::Index>(config_.model_dim));
    const nn::Mat<S> dx = backbone_.backward(params_, cache.backbone, dlogits, grads, &dmemory);
    Eigen::Index at = 0;
    for (std::size_t e = 0; e < inputs.size(); ++e) {
      const auto& in = inputs[e];
      const auto rows = dx.middleRows(static_cast<Eigen::Index>(e) * len, len);
      video_prefix_backward(video_, *in.video, in.drop_video, rows.topRows(tv), grads);
      const auto sem = rows.bottomRows(ts);
      grads[video_.modality_tokens].row(0) += sem.colwise().sum();
      scatter_lookup(grads[semantic_table_], *in.masked_semantic, sem);
      if (in.drop_speech) continue;
      const auto dm = dmemory.middleRows(at, ts);
      grads[speech_pos_] += dm;
      scatter_lookup(grads[speech_table_], *in.speech, dm);
      at += ts;
    }
  }

  template <typename T>
  V2ASModel<T> cast() const {
    V2ASModel<T> out(config_, vocab_);
    out.params() = params_.template cast<T>();
    return out;
  }

 private:
  template <typename Block>
  void write_example(const TokenSeq& masked_semantic, const VideoFeatureSequence& video, bool drop_video,
                     Block&& out) const {
    const Eigen::Index tv = video_length(), ts = token_length();
    if (static_cast<Eigen::Index>(masked_semantic.size()) != ts)
      throw ShapeError("v2as: semantic length " + std::to_string(masked_semantic.size()) + " != " + std::to_string(ts));
    write_video_prefix(params_, video_, video, drop_video, out.topRows(tv));
    auto sem = out.bottomRows(ts);
    sem.rowwise() = params_[video_.modality_tokens].row(0);
    add_lookup(params_[semantic_table_], masked_semantic, sem);
  }

  nn::ModelConfig config_;
  VocabSpec vocab_;
  nn::ParamSet<S> params_;
  std::size_t semantic_table_ = 0, speech_table_ = 0, speech_pos_ = 0;
  VideoPrefixParams video_;
  nn::Transformer<S> backbone_;
};

namespace detail {

inline std::vector<TokenSeq> masked_inputs(const V2ASBatch& batch, TokenId mask_id) {
  std::vector<TokenSeq> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(apply_mask(batch.targets[i], batch.masks[i], mask_id));
  return out;
}

inline std::vector<V2ASInput> v2as_inputs(const V2ASBatch& batch, const std::vector<TokenSeq>& masked) {
  std::vector<V2ASInput> inputs(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    inputs[i] = {&masked[i], &batch.video[i], &batch.speech[i], batch.drop_speech[i] != 0, batch.drop_video[i] != 0};
  return inputs;
}

template <typename T>
void concat_rows(const std::vector<T>& parts, T& out) {
  out.clear();
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
}

}  // namespace detail

/// Masked cross-entropy over the semantic segment of a batch
/// (mean over all masked positions of the batch). With `grads` non-null the
/// parameter gradients of that loss are accumulated into it.
template <typename S>
MaskedLoss v2as_loss(const V2ASModel<S>& model, const V2ASBatch& batch, nn::ParamSet<S>* grads = nullptr) {
  batch.validate();
  const auto masked = detail::masked_inputs(batch, model.vocab().semantic_mask_id());
  const auto inputs = detail::v2as_inputs(batch, masked);
  TokenSeq targets;
  std::vector<std::uint8_t> mask;
  detail::concat_rows(batch.targets, targets);
  for (const auto& m : batch.masks) mask.insert(mask.end(), m.mask.begin(), m.mask.end());
  typename V2ASModel<S>::Cache cache;
  const auto logits = model.forward(inputs, grads ? &cache : nullptr);
  nn::Mat<S> dlogits;
  const auto result = masked_ce_loss<S>(logits, targets, mask, grads ? &dlogits : nullptr);
  if (!std::isfinite(result.loss)) throw NumericError("v2as: non-finite loss");
  if (grads && !result.degenerate) model.backward(cache, dlogits, *grads);
  return result;
}

struct TrainStepOptions {
  MaskSchedule schedule;
  double condition_dropout = 0.1;
  // Ablation: the speech memory is always replaced by the null vector.
  bool speech_disabled = false;
};

struct StepResult {
  MaskedLoss loss;
  std::uint64_t step = 0;  // optimizer step count after the update
};

/// Draws t, masks and condition-drop flags per example, then takes one AdamW
/// step. `batch.masks` and drop flags are overwritten.
template <typename S>
StepResult v2as_train_step(V2ASModel<S>& model, nn::OptimizerState<S>& opt, V2ASBatch& batch, Rng& rng,
                           const TrainStepOptions& options = {}) {
  const std::size_t n = batch.size();
  batch.masks.resize(n);
  batch.drop_speech.assign(n, 0);
  batch.drop_video.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = uniform01(rng);
    batch.masks[i] = sample_mask(batch.targets[i].size(), t, rng, options.schedule);
    batch.drop_speech[i] = options.speech_disabled || uniform01(rng) < options.condition_dropout;
    batch.drop_video[i] = uniform01(rng) < options.condition_dropout;
  }
  auto grads = model.params().zeros_like();
  StepResult out;
  out.loss = v2as_loss(model, batch, &grads);
  if (!grads.all_finite()) throw NumericError("v2as: non-finite gradients");
  if (!out.loss.degenerate) nn::optimizer_step(opt, model.params(), grads);
  out.step = opt.step;
  return out;
}

/// Conditional and unconditional (speech and video both dropped) logits for
/// one partially masked semantic sequence.
template <typename S>
ScorePair v2as_scores(const V2ASModel<S>& model, const TokenSeq& current, const VideoFeatureSequence& video,
                      const TokenSeq* speech, bool want_uncond) {
  std::vector<V2ASInput> inputs{{&current, &video, speech, speech == nullptr, false}};
  if (want_uncond) inputs.push_back({&current, &video, nullptr, true, true});
  const nn::Mat<S> logits = model.forward(inputs);
  const Eigen::Index ts = model.token_length();
  ScorePair out;
  out.cond = logits.topRows(ts).template cast<float>();
  if (want_uncond) out.uncond = logits.bottomRows(ts).template cast<float>();
  return out;
}

/// Anything that can score a partially masked semantic sequence: the trained
/// model, or a test double.
template <typename T>
concept SemanticScorer = requires(const T& m, const TokenSeq& cur, const VideoFeatureSequence& video,
                                  const TokenSeq* speech, bool want_uncond) {
  { m.vocab() } -> std::convertible_to<VocabSpec>;
  { m.token_length() } -> std::convertible_to<Eigen::Index>;
  { score_semantic(m, cur, video, speech, want_uncond) } -> std::same_as<ScorePair>;
};

template <typename S>
ScorePair score_semantic(const V2ASModel<S>& model, const TokenSeq& current, const VideoFeatureSequence& video,
                         const TokenSeq* speech, bool want_uncond) {
  return v2as_scores(model, current, video, speech, want_uncond);
}

/// Fully masked start, iterative parallel decoding over the semantic segment.
template <SemanticScorer Model>
SemanticTokenSequence v2as_generate(const Model& model, const VideoFeatureSequence& video,
                                    const SpeechTokenSequence& speech, DecodeConfig decode, Rng& rng,
                                    DecodeTrace* trace = nullptr) {
  decode.validate();
  const bool want_uncond = decode.cfg_scale != 1.0;
  const TokenId mask_id = model.vocab().semantic_mask_id();
  ScoreFn fn = [&](const TokenSeq& cur) { return score_semantic(model, cur, video, &speech.tokens, want_uncond); };
  const TokenSeq initial(static_cast<std::size_t>(model.token_length()), mask_id);
  return SemanticTokenSequence{iterative_decode(fn, initial, mask_id, decode, rng, trace)};
}

}  // namespace bvs
