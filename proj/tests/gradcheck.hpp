#pragma once

// Central finite-difference check of analytic gradients on small models in
// double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "bvs/nn/tensor.hpp"
#include "bvs/random.hpp"
#include "bvs/synthworld.hpp"
#include "bvs/v2as.hpp"
#include "bvs/vs2a.hpp"

namespace bvs::testing {

struct GradCheck {
  std::size_t checked = 0;
  double max_rel = 0.0;
  std::string worst;
};

/// Relative error is |a - n| / max(|a|, |n|, floor). The floor keeps exactly
/// zero gradients (attention key biases) from turning round-off into a
/// relative error of 1.
///
/// `loss(grads)` returns the loss at the current parameters and, when
/// `grads` is non-null, accumulates analytic gradients into it.
inline GradCheck grad_check(nn::ParamSet<double>& params, const std::function<double(nn::ParamSet<double>*)>& loss,
                            std::size_t count, std::uint64_t seed, double h = 1e-4,
                            double floor = 1e-6) {
  auto grads = params.zeros_like();
  loss(&grads);
  Rng rng(seed);
  GradCheck out;
  for (std::size_t n = 0; n < count; ++n) {
    const auto t = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(params.size()) - 1));
    auto& m = params[t];
    const auto k = static_cast<Eigen::Index>(uniform_int(rng, 0, m.size() - 1));
    const double saved = m.data()[k];
    m.data()[k] = saved + h;
    const double up = loss(nullptr);
    m.data()[k] = saved - h;
    const double down = loss(nullptr);
    m.data()[k] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grads[t].data()[k];
    const double scale = std::max({std::abs(numeric), std::abs(analytic), floor});
    const double rel = std::abs(numeric - analytic) / scale;
    ++out.checked;
    if (rel > out.max_rel) {
      out.max_rel = rel;
      out.worst = params.name(t) + "[" + std::to_string(k) + "] analytic " + std::to_string(analytic) + " numeric " +
                  std::to_string(numeric);
    }
  }
  return out;
}

inline nn::ModelConfig tiny_v2as_config(const VocabSpec& v, std::size_t t_sem = 10, std::size_t t_v = 2) {
  auto c = default_v2as_config(v, t_sem, t_v, 4);
  c.depth = 2;
  c.model_dim = 16;
  c.heads = 2;
  c.feedforward_dim = 32;
  c.cross_attention_positions = {2};
  c.init_std = 0.3;
  return c;
}

/// Batch of two examples: one fully conditioned, one with speech and video
/// dropped, so both null paths carry gradient.
inline V2ASBatch tiny_v2as_batch(const VocabSpec& v, std::size_t t_sem, std::size_t t_v, std::uint64_t seed) {
  Rng rng(seed);
  V2ASBatch b;
  for (int e = 0; e < 2; ++e) {
    TokenSeq sp(t_sem), sem(t_sem);
    for (std::size_t i = 0; i < t_sem; ++i) {
      sp[i] = static_cast<TokenId>(uniform_int(rng, 0, static_cast<std::int64_t>(v.speech_vocab_size) - 1));
      const auto bg = static_cast<TokenId>(uniform_int(rng, 0, static_cast<std::int64_t>(v.background_vocab_size) - 1));
      sem[i] = fuse_pair(sp[i], bg, v);
    }
    VideoFeatureSequence video{4, std::vector<float>(t_v * 4)};
    for (auto& x : video.values) x = static_cast<float>(normal01(rng));
    b.targets.push_back(sem);
    b.speech.push_back(sp);
    b.video.push_back(video);
    b.masks.push_back(sample_mask(t_sem, 0.3, rng));
    b.drop_speech.push_back(e == 1);
    b.drop_video.push_back(e == 1);
  }
  return b;
}

inline nn::ModelConfig tiny_vs2a_config(const VocabSpec& v, std::size_t t_sem = 10, std::size_t t_v = 2) {
  auto c = default_vs2a_config(v, t_sem, t_v, 4);
  c.depth = 2;
  c.model_dim = 16;
  c.heads = 2;
  c.feedforward_dim = 32;
  c.init_std = 0.3;
  return c;
}

inline VS2ABatch tiny_vs2a_batch(const VocabSpec& v, std::size_t t_sem, std::size_t t_v, std::size_t layer,
                                 std::uint64_t seed) {
  Rng rng(seed);
  VS2ABatch b;
  const AcousticCodec codec(v);
  for (int e = 0; e < 2; ++e) {
    TokenSeq sem(t_sem);
    for (auto& s : sem) s = static_cast<TokenId>(uniform_int(rng, 0, static_cast<std::int64_t>(v.semantic_vocab_size()) - 1));
    VideoFeatureSequence video{4, std::vector<float>(t_v * 4)};
    for (auto& x : video.values) x = static_cast<float>(normal01(rng));
    b.semantic.push_back(sem);
    b.acoustic.push_back(codec.encode(sem));
    b.video.push_back(video);
    b.layer.push_back(layer);
    b.masks.push_back(sample_mask(t_sem, 0.3, rng));
    b.drop_video.push_back(e == 1);
  }
  return b;
}

}  // namespace bvs::testing
