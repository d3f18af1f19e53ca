#pragma once

#include <filesystem>
#include <string>

#include "bvs/sampler.hpp"
#include "bvs/tokenspace.hpp"
#include "bvs/v2as.hpp"
#include "bvs/vs2a.hpp"

namespace bvs::testing {

/// One-hot logits: +30 on the truth, -30 elsewhere.
inline nn::Mat<float> one_hot_logits(const TokenSeq& truth, std::size_t vocab) {
  nn::Mat<float> m = nn::Mat<float>::Constant(static_cast<Eigen::Index>(truth.size()), static_cast<Eigen::Index>(vocab), -30.f);
  for (std::size_t i = 0; i < truth.size(); ++i) m(static_cast<Eigen::Index>(i), truth[i]) = 30.f;
  return m;
}

/// Stage-1 stand-in that always scores the known semantic stream.
struct OracleSemantic {
  VocabSpec spec;
  TokenSeq truth;
  mutable std::size_t calls = 0;

  const VocabSpec& vocab() const { return spec; }
  Eigen::Index token_length() const { return static_cast<Eigen::Index>(truth.size()); }
};

inline ScorePair score_semantic(const OracleSemantic& m, const TokenSeq& current, const VideoFeatureSequence&,
                                const TokenSeq*, bool want_uncond) {
  ++m.calls;
  if (current.size() != m.truth.size()) throw ShapeError("oracle: wrong length");
  ScorePair p;
  p.cond = one_hot_logits(m.truth, m.spec.semantic_vocab_size());
  if (want_uncond) p.uncond = p.cond;
  return p;
}

/// Stage-2 stand-in: scores layer i with the digits of the semantic stream
/// it is given.
struct OracleAcoustic {
  VocabSpec spec;
  Eigen::Index length = 0;

  const VocabSpec& vocab() const { return spec; }
  Eigen::Index token_length() const { return length; }
};

inline ScorePair score_acoustic(const OracleAcoustic& m, std::size_t layer, const TokenSeq& semantic,
                                const std::vector<TokenSeq>& below, const TokenSeq&, const VideoFeatureSequence&,
                                bool want_uncond) {
  if (below.size() != layer - 1) throw ShapeError("oracle: lower layers missing");
  const auto grid = AcousticCodec(m.spec).encode(semantic);
  ScorePair p;
  p.cond = one_hot_logits(grid.layers[layer - 1], m.spec.acoustic_vocab);
  if (want_uncond) p.uncond = p.cond;
  return p;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("bvs_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace bvs::testing
