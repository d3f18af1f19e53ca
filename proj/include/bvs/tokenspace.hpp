#pragma once

// Token vocabularies, sequence types and the exact oracle codecs of the
// synthetic world.
//
// A semantic id is a pairing of a speech id and a background id:
//   semantic = speech * background_vocab_size + background
// and the K acoustic layers are the base-B digits of the semantic id, most
// significant digit first, so layer 1 carries the coarsest information.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "bvs/errors.hpp"
#include "bvs/random.hpp"

namespace bvs {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

struct VocabSpec {
  std::size_t speech_vocab_size = 33;      // 0 = SILENCE, 1..32 phonemes
  std::size_t background_vocab_size = 16;  // 0 = QUIET, 1..15 events
  std::size_t acoustic_layers = 4;         // K
  std::size_t acoustic_vocab = 8;          // B, per layer
  // Seed of the optional id scrambling applied before digit expansion; 0 = off.
  std::uint64_t acoustic_scramble_seed = 0;

  static constexpr TokenId kSilence = 0;
  static constexpr TokenId kQuiet = 0;

  std::size_t semantic_vocab_size() const {
    return speech_vocab_size * background_vocab_size;
  }
  // Mask ids sit one past the content range of each vocabulary.
  TokenId semantic_mask_id() const { return static_cast<TokenId>(semantic_vocab_size()); }
  TokenId acoustic_mask_id() const { return static_cast<TokenId>(acoustic_vocab); }

  std::size_t acoustic_code_space() const {
    std::size_t n = 1;
    for (std::size_t k = 0; k < acoustic_layers; ++k) n *= acoustic_vocab;
    return n;
  }

  void validate() const {
    if (speech_vocab_size < 2 || background_vocab_size < 1)
      throw ConfigError("vocab: speech vocab needs >= 2 ids and background >= 1");
    if (acoustic_layers < 1 || acoustic_vocab < 2)
      throw ConfigError("vocab: need at least one acoustic layer and B >= 2");
    if (acoustic_code_space() < semantic_vocab_size())
      throw ConfigError("vocab: B^K (" + std::to_string(acoustic_code_space()) +
                        ") is smaller than the semantic vocabulary (" +
                        std::to_string(semantic_vocab_size()) + ")");
  }

  bool operator==(const VocabSpec&) const = default;
};

struct SemanticTokenSequence {
  TokenSeq tokens;
  double rate = 10.0;  // tokens per second, informational
  bool operator==(const SemanticTokenSequence& o) const { return tokens == o.tokens; }
};

struct SpeechTokenSequence {
  TokenSeq tokens;
  bool operator==(const SpeechTokenSequence&) const = default;
};

/// K layers, layers[0] is the most significant (coarse) digit.
struct AcousticTokenGrid {
  std::vector<TokenSeq> layers;

  std::size_t length() const { return layers.empty() ? 0 : layers.front().size(); }
  bool operator==(const AcousticTokenGrid&) const = default;
};

/// Per-frame continuous condition vectors, row-major frames x dim.
struct VideoFeatureSequence {
  std::size_t dim = 0;
  std::vector<float> values;

  std::size_t frames() const { return dim == 0 ? 0 : values.size() / dim; }
  const float* frame(std::size_t f) const { return values.data() + f * dim; }
  bool operator==(const VideoFeatureSequence&) const = default;
};

inline void check_speech(TokenId id, const VocabSpec& v) {
  if (id >= v.speech_vocab_size)
    throw RangeError("speech id " + std::to_string(id) + " out of range [0, " +
                     std::to_string(v.speech_vocab_size) + ")");
}

inline void check_background(TokenId id, const VocabSpec& v) {
  if (id >= v.background_vocab_size)
    throw RangeError("background id " + std::to_string(id) + " out of range [0, " +
                     std::to_string(v.background_vocab_size) + ")");
}

inline void check_semantic(TokenId id, const VocabSpec& v) {
  if (id >= v.semantic_vocab_size())
    throw RangeError("semantic id " + std::to_string(id) + " out of range [0, " +
                     std::to_string(v.semantic_vocab_size()) + ")");
}

inline TokenId fuse_pair(TokenId speech_id, TokenId background_id, const VocabSpec& vocab) {
  check_speech(speech_id, vocab);
  check_background(background_id, vocab);
  return static_cast<TokenId>(speech_id * vocab.background_vocab_size + background_id);
}

inline std::pair<TokenId, TokenId> split_semantic(TokenId semantic_id, const VocabSpec& vocab) {
  check_semantic(semantic_id, vocab);
  const auto b = static_cast<TokenId>(vocab.background_vocab_size);
  return {semantic_id / b, semantic_id % b};
}

inline TokenSeq fuse_streams(const TokenSeq& speech, const TokenSeq& background,
                             const VocabSpec& vocab) {
  if (speech.size() != background.size())
    throw ShapeError("fuse_streams: speech length " + std::to_string(speech.size()) +
                     " != background length " + std::to_string(background.size()));
  TokenSeq out(speech.size());
  for (std::size_t i = 0; i < speech.size(); ++i) out[i] = fuse_pair(speech[i], background[i], vocab);
  return out;
}

/// Positionwise split into (speech stream, background stream).
inline std::pair<TokenSeq, TokenSeq> split_stream(const TokenSeq& semantic, const VocabSpec& vocab) {
  TokenSeq speech(semantic.size()), background(semantic.size());
  for (std::size_t i = 0; i < semantic.size(); ++i) {
    auto [s, b] = split_semantic(semantic[i], vocab);
    speech[i] = s;
    background[i] = b;
  }
  return {std::move(speech), std::move(background)};
}

/// Digit codec between semantic ids and acoustic grids, with the optional
/// seeded scrambling permutation resolved once at construction.
class AcousticCodec {
 public:
  explicit AcousticCodec(const VocabSpec& vocab) : vocab_(vocab) {
    vocab_.validate();
    const std::size_t n = vocab_.semantic_vocab_size();
    forward_.resize(n);
    std::iota(forward_.begin(), forward_.end(), TokenId{0});
    if (vocab_.acoustic_scramble_seed != 0) {
      Rng rng(vocab_.acoustic_scramble_seed);
      for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1));
        std::swap(forward_[i - 1], forward_[j]);
      }
    }
    inverse_.resize(n);
    for (std::size_t i = 0; i < n; ++i) inverse_[forward_[i]] = static_cast<TokenId>(i);
  }

  const VocabSpec& vocab() const { return vocab_; }

  /// Digits of one semantic id, most significant first.
  std::vector<TokenId> encode_id(TokenId semantic_id) const {
    check_semantic(semantic_id, vocab_);
    std::vector<TokenId> digits(vocab_.acoustic_layers);
    auto code = forward_[semantic_id];
    for (std::size_t k = vocab_.acoustic_layers; k-- > 0;) {
      digits[k] = static_cast<TokenId>(code % vocab_.acoustic_vocab);
      code /= static_cast<TokenId>(vocab_.acoustic_vocab);
    }
    return digits;
  }

  AcousticTokenGrid encode(const TokenSeq& semantic) const {
    AcousticTokenGrid grid;
    grid.layers.assign(vocab_.acoustic_layers, TokenSeq(semantic.size()));
    for (std::size_t i = 0; i < semantic.size(); ++i) {
      const auto digits = encode_id(semantic[i]);
      for (std::size_t k = 0; k < digits.size(); ++k) grid.layers[k][i] = digits[k];
    }
    return grid;
  }

  TokenSeq decode(const AcousticTokenGrid& grid) const {
    if (grid.layers.size() != vocab_.acoustic_layers)
      throw ShapeError("acoustic grid has " + std::to_string(grid.layers.size()) +
                       " layers, expected " + std::to_string(vocab_.acoustic_layers));
    const std::size_t len = grid.length();
    for (const auto& layer : grid.layers)
      if (layer.size() != len) throw ShapeError("acoustic grid layers differ in length");
    TokenSeq out(len);
    for (std::size_t i = 0; i < len; ++i) {
      std::uint64_t code = 0;
      for (std::size_t k = 0; k < vocab_.acoustic_layers; ++k) {
        const TokenId d = grid.layers[k][i];
        if (d >= vocab_.acoustic_vocab)
          throw RangeError("acoustic token " + std::to_string(d) + " at layer " + std::to_string(k + 1) +
                           ", position " + std::to_string(i) + " out of range");
        code = code * vocab_.acoustic_vocab + d;
      }
      if (code >= vocab_.semantic_vocab_size())
        throw RangeError("non-image code " + std::to_string(code) + " at position " + std::to_string(i) +
                         " (semantic vocabulary has " + std::to_string(vocab_.semantic_vocab_size()) +
                         " ids)");
      out[i] = inverse_[code];
    }
    return out;
  }

 private:
  VocabSpec vocab_;
  std::vector<TokenId> forward_;
  std::vector<TokenId> inverse_;
};

inline AcousticTokenGrid encode_acoustic(const SemanticTokenSequence& semantic, const VocabSpec& vocab) {
  return AcousticCodec(vocab).encode(semantic.tokens);
}

inline SemanticTokenSequence decode_acoustic(const AcousticTokenGrid& grid, const VocabSpec& vocab) {
  return SemanticTokenSequence{AcousticCodec(vocab).decode(grid)};
}

}  // namespace bvs
