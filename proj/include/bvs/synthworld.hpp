#pragma once

// Procedural multimodal world with exact oracles.
//
// A sample is a fixed-length clip: a speech stream (words from a seeded
// lexicon separated by silence), an independent background stream (1-4 event
// segments whose boundaries fall on video frames), the fused semantic stream,
// its acoustic grid, and per-frame video features = event vector + noise.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "bvs/errors.hpp"
#include "bvs/io.hpp"
#include "bvs/kv.hpp"
#include "bvs/random.hpp"
#include "bvs/tokenspace.hpp"

namespace bvs {

using WordId = std::uint32_t;

struct WorldConfig {
  VocabSpec vocab;
  std::size_t t_sem = 100;
  std::size_t t_v = 10;
  std::size_t video_dim = 16;
  std::size_t lexicon_size = 50;
  std::size_t word_len_min = 3, word_len_max = 6;
  std::size_t words_min = 0, words_max = 3;
  std::size_t min_word_gap = 2;
  std::size_t segments_min = 1, segments_max = 4;
  double video_noise = 0.1;
  std::uint64_t seed = 1234;

  std::size_t ratio() const { return t_v == 0 ? 0 : t_sem / t_v; }

  void validate() const {
    vocab.validate();
    if (t_v == 0 || t_sem == 0 || t_sem % t_v != 0)
      throw ConfigError("world: t_sem (" + std::to_string(t_sem) + ") must be a positive multiple of t_v (" +
                        std::to_string(t_v) + ")");
    if (video_dim == 0) throw ConfigError("world: video_dim must be > 0");
    if (word_len_min < 1 || word_len_min > word_len_max) throw ConfigError("world: empty word length range");
    if (words_min > words_max) throw ConfigError("world: empty words-per-sample range");
    if (segments_min < 1 || segments_min > segments_max || segments_max > t_v)
      throw ConfigError("world: background segment range must be within 1..t_v");
    if (vocab.background_vocab_size < 2 && segments_max > 1)
      throw ConfigError("world: several segments need at least two background ids");
    if (!(video_noise >= 0.0)) throw ConfigError("world: video_noise must be >= 0");
    const std::size_t longest = words_max * word_len_max + (words_max > 0 ? (words_max - 1) * min_word_gap : 0);
    if (longest > t_sem) throw ConfigError("world: the longest utterance does not fit in t_sem");
    // Distinct phoneme strings must exist for the whole lexicon.
    double space = 0.0;
    for (std::size_t l = word_len_min; l <= word_len_max; ++l)
      space += std::pow(static_cast<double>(vocab.speech_vocab_size - 1), static_cast<double>(l));
    if (lexicon_size == 0 || static_cast<double>(lexicon_size) > space)
      throw ConfigError("world: lexicon_size cannot be realized with the phoneme inventory");
  }

  kv::Map to_kv(const std::string& prefix = "world.") const {
    kv::Map m;
    m[prefix + "speech_vocab"] = std::to_string(vocab.speech_vocab_size);
    m[prefix + "background_vocab"] = std::to_string(vocab.background_vocab_size);
    m[prefix + "acoustic_layers"] = std::to_string(vocab.acoustic_layers);
    m[prefix + "acoustic_vocab"] = std::to_string(vocab.acoustic_vocab);
    m[prefix + "acoustic_scramble_seed"] = std::to_string(vocab.acoustic_scramble_seed);
    m[prefix + "t_sem"] = std::to_string(t_sem);
    m[prefix + "t_v"] = std::to_string(t_v);
    m[prefix + "video_dim"] = std::to_string(video_dim);
    m[prefix + "lexicon_size"] = std::to_string(lexicon_size);
    m[prefix + "word_len_min"] = std::to_string(word_len_min);
    m[prefix + "word_len_max"] = std::to_string(word_len_max);
    m[prefix + "words_min"] = std::to_string(words_min);
    m[prefix + "words_max"] = std::to_string(words_max);
    m[prefix + "min_word_gap"] = std::to_string(min_word_gap);
    m[prefix + "segments_min"] = std::to_string(segments_min);
    m[prefix + "segments_max"] = std::to_string(segments_max);
    m[prefix + "video_noise"] = kv::fmt_double(video_noise);
    m[prefix + "seed"] = std::to_string(seed);
    return m;
  }

  void read_kv(kv::Reader& r, const std::string& prefix = "world.") {
    r.get(prefix + "speech_vocab", vocab.speech_vocab_size);
    r.get(prefix + "background_vocab", vocab.background_vocab_size);
    r.get(prefix + "acoustic_layers", vocab.acoustic_layers);
    r.get(prefix + "acoustic_vocab", vocab.acoustic_vocab);
    r.get(prefix + "acoustic_scramble_seed", vocab.acoustic_scramble_seed);
    r.get(prefix + "t_sem", t_sem);
    r.get(prefix + "t_v", t_v);
    r.get(prefix + "video_dim", video_dim);
    r.get(prefix + "lexicon_size", lexicon_size);
    r.get(prefix + "word_len_min", word_len_min);
    r.get(prefix + "word_len_max", word_len_max);
    r.get(prefix + "words_min", words_min);
    r.get(prefix + "words_max", words_max);
    r.get(prefix + "min_word_gap", min_word_gap);
    r.get(prefix + "segments_min", segments_min);
    r.get(prefix + "segments_max", segments_max);
    r.get(prefix + "video_noise", video_noise);
    r.get(prefix + "seed", seed);
  }

  bool operator==(const WorldConfig&) const = default;
};

struct WorldSample {
  VideoFeatureSequence video;
  SpeechTokenSequence speech;
  TokenSeq background;
  SemanticTokenSequence semantic;
  AcousticTokenGrid acoustic;
  std::vector<WordId> transcript;
  std::vector<std::uint32_t> event_onsets;  // video frame indices

  bool operator==(const WorldSample& o) const {
    return video == o.video && speech == o.speech && background == o.background && semantic == o.semantic &&
           acoustic == o.acoustic && transcript == o.transcript && event_onsets == o.event_onsets;
  }
};

class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(std::vector<TokenSeq> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], static_cast<WordId>(i));
  }

  std::size_t size() const { return words_.size(); }
  /// Reserved id returned for phoneme runs that are not lexicon words.
  WordId unk_id() const { return static_cast<WordId>(words_.size()); }
  const TokenSeq& phonemes(WordId w) const {
    if (w >= words_.size()) throw InputError("word id " + std::to_string(w) + " is not in the lexicon");
    return words_[w];
  }
  WordId lookup(const TokenSeq& run) const {
    auto it = index_.find(run);
    return it == index_.end() ? unk_id() : it->second;
  }

 private:
  std::vector<TokenSeq> words_;
  std::map<TokenSeq, WordId> index_;
};

namespace detail {
inline constexpr std::uint64_t kLexiconStream = 0x6c657869636f6eULL;
inline constexpr std::uint64_t kEventStream = 0x6576656e7473ULL;
}  // namespace detail

inline Lexicon make_lexicon(const WorldConfig& config) {
  Rng rng(derive_seed(config.seed, detail::kLexiconStream));
  std::set<TokenSeq> seen;
  std::vector<TokenSeq> words;
  while (words.size() < config.lexicon_size) {
    const auto len = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(config.word_len_min),
                                                          static_cast<std::int64_t>(config.word_len_max)));
    TokenSeq w(len);
    for (auto& p : w) p = static_cast<TokenId>(uniform_int(rng, 1, static_cast<std::int64_t>(config.vocab.speech_vocab_size) - 1));
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  return Lexicon(std::move(words));
}

/// One seeded standard-normal vector per background id.
inline std::vector<std::vector<float>> make_event_table(const WorldConfig& config) {
  Rng rng(derive_seed(config.seed, detail::kEventStream));
  std::vector<std::vector<float>> table(config.vocab.background_vocab_size, std::vector<float>(config.video_dim));
  for (auto& row : table)
    for (auto& x : row) x = static_cast<float>(normal01(rng));
  return table;
}

inline SpeechTokenSequence oracle_speech_extract(const SemanticTokenSequence& semantic, const VocabSpec& vocab) {
  return SpeechTokenSequence{split_stream(semantic.tokens, vocab).first};
}

/// Splits on silence and maps each maximal phoneme run to its lexicon word
/// (UNK when the run is not a word).
inline std::vector<WordId> oracle_transcribe(const SpeechTokenSequence& speech, const Lexicon& lexicon) {
  std::vector<WordId> out;
  TokenSeq run;
  for (std::size_t i = 0; i <= speech.tokens.size(); ++i) {
    const bool silence = i == speech.tokens.size() || speech.tokens[i] == VocabSpec::kSilence;
    if (!silence) {
      run.push_back(speech.tokens[i]);
    } else if (!run.empty()) {
      out.push_back(lexicon.lookup(run));
      run.clear();
    }
  }
  return out;
}

/// Semantic-frame indices where the background id changes (position 0 excluded).
inline std::vector<std::uint32_t> extract_event_onsets(const TokenSeq& background) {
  std::vector<std::uint32_t> out;
  for (std::size_t i = 1; i < background.size(); ++i)
    if (background[i] != background[i - 1]) out.push_back(static_cast<std::uint32_t>(i));
  return out;
}

/// Speech stream for a transcript: 5 leading silence tokens, then the words
/// left-aligned with `gap` silence tokens between them.
inline SpeechTokenSequence transcript_to_speech(const std::vector<WordId>& words, const Lexicon& lexicon,
                                                std::size_t length, std::size_t gap = 2, std::size_t lead = 5) {
  SpeechTokenSequence out{TokenSeq(length, VocabSpec::kSilence)};
  std::size_t at = lead;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i] >= lexicon.size())
      throw InputError("transcript word " + std::to_string(words[i]) + " is not in the lexicon (size " +
                       std::to_string(lexicon.size()) + ")");
    const auto& ph = lexicon.phonemes(words[i]);
    if (i > 0) at += gap;
    if (at + ph.size() > length)
      throw InputError("transcript does not fit in " + std::to_string(length) + " speech tokens");
    std::copy(ph.begin(), ph.end(), out.tokens.begin() + static_cast<std::ptrdiff_t>(at));
    at += ph.size();
  }
  return out;
}

class SynthWorld {
 public:
  explicit SynthWorld(const WorldConfig& config)
      : config_(config), lexicon_((config.validate(), make_lexicon(config))), events_(make_event_table(config)),
        codec_(config.vocab) {}

  const WorldConfig& config() const { return config_; }
  const Lexicon& lexicon() const { return lexicon_; }
  const std::vector<std::vector<float>>& event_table() const { return events_; }
  const AcousticCodec& codec() const { return codec_; }

  std::uint64_t sample_seed(std::uint64_t index) const { return derive_seed(config_.seed, index); }

  WorldSample gen_indexed(std::uint64_t index) const { return gen_sample(sample_seed(index)); }

  WorldSample gen_sample(std::uint64_t sample_seed) const {
    const auto& c = config_;
    Rng rng(sample_seed);
    WorldSample s;

    // Speech: choose words, then spread the spare silence over the gaps.
    const auto n_words = static_cast<std::size_t>(
        uniform_int(rng, static_cast<std::int64_t>(c.words_min), static_cast<std::int64_t>(c.words_max)));
    s.speech.tokens.assign(c.t_sem, VocabSpec::kSilence);
    std::size_t used = 0;
    for (std::size_t i = 0; i < n_words; ++i) {
      const auto w = static_cast<WordId>(uniform_int(rng, 0, static_cast<std::int64_t>(lexicon_.size()) - 1));
      s.transcript.push_back(w);
      used += lexicon_.phonemes(w).size();
    }
    if (n_words > 0) {
      used += (n_words - 1) * c.min_word_gap;
      std::vector<std::size_t> gaps(n_words + 1, 0);
      for (std::size_t i = 1; i < n_words; ++i) gaps[i] = c.min_word_gap;
      for (std::size_t k = used; k < c.t_sem; ++k)
        ++gaps[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n_words)))];
      std::size_t at = 0;
      for (std::size_t i = 0; i < n_words; ++i) {
        at += gaps[i];
        const auto& ph = lexicon_.phonemes(s.transcript[i]);
        std::copy(ph.begin(), ph.end(), s.speech.tokens.begin() + static_cast<std::ptrdiff_t>(at));
        at += ph.size();
      }
    }

    // Background: segment boundaries on video frames, adjacent events differ.
    const auto n_seg = static_cast<std::size_t>(
        uniform_int(rng, static_cast<std::int64_t>(c.segments_min), static_cast<std::int64_t>(c.segments_max)));
    std::vector<std::uint32_t> frames;
    for (std::uint32_t f = 1; f < c.t_v; ++f) frames.push_back(f);
    for (std::size_t i = 0; i + 1 < n_seg; ++i) {
      const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                          static_cast<std::int64_t>(frames.size()) - 1));
      std::swap(frames[i], frames[j]);
    }
    s.event_onsets.assign(frames.begin(), frames.begin() + static_cast<std::ptrdiff_t>(n_seg - 1));
    std::sort(s.event_onsets.begin(), s.event_onsets.end());
    std::vector<TokenId> frame_event(c.t_v);
    TokenId current = static_cast<TokenId>(uniform_int(rng, 0, static_cast<std::int64_t>(c.vocab.background_vocab_size) - 1));
    std::size_t next_boundary = 0;
    for (std::uint32_t f = 0; f < c.t_v; ++f) {
      if (next_boundary < s.event_onsets.size() && s.event_onsets[next_boundary] == f) {
        auto e = static_cast<TokenId>(uniform_int(rng, 0, static_cast<std::int64_t>(c.vocab.background_vocab_size) - 2));
        current = e >= current ? e + 1 : e;
        ++next_boundary;
      }
      frame_event[f] = current;
    }
    const std::size_t r = c.ratio();
    s.background.resize(c.t_sem);
    for (std::size_t i = 0; i < c.t_sem; ++i) s.background[i] = frame_event[i / r];

    s.video.dim = c.video_dim;
    s.video.values.resize(c.t_v * c.video_dim);
    for (std::size_t f = 0; f < c.t_v; ++f)
      for (std::size_t k = 0; k < c.video_dim; ++k)
        s.video.values[f * c.video_dim + k] =
            events_[frame_event[f]][k] + static_cast<float>(c.video_noise * normal01(rng));

    s.semantic.tokens = fuse_streams(s.speech.tokens, s.background, c.vocab);
    s.semantic.rate = static_cast<double>(c.t_sem) / 10.0;
    s.acoustic = codec_.encode(s.semantic.tokens);
    return s;
  }

  /// Nearest event vector for each video frame.
  std::vector<TokenId> classify_frames(const VideoFeatureSequence& video) const {
    std::vector<TokenId> out(video.frames());
    for (std::size_t f = 0; f < video.frames(); ++f) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < events_.size(); ++e) {
        double d = 0.0;
        for (std::size_t k = 0; k < video.dim; ++k) {
          const double diff = static_cast<double>(video.frame(f)[k]) - events_[e][k];
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          out[f] = static_cast<TokenId>(e);
        }
      }
    }
    return out;
  }

 private:
  WorldConfig config_;
  Lexicon lexicon_;
  std::vector<std::vector<float>> events_;
  AcousticCodec codec_;
};

inline WorldSample gen_sample(const WorldConfig& config, std::uint64_t sample_seed) {
  return SynthWorld(config).gen_sample(sample_seed);
}

/// Checks every cross-field invariant of a generated sample.
inline void check_sample(const WorldSample& s, const SynthWorld& world) {
  const auto& c = world.config();
  if (s.speech.tokens.size() != c.t_sem || s.background.size() != c.t_sem || s.semantic.tokens.size() != c.t_sem)
    throw IntegrityError("sample: stream lengths differ from t_sem");
  if (s.video.frames() != c.t_v || s.video.dim != c.video_dim) throw IntegrityError("sample: video shape mismatch");
  if (s.semantic.tokens != fuse_streams(s.speech.tokens, s.background, c.vocab))
    throw IntegrityError("sample: semantic stream is not the fusion of speech and background");
  if (s.acoustic != world.codec().encode(s.semantic.tokens))
    throw IntegrityError("sample: acoustic grid does not encode the semantic stream");
  if (s.transcript != oracle_transcribe(s.speech, world.lexicon()))
    throw IntegrityError("sample: transcript does not match the speech stream");
  auto onsets = extract_event_onsets(s.background);
  std::vector<std::uint32_t> declared;
  for (auto f : s.event_onsets) declared.push_back(static_cast<std::uint32_t>(f * c.ratio()));
  if (onsets != declared) throw IntegrityError("sample: event onsets disagree with the background stream");
}

// ---------------------------------------------------------------------------
// Dataset files
//
// "BVSDATA\0" magic, u32 format version, u32-length-prefixed world config
// text, u32 sample count, u64 master seed, then per sample in order:
// video (f32 list, frames x dim), speech, background, semantic, the K
// acoustic layers, transcript, onsets (u32 lists). All little-endian.

inline constexpr char kDatasetMagic[8] = {'B', 'V', 'S', 'D', 'A', 'T', 'A', '\0'};
inline constexpr std::uint32_t kDatasetVersion = 1;

struct Dataset {
  WorldConfig config;
  std::vector<WorldSample> samples;
  std::uint64_t first_index = 0;  // world index of samples[0]
};

/// Samples [first, first + n) of the world, generated on `workers` threads.
/// Output is independent of the worker count.
inline std::vector<WorldSample> gen_samples(const SynthWorld& world, std::uint64_t first, std::size_t n,
                                            std::size_t workers = 1) {
  std::vector<WorldSample> out(n);
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = world.gen_indexed(first + i);
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) out[i] = world.gen_indexed(first + i);
    });
  for (auto& t : pool) t.join();
  return out;
}

inline std::string encode_dataset(const Dataset& ds) {
  io::Writer w;
  w.raw(std::string(kDatasetMagic, 8));
  w.u32(kDatasetVersion);
  w.str32(kv::serialize(ds.config.to_kv()));
  w.u32(static_cast<std::uint32_t>(ds.samples.size()));
  w.u64(ds.config.seed);
  w.u64(ds.first_index);
  for (const auto& s : ds.samples) {
    w.f32_list(s.video.values);
    w.u32_list(s.speech.tokens);
    w.u32_list(s.background);
    w.u32_list(s.semantic.tokens);
    for (const auto& layer : s.acoustic.layers) w.u32_list(layer);
    w.u32_list(s.transcript);
    w.u32_list(s.event_onsets);
  }
  return w.bytes();
}

inline Dataset decode_dataset(const std::string& bytes, const std::string& what = "dataset") {
  io::Reader r(bytes, what);
  if (r.raw(8) != std::string(kDatasetMagic, 8)) throw IntegrityError(what + ": not a dataset file");
  if (const auto v = r.u32(); v != kDatasetVersion)
    throw IntegrityError(what + ": unsupported format version " + std::to_string(v));
  Dataset ds;
  const auto map = kv::parse(r.str32());
  kv::Reader kr(map);
  ds.config.read_kv(kr);
  kr.reject_unknown();
  ds.config.validate();
  const auto n = r.u32();
  if (r.u64() != ds.config.seed) throw IntegrityError(what + ": manifest seed disagrees with its config");
  ds.first_index = r.u64();
  const auto& c = ds.config;
  ds.samples.resize(n);
  for (auto& s : ds.samples) {
    s.video.dim = c.video_dim;
    s.video.values = r.f32_list();
    s.speech.tokens = r.u32_list();
    s.background = r.u32_list();
    s.semantic.tokens = r.u32_list();
    s.semantic.rate = static_cast<double>(c.t_sem) / 10.0;
    s.acoustic.layers.resize(c.vocab.acoustic_layers);
    for (auto& layer : s.acoustic.layers) layer = r.u32_list();
    s.transcript = r.u32_list();
    s.event_onsets = r.u32_list();
    if (s.video.values.size() != c.t_v * c.video_dim || s.semantic.tokens.size() != c.t_sem)
      throw IntegrityError(what + ": sample shape disagrees with the manifest config");
  }
  if (!r.done()) throw IntegrityError(what + ": trailing bytes after the last sample");
  return ds;
}

struct DatasetSummary {
  std::size_t samples = 0;
  std::size_t words = 0;
  std::size_t speech_positions = 0;
  // Chi-square statistic of speech-active x background id over positions;
  // informational only.
  double independence_chi2 = 0.0;
  std::size_t independence_dof = 0;
};

inline DatasetSummary summarize(const Dataset& ds) {
  DatasetSummary out;
  out.samples = ds.samples.size();
  const std::size_t nb = ds.config.vocab.background_vocab_size;
  std::vector<double> table(2 * nb, 0.0);
  for (const auto& s : ds.samples) {
    out.words += s.transcript.size();
    for (std::size_t i = 0; i < s.background.size(); ++i) {
      const bool active = s.speech.tokens[i] != VocabSpec::kSilence;
      out.speech_positions += active;
      table[(active ? nb : 0) + s.background[i]] += 1.0;
    }
  }
  double total = 0.0;
  for (auto v : table) total += v;
  if (total > 0) {
    for (std::size_t a = 0; a < 2; ++a) {
      double row = 0.0;
      for (std::size_t b = 0; b < nb; ++b) row += table[a * nb + b];
      for (std::size_t b = 0; b < nb; ++b) {
        const double col = table[b] + table[nb + b];
        const double expected = row * col / total;
        if (expected > 0) out.independence_chi2 += std::pow(table[a * nb + b] - expected, 2) / expected;
      }
    }
    out.independence_dof = nb - 1;
  }
  return out;
}

/// Generates samples [first_index, first_index + n) of the world and writes
/// them to `path`.
inline Dataset gen_dataset(const WorldConfig& config, std::size_t n, const std::string& path, std::size_t workers = 1,
                           std::uint64_t first_index = 0) {
  if (n < 1) throw DomainError("gen_dataset: n must be >= 1");
  SynthWorld world(config);
  Dataset ds{config, gen_samples(world, first_index, n, workers), first_index};
  io::write_file(path, encode_dataset(ds));
  return ds;
}

/// Loads a dataset; when `expected` is given its config must match the manifest.
inline Dataset load_dataset(const std::string& path, const WorldConfig* expected = nullptr) {
  Dataset ds = decode_dataset(io::read_file(path), path);
  if (expected && !(*expected == ds.config))
    throw ConfigError(path + ": dataset manifest config differs from the run config");
  return ds;
}

}  // namespace bvs
