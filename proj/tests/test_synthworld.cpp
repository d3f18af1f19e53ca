#include <gtest/gtest.h>

#include "bvs/synthworld.hpp"
#include "test_util.hpp"

using namespace bvs;

TEST(SynthWorld, SameSeedSameSample) {
  const WorldConfig c;
  EXPECT_EQ(gen_sample(c, 77), gen_sample(c, 77));
  EXPECT_FALSE(gen_sample(c, 77) == gen_sample(c, 78));
}

TEST(SynthWorld, NoWordsMeansSilence) {
  WorldConfig c;
  c.words_min = c.words_max = 0;
  const SynthWorld w(c);
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto s = w.gen_indexed(i);
    EXPECT_TRUE(s.transcript.empty());
    for (auto t : s.speech.tokens) EXPECT_EQ(t, VocabSpec::kSilence);
    for (std::size_t k = 0; k < s.semantic.tokens.size(); ++k)
      EXPECT_EQ(s.semantic.tokens[k], fuse_pair(0, s.background[k], c.vocab));
  }
}

TEST(SynthWorld, InvariantsHold) {
  const WorldConfig c;
  const SynthWorld w(c);
  const auto xs = gen_samples(w, 0, 300);
  std::size_t words = 0;
  for (const auto& s : xs) {
    EXPECT_NO_THROW(check_sample(s, w));
    EXPECT_EQ(decode_acoustic(s.acoustic, c.vocab), s.semantic);
    EXPECT_EQ(oracle_speech_extract(s.semantic, c.vocab), s.speech);
    const auto [sp, bg] = split_stream(s.semantic.tokens, c.vocab);
    EXPECT_EQ(fuse_streams(sp, bg, c.vocab), s.semantic.tokens);
    EXPECT_LE(s.transcript.size(), 3u);
    EXPECT_LE(s.event_onsets.size(), 3u);
    for (auto wid : s.transcript) EXPECT_LT(wid, w.lexicon().size());
    words += s.transcript.size();
  }
  EXPECT_GT(words, 300u);
}

TEST(SynthWorld, WordGapsAndLengths) {
  const WorldConfig c;
  const SynthWorld w(c);
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto s = w.gen_indexed(i);
    std::size_t run = 0, gap = 0;
    bool seen_word = false;
    for (std::size_t k = 0; k <= s.speech.tokens.size(); ++k) {
      const bool sil = k == s.speech.tokens.size() || s.speech.tokens[k] == 0;
      if (!sil) {
        if (run == 0 && seen_word) {
          EXPECT_GE(gap, c.min_word_gap);
        }
        ++run;
        gap = 0;
      } else {
        if (run > 0) {
          EXPECT_GE(run, c.word_len_min);
          EXPECT_LE(run, c.word_len_max);
          seen_word = true;
        }
        run = 0;
        ++gap;
      }
    }
  }
}

TEST(SynthWorld, TranscribeExamples) {
  const WorldConfig c;
  const SynthWorld w(c);
  const auto& lex = w.lexicon();
  EXPECT_EQ(lex.size(), 50u);
  EXPECT_TRUE(oracle_transcribe(SpeechTokenSequence{TokenSeq(100, 0)}, lex).empty());
  TokenSeq t(100, 0);
  const auto& ph = lex.phonemes(7);
  std::copy(ph.begin(), ph.end(), t.begin() + 10);
  EXPECT_EQ(oracle_transcribe(SpeechTokenSequence{t}, lex), (std::vector<WordId>{7}));
  // A run that is not a lexicon word becomes UNK.
  TokenSeq odd(100, 0);
  TokenSeq run = ph;
  run.push_back(ph[0]);
  while (lex.lookup(run) != lex.unk_id()) run.push_back(1);
  std::copy(run.begin(), run.end(), odd.begin() + 3);
  EXPECT_EQ(oracle_transcribe(SpeechTokenSequence{odd}, lex), (std::vector<WordId>{lex.unk_id()}));
  EXPECT_THROW(lex.phonemes(50), InputError);
}

TEST(SynthWorld, TranscriptToSpeechRoundTrip) {
  const WorldConfig c;
  const SynthWorld w(c);
  const std::vector<WordId> words{3, 41, 0};
  const auto sp = transcript_to_speech(words, w.lexicon(), 100);
  EXPECT_EQ(oracle_transcribe(sp, w.lexicon()), words);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(sp.tokens[k], 0u);
  EXPECT_THROW(transcript_to_speech({99}, w.lexicon(), 100), InputError);
  EXPECT_THROW(transcript_to_speech(std::vector<WordId>(30, 1), w.lexicon(), 100), InputError);
}

TEST(SynthWorld, EventOnsets) {
  EXPECT_TRUE(extract_event_onsets(TokenSeq(100, 4)).empty());
  TokenSeq bg(100, 3);
  std::fill(bg.begin() + 50, bg.end(), 9);
  EXPECT_EQ(extract_event_onsets(bg), (std::vector<std::uint32_t>{50}));
  const WorldConfig c;
  const SynthWorld w(c);
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto s = w.gen_indexed(i);
    std::vector<std::uint32_t> scaled;
    for (auto f : s.event_onsets) scaled.push_back(static_cast<std::uint32_t>(f * c.ratio()));
    EXPECT_EQ(extract_event_onsets(s.background), scaled);
  }
}

TEST(SynthWorld, VideoClassifiesBackToEvents) {
  const WorldConfig c;
  const SynthWorld w(c);
  std::size_t hit = 0, total = 0;
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto s = w.gen_indexed(i);
    const auto cls = w.classify_frames(s.video);
    for (std::size_t f = 0; f < cls.size(); ++f) {
      hit += cls[f] == s.background[f * c.ratio()];
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(hit) / static_cast<double>(total), 0.99);
}

TEST(SynthWorld, BackgroundIndependentOfSpeech) {
  const WorldConfig c;
  Dataset ds{c, gen_samples(SynthWorld(c), 0, 500), 0};
  const auto sum = summarize(ds);
  EXPECT_EQ(sum.samples, 500u);
  EXPECT_EQ(sum.independence_dof, 15u);
  // Non-binding sanity bound: far below anything a dependent stream gives.
  EXPECT_LT(sum.independence_chi2, 100.0);
}

TEST(SynthWorld, DatasetRoundTripAndSplittableSeeds) {
  const WorldConfig c;
  const auto dir = bvs::testing::temp_dir("synthworld");
  const auto a = (dir / "a.bvsd").string(), b = (dir / "b.bvsd").string();
  const auto ds = gen_dataset(c, 100, a, 1);
  gen_dataset(c, 100, b, 3);
  EXPECT_EQ(io::read_file(a), io::read_file(b));
  const auto back = load_dataset(a, &c);
  EXPECT_EQ(back.samples, ds.samples);
  EXPECT_EQ(back.config, c);
  EXPECT_EQ(SynthWorld(c).gen_indexed(42), ds.samples[42]);
  // An offset range reproduces the same samples.
  const auto tail = gen_dataset(c, 10, (dir / "c.bvsd").string(), 1, 90);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(tail.samples[i], ds.samples[90 + i]);
  EXPECT_EQ(load_dataset((dir / "c.bvsd").string()).first_index, 90u);

  WorldConfig other = c;
  other.seed = 99;
  EXPECT_THROW(load_dataset(a, &other), ConfigError);
  EXPECT_THROW(gen_dataset(c, 0, (dir / "d.bvsd").string()), DomainError);
  auto bytes = io::read_file(a);
  io::write_file((dir / "t.bvsd").string(), bytes.substr(0, bytes.size() - 7));
  EXPECT_THROW(load_dataset((dir / "t.bvsd").string()), IntegrityError);
}

TEST(SynthWorld, ConfigValidation) {
  WorldConfig c;
  c.t_v = 7;
  EXPECT_THROW(SynthWorld{c}, ConfigError);
  c = WorldConfig{};
  c.words_min = 4;
  EXPECT_THROW(SynthWorld{c}, ConfigError);
  c = WorldConfig{};
  c.words_max = 40;
  EXPECT_THROW(SynthWorld{c}, ConfigError);
}
