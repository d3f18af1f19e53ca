#include <gtest/gtest.h>

#include "bvs/tokenspace.hpp"

using namespace bvs;

TEST(Tokenspace, FusePairExamples) {
  VocabSpec v;
  EXPECT_EQ(fuse_pair(0, 0, v), 0u);
  EXPECT_EQ(fuse_pair(2, 5, v), 37u);
  EXPECT_EQ(fuse_pair(32, 15, v), 527u);
  EXPECT_THROW(fuse_pair(33, 0, v), RangeError);
  EXPECT_THROW(fuse_pair(0, 16, v), RangeError);
}

TEST(Tokenspace, SplitSemanticExamples) {
  VocabSpec v;
  EXPECT_EQ(split_semantic(0, v), std::make_pair(TokenId{0}, TokenId{0}));
  EXPECT_EQ(split_semantic(37, v), std::make_pair(TokenId{2}, TokenId{5}));
  EXPECT_EQ(split_semantic(527, v), std::make_pair(TokenId{32}, TokenId{15}));
  EXPECT_THROW(split_semantic(528, v), RangeError);
}

TEST(Tokenspace, FuseSplitBijectionOverAllIds) {
  VocabSpec v;
  for (TokenId s = 0; s < v.speech_vocab_size; ++s)
    for (TokenId b = 0; b < v.background_vocab_size; ++b) {
      const auto id = fuse_pair(s, b, v);
      EXPECT_EQ(split_semantic(id, v), std::make_pair(s, b));
    }
  for (TokenId id = 0; id < v.semantic_vocab_size(); ++id) {
    const auto [s, b] = split_semantic(id, v);
    EXPECT_EQ(fuse_pair(s, b, v), id);
  }
}

TEST(Tokenspace, StreamsRejectLengthMismatch) {
  VocabSpec v;
  EXPECT_THROW(fuse_streams({1, 2}, {0}, v), ShapeError);
  const auto fused = fuse_streams({0, 3, 32}, {1, 5, 15}, v);
  EXPECT_EQ(fused, (TokenSeq{1, 53, 527}));
  const auto [sp, bg] = split_stream(fused, v);
  EXPECT_EQ(sp, (TokenSeq{0, 3, 32}));
  EXPECT_EQ(bg, (TokenSeq{1, 5, 15}));
}

TEST(Tokenspace, EncodeAcousticExamples) {
  VocabSpec v;
  const AcousticCodec codec(v);
  EXPECT_EQ(codec.encode_id(0), (std::vector<TokenId>{0, 0, 0, 0}));
  EXPECT_EQ(codec.encode_id(527), (std::vector<TokenId>{1, 0, 1, 7}));
  EXPECT_EQ(codec.encode_id(64), (std::vector<TokenId>{0, 1, 0, 0}));
  const auto grid = encode_acoustic(SemanticTokenSequence{{0, 527}}, v);
  ASSERT_EQ(grid.layers.size(), 4u);
  EXPECT_EQ(grid.layers[0], (TokenSeq{0, 1}));
  EXPECT_EQ(grid.layers[3], (TokenSeq{0, 7}));
}

TEST(Tokenspace, AcousticRoundTripAllIds) {
  for (std::uint64_t scramble : {0ull, 99ull}) {
    VocabSpec v;
    v.acoustic_scramble_seed = scramble;
    TokenSeq all(v.semantic_vocab_size());
    for (TokenId i = 0; i < all.size(); ++i) all[i] = i;
    const auto grid = encode_acoustic(SemanticTokenSequence{all}, v);
    EXPECT_EQ(decode_acoustic(grid, v).tokens, all);
  }
}

TEST(Tokenspace, DecodeRejectsNonImageCode) {
  VocabSpec v;
  AcousticTokenGrid grid{{{1}, {0}, {2}, {0}}};  // code 528
  try {
    decode_acoustic(grid, v);
    FAIL() << "expected RangeError";
  } catch (const RangeError& e) {
    EXPECT_NE(std::string(e.what()).find("non-image"), std::string::npos);
  }
  EXPECT_EQ(decode_acoustic(AcousticTokenGrid{{{0}, {0}, {0}, {0}}}, v).tokens, TokenSeq{0});
  EXPECT_EQ(decode_acoustic(AcousticTokenGrid{{{1}, {0}, {1}, {7}}}, v).tokens, TokenSeq{527});
  EXPECT_THROW(decode_acoustic(AcousticTokenGrid{{{7}, {7}, {7}, {7}}}, v), RangeError);
  AcousticTokenGrid digit{{{8}, {0}, {0}, {0}}};
  EXPECT_THROW(decode_acoustic(digit, v), RangeError);
  AcousticTokenGrid short_grid{{{0}, {0}, {0}}};
  EXPECT_THROW(decode_acoustic(short_grid, v), ShapeError);
}

TEST(Tokenspace, VocabValidation) {
  VocabSpec v;
  EXPECT_NO_THROW(v.validate());
  EXPECT_EQ(v.semantic_vocab_size(), 528u);
  EXPECT_EQ(v.semantic_mask_id(), 528u);
  EXPECT_EQ(v.acoustic_mask_id(), 8u);
  v.acoustic_layers = 3;  // 512 < 528
  EXPECT_THROW(v.validate(), ConfigError);
}
