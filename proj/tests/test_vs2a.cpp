#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "bvs/synthworld.hpp"
#include "bvs/vs2a.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace bvs;

namespace {

const std::vector<WorldSample>& samples() {
  static const auto s = gen_samples(SynthWorld(WorldConfig{}), 0, 6);
  return s;
}

VS2ABatch batch_from(const std::vector<WorldSample>& xs, std::size_t layer, double t, std::uint64_t seed) {
  Rng rng(seed);
  VS2ABatch b;
  for (const auto& x : xs) {
    b.semantic.push_back(x.semantic.tokens);
    b.acoustic.push_back(x.acoustic);
    b.video.push_back(x.video);
    b.layer.push_back(layer);
    b.masks.push_back(sample_mask(x.semantic.tokens.size(), t, rng));
    b.drop_video.push_back(0);
  }
  return b;
}

VS2ABundle<float> default_bundle(std::uint64_t seed) {
  const VocabSpec v;
  Rng rng(seed);
  const auto c = default_vs2a_config(v);
  return VS2ABundle<float>::initialized(c, c, v, rng);
}

}  // namespace

TEST(VS2A, FirstLayerSumUsesSemanticAndLayerOneOnly) {
  const VocabSpec v;
  Rng rng(1);
  const auto m = VS2AModel<double>::initialized(bvs::testing::tiny_vs2a_config(v), v, VS2ARole::kFirstLayer, rng);
  const auto b = bvs::testing::tiny_vs2a_batch(v, 10, 2, 1, 2);
  const auto masked = apply_mask(b.acoustic[0].layers[0], b.masks[0], v.acoustic_mask_id());
  const auto sum = m.sum_condition_embeddings(b.semantic[0], {}, masked, 1);
  for (Eigen::Index i = 0; i < 10; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const nn::RowVec<double> expect =
        m.params().at("semantic.table").row(b.semantic[0][k]) + m.params().at("acoustic1.table").row(masked[k]);
    EXPECT_LT((sum.row(i) - expect).cwiseAbs().maxCoeff(), 1e-15);
  }
  EXPECT_THROW(m.sum_condition_embeddings(b.semantic[0], {}, masked, 2), ConfigError);
}

TEST(VS2A, UpperLayerSumAddsLowerLayersAndLayerIndex) {
  const VocabSpec v;
  Rng rng(3);
  const auto m = VS2AModel<double>::initialized(bvs::testing::tiny_vs2a_config(v), v, VS2ARole::kUpperLayers, rng);
  const auto b = bvs::testing::tiny_vs2a_batch(v, 10, 2, 3, 4);
  const auto& grid = b.acoustic[0];
  const TokenSeq masked(10, v.acoustic_mask_id());
  const auto sum = m.sum_condition_embeddings(b.semantic[0], grid.layers, masked, 3);
  const auto& p = m.params();
  for (Eigen::Index i = 0; i < 10; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const nn::RowVec<double> expect = p.at("semantic.table").row(b.semantic[0][k]) +
                                      p.at("acoustic1.table").row(grid.layers[0][k]) +
                                      p.at("acoustic2.table").row(grid.layers[1][k]) +
                                      p.at("acoustic3.table").row(v.acoustic_mask_id()) + p.at("layer.table").row(2);
    EXPECT_LT((sum.row(i) - expect).cwiseAbs().maxCoeff(), 1e-15);
  }
  EXPECT_THROW(m.sum_condition_embeddings(b.semantic[0], {grid.layers[0]}, masked, 3), ShapeError);
  EXPECT_THROW(m.sum_condition_embeddings(b.semantic[0], grid.layers, TokenSeq(9, 0), 3), ShapeError);
  EXPECT_THROW(m.sum_condition_embeddings(b.semantic[0], grid.layers, masked, 1), ConfigError);
}

TEST(VS2A, ZeroTablesGiveZeroSum) {
  const VocabSpec v;
  VS2AModel<double> m(bvs::testing::tiny_vs2a_config(v), v, VS2ARole::kUpperLayers);
  const auto b = bvs::testing::tiny_vs2a_batch(v, 10, 2, 4, 5);
  EXPECT_TRUE(m.sum_condition_embeddings(b.semantic[0], b.acoustic[0].layers, b.acoustic[0].layers[3], 4).isZero());
}

TEST(VS2A, SumIsPositionwise) {
  const VocabSpec v;
  Rng rng(6);
  const auto m = VS2AModel<double>::initialized(bvs::testing::tiny_vs2a_config(v), v, VS2ARole::kUpperLayers, rng);
  const auto b = bvs::testing::tiny_vs2a_batch(v, 10, 2, 2, 7);
  auto rev = [](TokenSeq s) {
    std::reverse(s.begin(), s.end());
    return s;
  };
  const auto& g = b.acoustic[0].layers;
  const auto a = m.sum_condition_embeddings(b.semantic[0], g, g[1], 2);
  const auto r = m.sum_condition_embeddings(rev(b.semantic[0]), {rev(g[0])}, rev(g[1]), 2);
  EXPECT_TRUE(a.colwise().reverse().isApprox(r, 0.0));
}

TEST(VS2A, LossExamples) {
  const auto bundle = default_bundle(8);
  auto b = batch_from(samples(), 1, 0.0, 9);
  EXPECT_NEAR(vs2a_loss(bundle, b, 1).total.loss, std::log(8.0), 0.1);
  EXPECT_NEAR(vs2a_loss(bundle, b, 3).total.loss, std::log(8.0), 0.1);
  for (auto& mk : b.masks) std::fill(mk.mask.begin(), mk.mask.end(), 0);
  const auto l = vs2a_loss(bundle, b, 2);
  EXPECT_EQ(l.total.loss, 0.0);
  EXPECT_TRUE(l.total.degenerate);
}

TEST(VS2A, LayerLossIgnoresHigherLayers) {
  const auto bundle = default_bundle(10);
  auto b = batch_from(samples(), 2, 0.4, 11);
  const auto before = vs2a_loss(bundle, b, 2).total.loss;
  for (auto& g : b.acoustic) std::reverse(g.layers[2].begin(), g.layers[2].end());
  EXPECT_EQ(vs2a_loss(bundle, b, 2).total.loss, before);
  // ...and the ground-truth tokens of layer 2 at unmasked positions do matter.
  for (auto& g : b.acoustic) std::reverse(g.layers[1].begin(), g.layers[1].end());
  EXPECT_NE(vs2a_loss(bundle, b, 2).total.loss, before);
}

TEST(VS2A, TrainStepDrawsLayersInRange) {
  auto bundle = default_bundle(12);
  nn::OptimizerState<float> opt(nn::AdamWConfig{}, bundle.rest.params());
  auto b = batch_from(samples(), 1, 0.4, 13);
  Rng rng(14);
  std::set<std::size_t> seen;
  for (int s = 0; s < 5; ++s) {
    const auto r = vs2a_train_step(bundle.rest, opt, b, rng);
    for (auto l : b.layer) {
      EXPECT_GE(l, 2u);
      EXPECT_LE(l, 4u);
      seen.insert(l);
    }
    EXPECT_EQ(r.loss.per_layer.size(), 4u);
  }
  EXPECT_EQ(seen.size(), 3u);
  nn::OptimizerState<float> opt1(nn::AdamWConfig{}, bundle.first.params());
  vs2a_train_step(bundle.first, opt1, b, rng);
  for (auto l : b.layer) EXPECT_EQ(l, 1u);
}

TEST(VS2A, OracleGenerateRecoversGrid) {
  const VocabSpec v;
  bvs::testing::OracleAcoustic oracle{v, 100};
  for (const auto& x : samples()) {
    for (const auto& steps : {std::vector<std::size_t>{20, 10, 1, 1}, std::vector<std::size_t>{1, 1, 1, 1},
                              std::vector<std::size_t>{4, 16, 4, 1}}) {
      Rng rng(15);
      VS2ATrace trace;
      const auto grid = vs2a_generate(oracle, x.semantic, x.video, steps, 2.5, rng, &trace);
      EXPECT_EQ(grid, encode_acoustic(x.semantic, v));
      ASSERT_EQ(trace.layers.size(), 4u);
      for (std::size_t k = 0; k < 4; ++k) {
        const auto counts = unmask_counts(100, steps[k]);
        ASSERT_EQ(trace.layers[k].committed.size(), steps[k]);
        for (std::size_t j = 0; j < steps[k]; ++j) EXPECT_EQ(trace.layers[k].committed[j].size(), counts[j]);
      }
    }
  }
  Rng rng(16);
  EXPECT_THROW(vs2a_generate(oracle, samples()[0].semantic, samples()[0].video, {20, 10, 1}, 2.5, rng), ConfigError);
}

TEST(VS2A, LowerLayersIgnoreUpperModel) {
  const auto& x = samples()[1];
  auto a = default_bundle(17);
  auto b = a;
  Rng noise(18);
  for (std::size_t i = 0; i < b.rest.params().size(); ++i)
    for (Eigen::Index k = 0; k < b.rest.params()[i].size(); ++k)
      b.rest.params()[i].data()[k] = static_cast<float>(normal01(noise));
  Rng r1(19), r2(19);
  const std::vector<std::size_t> steps{20, 10, 1, 1};
  const auto ga = vs2a_generate(a, x.semantic, x.video, steps, 2.5, r1);
  const auto gb = vs2a_generate(b, x.semantic, x.video, steps, 2.5, r2);
  EXPECT_EQ(ga.layers[0], gb.layers[0]);
  for (const auto& layer : ga.layers)
    for (auto t : layer) EXPECT_LT(t, 8u);
}

TEST(VS2A, UncondDropsVideoOnly) {
  const auto bundle = default_bundle(20);
  const auto& xs = samples();
  const TokenSeq cur(100, 8);
  const auto p = score_acoustic(bundle, 1, xs[0].semantic.tokens, {}, cur, xs[0].video, true);
  const auto q = score_acoustic(bundle, 1, xs[0].semantic.tokens, {}, cur, xs[1].video, true);
  EXPECT_TRUE((p.uncond.array() == q.uncond.array()).all());
  EXPECT_FALSE((p.cond.array() == q.cond.array()).all());
}
