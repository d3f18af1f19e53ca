#include <gtest/gtest.h>

#include <algorithm>

#include "bvs/evalkit.hpp"
#include "bvs/random.hpp"

using namespace bvs;
using namespace bvs::eval;

TEST(Evalkit, WerExamples) {
  EXPECT_EQ(wer({1, 2, 3, 4}, {1, 2, 3, 4}), 0.0);
  EXPECT_DOUBLE_EQ(wer({1, 2, 3, 4}, {1, 5, 3, 4}), 0.25);
  EXPECT_DOUBLE_EQ(wer({1, 2}, {1}), 0.5);
  EXPECT_DOUBLE_EQ(wer({1}, {1, 2}), 1.0);
  EXPECT_EQ(wer({}, {}), 0.0);
  const auto r = wer_detail({}, {4, 5});
  EXPECT_TRUE(r.empty_reference);
  EXPECT_DOUBLE_EQ(r.value, 2.0);
}

TEST(Evalkit, LevenshteinSymmetricInsertDelete) {
  Rng rng(1);
  for (int k = 0; k < 50; ++k) {
    std::vector<std::uint32_t> a(static_cast<std::size_t>(uniform_int(rng, 0, 8))),
        b(static_cast<std::size_t>(uniform_int(rng, 0, 8)));
    for (auto& x : a) x = static_cast<std::uint32_t>(uniform_int(rng, 0, 3));
    for (auto& x : b) x = static_cast<std::uint32_t>(uniform_int(rng, 0, 3));
    EXPECT_EQ(levenshtein(a, b), levenshtein(b, a));
    EXPECT_EQ(levenshtein(a, a), 0u);
  }
}

TEST(Evalkit, DeltaWerExamples) {
  EXPECT_NEAR(delta_wer({{0.3, 0.2}, {0.5, 0.5}}), 0.05, 1e-12);
  EXPECT_EQ(delta_wer({{0.4, 0.4}, {0.1, 0.1}}), 0.0);
  EXPECT_EQ(delta_wer({{0.0, 1.0}}), 1.0);
  EXPECT_THROW(delta_wer({}), DomainError);
}

TEST(Evalkit, FrechetExamples) {
  const Matd i2 = Matd::Identity(2, 2);
  Vec mu(2);
  mu << 0.5, -1.0;
  EXPECT_NEAR(frechet_distance(mu, i2, mu, i2), 0.0, 1e-9);
  Vec z = Vec::Zero(2), m3(2);
  m3 << 3, 0;
  EXPECT_NEAR(frechet_distance(z, i2, m3, i2), 9.0, 1e-9);
  EXPECT_NEAR(frechet_distance(z, 4 * i2, z, i2), 2.0, 1e-9);
}

TEST(Evalkit, FrechetSymmetricAndErrors) {
  Rng rng(2);
  Matd a(4, 4), b(4, 4);
  for (Eigen::Index k = 0; k < 16; ++k) {
    a.data()[k] = normal01(rng);
    b.data()[k] = normal01(rng);
  }
  const Matd ca = a * a.transpose(), cb = b * b.transpose();
  Vec m1 = Vec::Random(4), m2 = Vec::Random(4);
  EXPECT_NEAR(frechet_distance(m1, ca, m2, cb), frechet_distance(m2, cb, m1, ca), 1e-9);
  EXPECT_GE(frechet_distance(m1, ca, m2, cb), 0.0);
  Matd asym = ca;
  asym(0, 1) += 1.0;
  EXPECT_THROW(frechet_distance(m1, asym, m2, cb), NumericError);
  Matd nan = ca;
  nan(2, 2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(frechet_distance(m1, nan, m2, cb), NumericError);
  EXPECT_THROW(frechet_distance(m1, ca, Vec::Zero(3), Matd::Identity(3, 3)), ShapeError);
}

namespace {

std::vector<TokenSeq> random_set(std::size_t n, std::size_t vocab, Rng& rng) {
  std::vector<TokenSeq> out(n, TokenSeq(100));
  for (auto& s : out)
    for (auto& t : s) t = static_cast<TokenId>(uniform_int(rng, 0, static_cast<std::int64_t>(vocab) - 1));
  return out;
}

}  // namespace

TEST(Evalkit, FadExamples) {
  const auto e = SetEmbedder::histogram_projection(528);
  EXPECT_EQ(e.id, "hist-proj-16-seed17");
  Rng rng(3);
  auto a = random_set(40, 528, rng);
  EXPECT_NEAR(fad(a, a, e), 0.0, 1e-6);
  auto shuffled = a;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto b = random_set(40, 528, rng);
  EXPECT_NEAR(fad(a, b, e), fad(shuffled, b, e), 1e-9);
  // Constant-token sets: disjoint ids, slight per-sequence variation.
  std::vector<TokenSeq> c1, c2;
  for (int i = 0; i < 20; ++i) {
    TokenSeq s1(100, 5), s2(100, 9);
    s1[static_cast<std::size_t>(i)] = 6;
    s2[static_cast<std::size_t>(i)] = 10;
    c1.push_back(s1);
    c2.push_back(s2);
  }
  EXPECT_GT(fad(c1, c2, e), 0.0);
}

TEST(Evalkit, FadSizeCheckAndShrinkage) {
  const auto e = SetEmbedder::histogram_projection(528);
  Rng rng(4);
  const auto small = random_set(10, 528, rng);
  EXPECT_THROW(fad(small, small, e), DomainError);
  EXPECT_NEAR(fad(small, small, e, 1e-6), 0.0, 1e-6);
  EXPECT_THROW(e.embed(TokenSeq{528}), RangeError);
}

TEST(Evalkit, EmbeddersAreDeterministic) {
  const auto a = SetEmbedder::histogram_projection(528), b = SetEmbedder::histogram_projection(528);
  EXPECT_TRUE(a.projection == b.projection);
  EXPECT_FALSE(a.projection == SetEmbedder::histogram_projection(528, 16, 18).projection);
  EXPECT_TRUE(FrameEmbedder::lookup(528).table == FrameEmbedder::lookup(528).table);
}

TEST(Evalkit, LpapsExamples) {
  const auto e = FrameEmbedder::lookup(528);
  TokenSeq x(100, 3);
  EXPECT_EQ(lpaps_proxy({{x, x}, {x, x}}, e), 0.0);
  TokenSeq y = x;
  y[40] = 17;
  const double d = (e.table.row(3) - e.table.row(17)).norm();
  EXPECT_NEAR(lpaps_proxy({{x, y}}, e), d / 100.0, 1e-12);
  EXPECT_EQ(lpaps_proxy({{x, y}}, e), lpaps_proxy({{y, x}}, e));
  EXPECT_THROW(lpaps_proxy({{x, TokenSeq(99, 3)}}, e), ShapeError);
}

TEST(Evalkit, DesyncExamples) {
  EXPECT_EQ(desync_analog({10, 50}, {10, 50}), 0.0);
  EXPECT_DOUBLE_EQ(desync_analog({12, 50}, {10, 50}), 1.0);
  EXPECT_DOUBLE_EQ(desync_analog({}, {50}, 25), 25.0);
  EXPECT_EQ(desync_analog({}, {}), 0.0);
  EXPECT_DOUBLE_EQ(desync_analog({10, 90}, {60}, 25), 37.5);
  EXPECT_THROW(desync_analog({50, 10}, {}), DomainError);
}

TEST(Evalkit, ReportRoundTrip) {
  const std::vector<ReportRow> rows{{"wer", 0.25, 100, "", "abc123"}, {"fad", 1.5e-7, 100, "hist-proj-16-seed17", "abc123"}};
  const auto text = format_report(rows);
  EXPECT_EQ(text.substr(0, text.find('\n')), "metric\tvalue\tcount\tembedder\tconfig_hash");
  const auto back = parse_report(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].metric, "wer");
  EXPECT_EQ(back[0].value, 0.25);
  EXPECT_EQ(back[1].embedder, "hist-proj-16-seed17");
  EXPECT_EQ(back[1].count, 100u);
  EXPECT_THROW(parse_report("h\nonly\ttwo\n"), InputError);
}
