// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"

#include <mgmu/features.hpp>

#include <gtest/gtest.h>

using namespace mgmu;

namespace {

ChannelSeries series(std::vector<std::vector<double>> rows, double rate = 1.0) {
  const std::size_t c = rows.size(), t = rows.front().size();
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return {Modality::audio, {}, rate, Tensor(Shape{c, t}, std::move(flat)), 0};
}

}  // namespace

TEST(Segmentation, Counts) {
  const auto s120 = series({std::vector<double>(120, 1.0)});
  const auto segs = segment_series(s120, 20, 5);
  ASSERT_EQ(segs.size(), 7u);
  // Enumerate window placements independently.
  std::size_t placements = 0;
  for (std::size_t start = 0; start + 20 <= 120; start += 15) ++placements;
  EXPECT_EQ(placements, 7u);
  for (const auto& s : segs) EXPECT_EQ(s.frames(), 20u);
  EXPECT_EQ(segment_series(series({std::vector<double>(40, 1.0)}), 40, 5).size(), 1u);
}

TEST(Segmentation, ShortSeriesIsPadded) {
  std::vector<double> x(10);
  std::iota(x.begin(), x.end(), 1.0);
  const auto segs = segment_series(series({x}), 20, 5);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].frames(), 20u);
  EXPECT_EQ(segs[0].real_frames(), 10u);
  for (std::size_t t = 0; t < 20; ++t) EXPECT_EQ(segs[0].values.at(0, t), t < 10 ? x[t] : 0.0);
}

TEST(Segmentation, CarriesOffsets) {
  std::vector<double> x(100);
  std::iota(x.begin(), x.end(), 0.0);
  const auto segs = segment_series(series({x}), 40, 5);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[1].values.at(0, 0), 35.0);
  EXPECT_THROW(segment_series(series({x}), 10, 10), std::invalid_argument);
}

TEST(Fvtc, HandCases) {
  const auto f = compute_fvtc(series({{1, 2, 3, 4}, {4, 3, 2, 1}}), 1);
  EXPECT_NEAR(f.at(0, 1, 0), -1.0, 1e-15);
  EXPECT_NEAR(f.at(0, 0, 0), 1.0, 1e-15);
  EXPECT_NEAR(f.at(0, 0, 1), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(f.values.shape(), (Shape{4, 2}));
}

TEST(Fvtc, ConstantChannelIsDegenerate) {
  const auto f = compute_fvtc(series({{1, 2, 3, 5, 4}, {2, 2, 2, 2, 2}}), 2);
  EXPECT_EQ(f.degenerate, (std::vector<bool>{false, true}));
  for (std::size_t d = 0; d <= 2; ++d) {
    EXPECT_EQ(f.at(0, 1, d), 0.0);
    EXPECT_EQ(f.at(1, 0, d), 0.0);
    EXPECT_EQ(f.at(1, 1, d), 0.0);
  }
  EXPECT_TRUE(f.any_degenerate());
}

TEST(Fvtc, MatchesTripleLoop) {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 1 + rng() % 4, d = rng() % 21, t = d + 2 + rng() % (200 - d - 1);
    std::normal_distribution<double> n(0.0, 1.0 + trial % 5);
    std::vector<std::vector<double>> x(c, std::vector<double>(t));
    for (auto& row : x)
      for (auto& v : row) v = n(rng) + 3.0;
    const auto ref = oracle::fvtc(x, d);
    const auto got = compute_fvtc(series(x), d);
    ASSERT_EQ(got.values.shape(), (Shape{c * c, d + 1}));
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j)
        for (std::size_t k = 0; k <= d; ++k) worst = std::max(worst, std::abs(got.at(i, j, k) - ref[i][j][k]));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Fvtc, SelfCorrelationAtZeroLag) {
  std::mt19937_64 rng(8);
  std::vector<std::vector<double>> x(3, std::vector<double>(50));
  for (auto& row : x)
    for (auto& v : row) v = std::uniform_real_distribution<double>(-4, 4)(rng);
  const auto f = compute_fvtc(series(x), 10);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(f.at(i, i, 0), 1.0, 1e-14);
}

TEST(Fvtc, Preconditions) {
  EXPECT_THROW(compute_fvtc(series({{1, 2, 3}}), 3), std::invalid_argument);
  auto bad = series({{1, 2, 3, 4}});
  bad.values.mutable_values()[1] = std::nan("");
  EXPECT_ANY_THROW(compute_fvtc(bad, 1));
}

TEST(Fvtc, PerLagMeansOption) {
  const auto x = series({{1, 2, 3, 4, 6, 5}, {2, 1, 4, 3, 6, 5}});
  const auto f = compute_fvtc(x, 2, {.per_lag_means = true});
  // At lag 0 both statistics coincide with the whole-segment ones.
  const auto g = compute_fvtc(x, 2);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(f.at(i, j, 0), g.at(i, j, 0), 1e-14);
  // Pearson correlation of overlapping windows stays within [-1, 1].
  for (double v : f.values.values()) EXPECT_LE(std::abs(v), 1.0 + 1e-12);
}

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize("The cat sat.", {"the"}), (Sentences{{"cat", "sat"}}));
  EXPECT_EQ(tokenize("Hello!!!", {}), (Sentences{{"hello"}}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("One two. Three? ...", {}), (Sentences{{"one", "two"}, {"three"}}));
}

TEST(EmbedText, Examples) {
  EmbeddingTable table(3);
  const std::vector<double> v = {0.1, -0.2, 0.3};
  table.add("cat", v);

  const TextGrid empty = embed_text({}, table, 2, 3);
  EXPECT_EQ(empty.values.shape(), (Shape{2, 3, 3}));
  EXPECT_EQ(empty.real_sentences(), 0u);
  for (double x : empty.values.values()) EXPECT_EQ(x, 0.0);

  const TextGrid one = embed_text({{"cat"}}, table, 2, 3);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(one.values.values()[k], v[k]);
  for (std::size_t i = 3; i < one.values.numel(); ++i) EXPECT_EQ(one.values.values()[i], 0.0);
  EXPECT_TRUE(one.is_real(0, 0));
  EXPECT_FALSE(one.is_real(0, 1));

  Sentences many(5, {"cat", "dog", "cat", "cat"});
  const TextGrid cut = embed_text(many, table, 2, 3);
  EXPECT_EQ(cut.real_sentences(), 2u);
  EXPECT_EQ(cut.truncated_sentences, 3u);
  EXPECT_EQ(cut.truncated_words, 2u);
  EXPECT_EQ(cut.oov_tokens, 2u);
}

TEST(EmbeddingTable, TextRoundTrip) {
  EmbeddingTable table(2);
  table.add("alpha", std::vector<double>{0.5, -1.25});
  table.add("beta", std::vector<double>{1e-3, 7.0});
  const std::string path = ::testing::TempDir() + "emb.txt";
  table.save_text(path);
  const auto back = EmbeddingTable::load_text(path);
  ASSERT_EQ(back.words(), table.words());
  for (const auto& w : table.words()) {
    const auto a = *table.find(w), b = *back.find(w);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(a[k], b[k]);
  }
  EXPECT_FALSE(back.find("gamma").has_value());
}
