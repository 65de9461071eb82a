#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "sirst/errors.hpp"
#include "sirst/postproc.hpp"
#include "sirst/rng.hpp"

using namespace sirst;

namespace {

BinaryMask random_mask(int h, int w, double p, Rng& rng) {
  BinaryMask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(y, x, rng.bernoulli(p));
  return m;
}

BinaryMask from_rows(const std::vector<std::string>& rows) {
  BinaryMask m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) m.set(y, x, rows[y][x] == '#');
  return m;
}

}  // namespace

TEST(Threshold, FixedIsStrict) {
  Image p(1, 3);
  p.at(0, 0) = 0.5;
  p.at(0, 1) = 0.5000001;
  p.at(0, 2) = 0.2;
  const BinaryMask m = threshold_fixed(p, 0.5);
  EXPECT_FALSE(m.get(0, 0));
  EXPECT_TRUE(m.get(0, 1));
  EXPECT_FALSE(m.get(0, 2));
}

TEST(Threshold, AdaptiveMatchesFormula) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    Image g(8, 9);
    for (double& v : g.pixels()) v = rng.uniform() * rng.uniform();
    const double mx = *std::max_element(g.pixels().begin(), g.pixels().end());
    double mu = 0.0;
    for (double v : g.pixels()) mu += v;
    mu /= static_cast<double>(g.size());
    double var = 0.0;
    for (double v : g.pixels()) var += (v - mu) * (v - mu);
    const double sd = std::sqrt(var / static_cast<double>(g.size()));
    const auto r = threshold_adaptive(g);
    EXPECT_EQ(r.threshold, std::max(0.7 * mx, 0.5 * sd + mu));
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(r.mask[i], g[i] > r.threshold);
  }
}

TEST(Threshold, AdaptiveOnFlatMapSelectsNothing) {
  const auto r = threshold_adaptive(Image(5, 5, 0.4));
  EXPECT_EQ(r.mask.popcount(), 0u);
}

TEST(Label8, DiagonalNeighboursJoin) {
  const auto set = label8(from_rows({"#..", ".#.", "..#"}));
  ASSERT_EQ(set.components.size(), 1u);
  EXPECT_EQ(set.components[0].area(), 3);
}

TEST(Label8, UShapeMergesLabels) {
  // The two arms meet only on the last row; a single pass would give two ids.
  const auto set = label8(from_rows({"#...#", "#...#", "#####"}));
  ASSERT_EQ(set.components.size(), 1u);
  EXPECT_EQ(set.components[0].area(), 9);
}

TEST(Label8, IdsFollowFirstPixelOrder) {
  const auto set = label8(from_rows({"..#..#", "......", "#....."}));
  ASSERT_EQ(set.components.size(), 3u);
  EXPECT_EQ(set.components[0].pixels[0], (Pixel{0, 2}));
  EXPECT_EQ(set.components[1].pixels[0], (Pixel{0, 5}));
  EXPECT_EQ(set.components[2].pixels[0], (Pixel{2, 0}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(set.components[i].id, static_cast<int>(i));
}

TEST(Label8, EmptyAndFullMasks) {
  EXPECT_TRUE(label8(BinaryMask(4, 4)).components.empty());
  BinaryMask full(3, 5);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) full.set(y, x);
  const auto set = label8(full);
  ASSERT_EQ(set.components.size(), 1u);
  EXPECT_DOUBLE_EQ(set.components[0].centroid_row, 1.0);
  EXPECT_DOUBLE_EQ(set.components[0].centroid_col, 2.0);
  EXPECT_EQ(set.components[0].bbox(), (std::array<int, 4>{0, 0, 2, 4}));
}

TEST(Label8, MatchesBfsFloodFill) {
  Rng rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const BinaryMask m = random_mask(12, 13, rng.uniform(0.05, 0.6), rng);
    const auto set = label8(m);
    const auto ref = oracle::bfs_components(m);
    ASSERT_EQ(set.components.size(), ref.size());
    for (std::size_t c = 0; c < ref.size(); ++c) {
      ASSERT_EQ(set.components[c].pixels.size(), ref[c].size());
      std::vector<std::pair<int, int>> got;
      for (const auto& p : set.components[c].pixels) got.emplace_back(p.row, p.col);
      auto want = ref[c];
      std::sort(want.begin(), want.end());
      EXPECT_EQ(got, want);
    }
  }
}

TEST(Label8, PartitionProperties) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const BinaryMask m = random_mask(10, 10, 0.4, rng);
    const auto set = label8(m);
    std::size_t total = 0;
    BinaryMask seen(10, 10);
    for (const auto& c : set.components) {
      total += c.pixels.size();
      for (const auto& p : c.pixels) {
        EXPECT_FALSE(seen.get(p.row, p.col));
        seen.set(p.row, p.col);
      }
    }
    EXPECT_EQ(total, m.popcount());
    EXPECT_EQ(seen, m);
  }
}

TEST(Centroids, UnweightedMeans) {
  const auto set = label8(from_rows({"##..", "#...", "...#"}));
  const auto c = centroids(set);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_NEAR(c[0].first, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(c[0].second, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(c[1], (std::pair<double, double>{2.0, 3.0}));
}

TEST(DetectionsJson, RoundTrip) {
  const auto set = label8(from_rows({"##...", ".....", "..###"}));
  const auto back = detections_from_json(detections_to_json(set));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].id, 1);
  EXPECT_EQ(back[1].area, 3);
  EXPECT_DOUBLE_EQ(back[1].centroid_col, 3.0);
  EXPECT_EQ(back[1].bbox, (std::array<int, 4>{2, 2, 2, 4}));
}

TEST(BinaryMask, ImageConversion) {
  Image img(2, 2);
  img.at(0, 1) = 1.0;
  img.at(1, 0) = 0.5;
  const BinaryMask m = BinaryMask::from_image(img);
  EXPECT_TRUE(m.get(0, 1));
  EXPECT_FALSE(m.get(1, 0));
  EXPECT_EQ(m.to_image().at(0, 1), 1.0);
}
