#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "sirst/errors.hpp"
#include "sirst/synth.hpp"

using namespace sirst;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sirst_test_synth_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// Checkerboard of mean +- dev: mean and population stddev are exact.
Image checker(int h, int w, double mean, double dev) {
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(y, x) = (y + x) % 2 ? mean + dev : mean - dev;
  return img;
}

struct Moments {
  double mean;
  double sd;
};

Moments moments_where(const Image& img, const BinaryMask& m) {
  double s = 0.0;
  int n = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (m.get(y, x)) {
        s += img.at(y, x);
        ++n;
      }
  const double mu = s / n;
  double v = 0.0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (m.get(y, x)) v += (img.at(y, x) - mu) * (img.at(y, x) - mu);
  return {mu, std::sqrt(v / n)};
}

SynthConfig small_toy(std::uint64_t seed) {
  SynthConfig c = SynthConfig::toy();
  c.seed = seed;
  return c;
}

}  // namespace

TEST(PointTarget, SinglePixel) {
  const auto t = make_point_target(1, 0.7);
  ASSERT_EQ(t.patch.height(), 1);
  EXPECT_DOUBLE_EQ(t.patch.at(0, 0), 1.0);
  EXPECT_TRUE(t.support.get(0, 0));
  EXPECT_EQ(t.kind, TargetKind::PointGaussian);
}

TEST(PointTarget, MatchesDirectFormula) {
  const auto t = make_point_target(5, 1.0);
  EXPECT_DOUBLE_EQ(t.patch.at(2, 2), 1.0);
  EXPECT_NEAR(t.patch.at(0, 0), std::exp(-4.0), 1e-15);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      const double want = std::exp(-((x - 2.0) * (x - 2.0) + (y - 2.0) * (y - 2.0)) / 2.0);
      EXPECT_NEAR(t.patch.at(y, x), want, 1e-15);
      EXPECT_EQ(t.support.get(y, x), want > 0.05);
    }
}

TEST(PointTarget, WideSigmaIsFlat) {
  const auto t = make_point_target(5, 1e6);
  for (double v : t.patch.pixels()) EXPECT_NEAR(v, 1.0, 1e-10);
  EXPECT_EQ(t.support.popcount(), 25u);
}

TEST(PointTarget, EvenSizeRejected) {
  EXPECT_THROW(make_point_target(4, 1.0), ConfigError);
  EXPECT_THROW(make_point_target(0, 1.0), ConfigError);
}

TEST(Templates, SupportsAreNonEmpty) {
  Rng rng(3);
  for (const char* shape : {"point", "spot", "plane", "ship", "uav"})
    for (int size : {3, 7, 11}) {
      const auto t = make_target(shape, size, rng);
      EXPECT_GT(t.support.popcount(), 0u) << shape << " " << size;
      for (double v : t.patch.pixels()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  EXPECT_THROW(make_target("zeppelin", 5, rng), ConfigError);
}

TEST(ScrOf, HandBuiltCase) {
  // centre 10, ring alternating 2 / 6: mean 4, stddev 2
  Image img(3, 3);
  BinaryMask t(3, 3), bg(3, 3);
  int k = 0;
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      if (y == 1 && x == 1) {
        img.at(y, x) = 10.0;
        t.set(y, x);
      } else {
        img.at(y, x) = (k++ % 2) ? 6.0 : 2.0;
        bg.set(y, x);
      }
    }
  EXPECT_DOUBLE_EQ(scr_of(img, t, bg), 3.0);
  img.at(1, 1) = 4.0;
  EXPECT_DOUBLE_EQ(scr_of(img, t, bg), 0.0);
}

TEST(ScrOf, RejectsEmptyOrOverlappingRegions) {
  const Image img(4, 4, 0.5);
  BinaryMask t(4, 4), bg(4, 4);
  bg.set(0, 0);
  EXPECT_THROW(scr_of(img, t, bg), InvalidInputError);
  t.set(1, 1);
  EXPECT_THROW(scr_of(img, t, BinaryMask(4, 4)), InvalidInputError);
  bg.set(1, 1);
  EXPECT_THROW(scr_of(img, t, bg), InvalidInputError);
}

TEST(AdjustIntensity, LandsOnRequestedScr) {
  const Image bg_img = checker(21, 21, 100.0 / 255.0, 20.0 / 255.0);
  const std::array<int, 4> box{8, 8, 12, 12};
  const BinaryMask ring = ring_region(21, 21, box, 4);
  const auto st = background_stats(bg_img, ring);
  EXPECT_NEAR(st.mean, 100.0 / 255.0, 1e-12);
  EXPECT_NEAR(st.stddev, 20.0 / 255.0, 1e-12);

  // flat template so nothing clips at 1
  const auto tmpl = make_point_target(5, 1e3);
  const Image v = adjust_intensity(tmpl, st, 5.0);
  Image comp = bg_img;
  BinaryMask support(21, 21);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x)
      if (tmpl.support.get(y, x)) {
        comp.at(8 + y, 8 + x) = v.at(y, x);
        support.set(8 + y, 8 + x);
      }
  EXPECT_NEAR(moments_where(comp, support).mean, 200.0 / 255.0, 1e-12);
  EXPECT_NEAR(scr_of(comp, support, ring), 5.0, 1e-9);
}

TEST(AdjustIntensity, ZeroScrGivesBackgroundMean) {
  BackgroundStats st{0.3, 0.05, false};
  const auto tmpl = make_point_target(3, 1.0);
  const Image v = adjust_intensity(tmpl, st, 0.0);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x)
      if (tmpl.support.get(y, x)) EXPECT_DOUBLE_EQ(v.at(y, x), 0.3);
}

TEST(BackgroundStats, FlatRegionUsesFloor) {
  const Image flat(8, 8, 0.4);
  BinaryMask all(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) all.set(y, x);
  const auto st = background_stats(flat, all);
  EXPECT_TRUE(st.floored);
  EXPECT_DOUBLE_EQ(st.stddev, 1.0 / 255.0);
  EXPECT_THROW(background_stats(flat, BinaryMask(8, 8)), InvalidInputError);
}

TEST(RingRegion, ExcludesBoxAndClips) {
  const BinaryMask r = ring_region(10, 10, {0, 0, 1, 1}, 2);
  EXPECT_FALSE(r.get(0, 0));
  EXPECT_FALSE(r.get(1, 1));
  EXPECT_TRUE(r.get(3, 3));
  EXPECT_FALSE(r.get(4, 4));
  EXPECT_EQ(r.popcount(), 16u - 4u);
}

TEST(Blur, ConstantImageUnchanged) {
  const Image flat(12, 12, 0.37);
  const Image b = blur(flat, 0.8);
  for (double v : b.pixels()) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(Blur, InteriorMassPreserved) {
  Image img(16, 16);
  img.at(7, 8) = 1.0;
  img.at(8, 8) = 0.5;
  double before = 0.0, after = 0.0;
  for (double v : img.pixels()) before += v;
  for (double v : blur(img, 1.0).pixels()) after += v;
  EXPECT_NEAR(before, after, 1e-9);
}

TEST(Blur, WiderSigmaLowersPeak) {
  Image img(9, 9);
  img.at(4, 4) = 1.0;
  EXPECT_GT(blur(img, 0.2).at(4, 4), blur(img, 1.0).at(4, 4));
}

TEST(SynthConfig, ValidationCatchesBadDistributions) {
  SynthConfig c = SynthConfig::defaults();
  EXPECT_NO_THROW(c.validate());
  c.count_probs = {{1, 0.5}, {2, 0.4}};
  EXPECT_THROW(c.validate(), ConfigError);
  c = SynthConfig::defaults();
  c.scr_values = {3.0, 0.0};
  EXPECT_THROW(c.validate(), ConfigError);
  c = SynthConfig::defaults();
  c.size_table["sky"][0].prob += 1e-6;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SelectTargets, DegenerateTableAlwaysSameKind) {
  SynthConfig c = SynthConfig::defaults();
  c.size_table = {{"sky", {{"spot", 5, 5, 1.0}}}};
  Rng rng(1);
  for (int i = 0; i < 200; ++i)
    for (const auto& t : select_targets("sky", c, rng, 128, 128)) {
      EXPECT_EQ(t.target.shape, "spot");
      EXPECT_EQ(t.target.kind, TargetKind::Spot);
    }
}

TEST(SelectTargets, KindFrequenciesFollowTable) {
  SynthConfig c = SynthConfig::defaults();
  c.count_probs = {{1, 1.0}};
  Rng rng(11);
  std::map<std::string, int> seen;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++seen[select_targets("sky", c, rng, 256, 256).at(0).target.shape];
  for (const auto& row : c.size_table.at("sky"))
    EXPECT_NEAR(static_cast<double>(seen[row.shape]) / draws, row.prob, 0.02) << row.shape;
}

TEST(SelectTargets, ZeroProbabilityKindNeverDrawn) {
  const SynthConfig c = SynthConfig::defaults();
  Rng rng(5);
  for (int i = 0; i < 2000; ++i)
    for (const auto& t : select_targets("sky", c, rng, 256, 256)) EXPECT_NE(t.target.shape, "ship");
}

TEST(SelectTargets, PlacementsInsideAndApart) {
  const SynthConfig c = SynthConfig::defaults();
  Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    const auto ts = select_targets("sea", c, rng, 256, 256);
    for (std::size_t a = 0; a < ts.size(); ++a) {
      const auto& ta = ts[a];
      ASSERT_GE(ta.at.row, 0);
      ASSERT_GE(ta.at.col, 0);
      ASSERT_LE(ta.at.row + ta.target.patch.height(), 256);
      ASSERT_LE(ta.at.col + ta.target.patch.width(), 256);
      for (std::size_t b = a + 1; b < ts.size(); ++b) {
        const auto& tb = ts[b];
        const bool apart = ta.at.row + ta.target.patch.height() <= tb.at.row ||
                           tb.at.row + tb.target.patch.height() <= ta.at.row ||
                           ta.at.col + ta.target.patch.width() <= tb.at.col ||
                           tb.at.col + tb.target.patch.width() <= ta.at.col;
        EXPECT_TRUE(apart);
      }
    }
  }
}

TEST(SelectTargets, Errors) {
  SynthConfig c = SynthConfig::defaults();
  Rng rng(2);
  EXPECT_THROW(select_targets("volcano", c, rng, 64, 64), ConfigError);
  c.size_table = {{"sky", {{"plane", 19, 19, 1.0}}}};
  c.count_probs = {{3, 1.0}};
  c.max_retries = 5;
  EXPECT_THROW(select_targets("sky", c, rng, 24, 24), GenerationError);
}

TEST(GenerateSample, PureFunctionOfSeedAndIndex) {
  const SynthConfig c = small_toy(4);
  const auto bgs = procedural_backgrounds(1, 128, 4);
  const auto a = generate_sample(17, bgs, c);
  const auto b = generate_sample(17, bgs, c);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(sample_meta_to_json(a.meta), sample_meta_to_json(b.meta));
  EXPECT_NE(generate_sample(18, bgs, c).image, a.image);
  EXPECT_THROW(generate_sample(0, {}, c), InvalidInputError);
}

TEST(GenerateSample, MaskAndScrContract) {
  const SynthConfig c = SynthConfig::defaults();
  const auto bgs = procedural_backgrounds(1, 512, 0);
  int checked = 0;
  for (int i = 0; i < 40; ++i) {
    const auto s = generate_sample(i, bgs, c);
    BinaryMask covered(s.mask.height(), s.mask.width());
    for (const auto& t : s.meta.targets) {
      BinaryMask support(s.mask.height(), s.mask.width());
      int area = 0;
      for (int y = t.bbox[0]; y <= t.bbox[2]; ++y)
        for (int x = t.bbox[1]; x <= t.bbox[3]; ++x)
          if (s.mask.get(y, x)) {
            support.set(y, x);
            covered.set(y, x);
            ++area;
          }
      EXPECT_GE(area, 1);
      EXPECT_EQ(area, t.area);
      if (t.clipped) continue;
      const BinaryMask ring = ring_region(s.mask.height(), s.mask.width(), t.bbox, c.ring_width);
      const Moments tm = moments_where(s.composite, support);
      Moments bm = moments_where(s.composite, ring);
      if (bm.sd == 0.0) bm.sd = 1.0 / 255.0;
      const double measured = std::abs(tm.mean - bm.mean) / bm.sd;
      EXPECT_NEAR(measured, t.scr_requested, 0.05 * t.scr_requested);
      ++checked;
    }
    EXPECT_EQ(covered, s.mask) << "mask pixel outside every target box";
    for (double v : s.image.pixels()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_GT(checked, 20);
}

TEST(Split, TailIsTest) {
  const auto s = split_indices(10, 0.2);
  EXPECT_EQ(s.train, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(s.test, (std::vector<int>{8, 9}));
  EXPECT_TRUE(split_indices(0, 0.5).train.empty());
}

TEST(SynthDataset, EmptyDatasetHasManifest) {
  const fs::path root = scratch("empty");
  const auto stats = synth_dataset(0, procedural_backgrounds(1, 128, 0), small_toy(0), root);
  EXPECT_EQ(stats.images, 0);
  const auto m = nlohmann::json::parse(slurp(root / "manifest.json"));
  EXPECT_EQ(m["count"], 0);
  EXPECT_TRUE(m["splits"]["train"].empty());
  EXPECT_TRUE(load_dataset(root, "all").empty());
  fs::remove_all(root);
}

TEST(SynthDataset, ByteIdenticalRegeneration) {
  const fs::path a = scratch("a"), b = scratch("b");
  const auto bgs = procedural_backgrounds(1, 128, 9);
  synth_dataset(12, bgs, small_toy(9), a);
  synth_dataset(12, bgs, small_toy(9), b);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 12 * 3 + 2);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(SynthDataset, MasksOnDiskAreBinary) {
  const fs::path root = scratch("masks");
  synth_dataset(6, procedural_backgrounds(1, 128, 1), small_toy(1), root);
  for (const auto& e : fs::directory_iterator(root / "masks")) {
    const Image m = read_png(e.path());
    for (double v : m.pixels()) EXPECT_TRUE(v == 0.0 || v == 1.0);
  }
  const auto test = load_dataset(root, "test");
  ASSERT_EQ(test.size(), 1u);
  EXPECT_EQ(test[0].index, 5);
  EXPECT_THROW(load_dataset(root, "val"), ConfigError);
  EXPECT_THROW(synth_dataset(1, procedural_backgrounds(1, 128, 1), small_toy(1), root), IoError);
  EXPECT_NO_THROW(synth_dataset(1, procedural_backgrounds(1, 128, 1), small_toy(1), root, true));
  fs::remove_all(root);
}

TEST(Stats, SpieBoundIsStrict) {
  EXPECT_TRUE(within_spie_bound(98, 65536));
  EXPECT_FALSE(within_spie_bound(99, 65536));  // 0.15% of 65536 = 98.3
  EXPECT_FALSE(within_spie_bound(6, 4096 - 96));
}
