#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "sirst/config.hpp"
#include "sirst/errors.hpp"

using namespace sirst;

TEST(KeyValues, ParsesCommentsAndWhitespace) {
  const auto kv = parse_key_values("# header\n\n  seed = 7 \nsynth.scr=3, 5\n\ttrain.lr =0.01\r\nseed = 9\n");
  EXPECT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv.at("seed"), "9");  // later duplicate wins
  EXPECT_EQ(kv.at("synth.scr"), "3, 5");
  EXPECT_EQ(kv.at("train.lr"), "0.01");
}

TEST(KeyValues, MalformedLinesNameTheirOrigin) {
  try {
    parse_key_values("seed = 1\nnot a pair\n", "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(parse_key_values(" = 3"), ConfigError);
}

TEST(KeyValues, MissingFileIsIoError) {
  EXPECT_THROW(read_key_values("/nonexistent/sirst.cfg"), IoError);
}

TEST(Resolve, LayersOverrideInOrder) {
  const RunConfig a = RunConfig::resolve({}, {});
  EXPECT_EQ(a.seed(), 0u);
  EXPECT_EQ(a.synth_count(), 1000);
  const RunConfig b = RunConfig::resolve({{"seed", "3"}, {"synth.n", "10"}}, {{"seed", "4"}});
  EXPECT_EQ(b.seed(), 4u);
  EXPECT_EQ(b.synth_count(), 10);
  EXPECT_EQ(b.synth().seed, 4u);
  EXPECT_EQ(b.network().seed, 4u);
  EXPECT_EQ(b.train().seed, 4u);
}

TEST(Resolve, UnknownKeyRejected) {
  EXPECT_THROW(RunConfig::resolve({{"synth.colour", "red"}}, {}), ConfigError);
  EXPECT_THROW(RunConfig::resolve({}, {{"train.momentum", "0.9"}}), ConfigError);
  EXPECT_THROW(RunConfig::resolve({}, {}).get("nope"), ConfigError);
}

TEST(Resolve, BadValuesRejected) {
  const std::vector<std::pair<std::string, std::string>> bad{
      {"seed", "-1"},          {"seed", "x"},          {"train.lr", "0"},        {"train.lr", "nan"},
      {"train.batch", "0"},    {"net.variant", "big"}, {"net.attention", "all"}, {"net.norm", "batch"},
      {"net.residual", "maybe"}, {"synth.scr", "3,-1"}, {"synth.count_probs", "0.5,0.4"},
      {"eval.threshold", "1"}, {"eval.d_thresh", "0"}, {"eval.detector", "yolo"}, {"eval.split", "val"},
      {"net.depth", "9"},      {"synth.n", "-2"},      {"preset", "huge"}};
  for (const auto& [k, v] : bad) EXPECT_THROW(RunConfig::resolve({}, {{k, v}}), ConfigError) << k << "=" << v;
}

TEST(Presets, ToyMatchesEndToEndSetup) {
  const RunConfig rc = RunConfig::resolve({}, {{"preset", "toy"}});
  const auto s = rc.synth();
  EXPECT_EQ(s.image_size, 64);
  EXPECT_EQ(s.scr_values, (std::vector<double>{3.0, 5.0}));
  for (const auto& [scene, rows] : s.size_table)
    for (const auto& r : rows) EXPECT_TRUE(r.shape == "point" || r.shape == "spot") << scene;
  const auto n = rc.network();
  EXPECT_EQ(n.depth, 3);
  EXPECT_EQ(n.channels, (std::vector<int>{8, 16, 32, 64}));
  const auto t = rc.train();
  EXPECT_DOUBLE_EQ(t.learning_rate, 0.05);
  EXPECT_EQ(t.batch_size, 8);
  EXPECT_EQ(t.max_steps, 500);
}

TEST(Presets, PresetFromFileCanBeOverridden) {
  const RunConfig rc = RunConfig::resolve({{"preset", "toy"}}, {{"preset", "default"}});
  EXPECT_EQ(rc.synth().image_size, 256);
  EXPECT_EQ(rc.get("preset"), "default");
}

TEST(Presets, EveryPresetListsTheSameKeys) {
  const auto a = preset_defaults("default"), b = preset_defaults("toy");
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [k, v] : a) EXPECT_TRUE(b.contains(k)) << k;
}

TEST(Views, TypedValues) {
  const RunConfig rc = RunConfig::resolve(
      {}, {{"net.variant", "no_dnim"},
           {"net.attention", "sum_fusion"},
           {"net.norm", "none"},
           {"train.flip", "false"},
           {"eval.d_thresh_sweep", "1, 2.5"},
           {"synth.count_probs", "1"},
           {"filter.tophat_structure", "7"}});
  EXPECT_EQ(rc.network().variant, Variant::NoDnim);
  EXPECT_EQ(rc.network().attention, Attention::SumFusion);
  EXPECT_EQ(rc.network().norm, Norm::None);
  EXPECT_FALSE(rc.train().augmentation.flip);
  EXPECT_TRUE(rc.train().augmentation.crop);
  EXPECT_EQ(rc.d_thresh_sweep(), (std::vector<double>{1.0, 2.5}));
  EXPECT_EQ(rc.synth().count_probs, (std::map<int, double>{{1, 1.0}}));
  EXPECT_EQ(rc.filters().tophat_structure, 7);
}

TEST(Views, ShapeRestrictionDropsEmptyScenes) {
  const RunConfig rc =
      RunConfig::resolve({}, {{"synth.shapes", "ship"}, {"synth.image_size", "32"}, {"synth.backgrounds_per_scene", "1"}});
  const auto bgs = rc.backgrounds();
  ASSERT_FALSE(bgs.empty());
  for (const auto& b : bgs) EXPECT_EQ(b.scene, "sea");
  EXPECT_EQ(bgs[0].image.height(), 64);
}

TEST(Views, ToTextRoundTrips) {
  const RunConfig rc = RunConfig::resolve({{"preset", "toy"}}, {{"seed", "12"}, {"synth.scr", "4"}});
  const RunConfig again = RunConfig::resolve(parse_key_values(rc.to_text()), {});
  EXPECT_EQ(again.values(), rc.values());
}

TEST(Lists, ParseAndReject) {
  EXPECT_EQ(parse_double_list("k", " 0.5 ,1e-3,, 2 "), (std::vector<double>{0.5, 1e-3, 2.0}));
  EXPECT_EQ(parse_int_list("k", "1,2,3"), (std::vector<int>{1, 2, 3}));
  EXPECT_THROW(parse_double_list("k", "1,two"), ConfigError);
  EXPECT_THROW(parse_int_list("k", "1.5"), ConfigError);
}

TEST(Files, ReadFromDisk) {
  const auto p = std::filesystem::temp_directory_path() / "sirst_test_config.cfg";
  std::ofstream(p) << "# toy run\npreset = toy\nseed = 5\n";
  const RunConfig rc = RunConfig::resolve(read_key_values(p), {});
  EXPECT_EQ(rc.seed(), 5u);
  EXPECT_EQ(rc.synth().image_size, 64);
  std::filesystem::remove(p);
}
