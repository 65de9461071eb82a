#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sirst/image.hpp"
#include "sirst/postproc.hpp"
#include "sirst/rng.hpp"

namespace sirst {

enum class TargetKind { PointGaussian, Spot, Extended };

std::string to_string(TargetKind k);
TargetKind parse_target_kind(const std::string& s);

/// Intensity profile in [0, 1] with its binary footprint.
struct TargetTemplate {
  TargetKind kind = TargetKind::PointGaussian;
  std::string shape;  // "point", "spot", or an extended template name
  Image patch;
  BinaryMask support;
};

/// One row of the per-scene size/type distribution.
struct SizeEntry {
  std::string shape;  // point | spot | plane | ship | uav
  int min_size = 1;
  int max_size = 1;
  double prob = 0.0;
};

struct SynthConfig {
  int image_size = 256;
  std::vector<double> scr_values{3.0, 4.0, 5.0, 6.0};
  std::vector<double> blur_sigmas{0.2, 0.5, 1.0};
  std::map<std::string, std::vector<SizeEntry>> size_table;
  std::map<int, double> count_probs{{1, 0.63}, {2, 0.25}, {3, 0.12}};
  int ring_width = 10;
  int max_retries = 200;
  double scr_tolerance = 0.05;  // relative; larger post-clip drift rejects the placement
  double test_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  static SynthConfig defaults();
  /// 64x64 images, point and spot targets only.
  static SynthConfig toy();
  /// Drops table rows whose shape is not listed, renormalising each scene.
  void restrict_shapes(const std::vector<std::string>& shapes);
};

TargetKind kind_of_shape(const std::string& shape);

/// Peak-normalised Gaussian: exp(-((x-c)^2 + (y-c)^2) / (2 sigma^2)),
/// support where the profile exceeds 0.05.
TargetTemplate make_point_target(int size, double sigma);
TargetTemplate make_spot_target(int size, Rng& rng);
TargetTemplate make_extended_target(const std::string& shape, int size, Rng& rng);
TargetTemplate make_target(const std::string& shape, int size, Rng& rng);

struct Placement {
  int row = 0;  // top-left of the template patch
  int col = 0;
};

struct PlacedTarget {
  TargetTemplate target;
  Placement at;
  double scr = 0.0;
};

/// Draws target count, shapes, sizes and SCR values for a scene and places
/// them inside a height x width image. Boxes keep a ring_width gap so each
/// target's background ring is free of other targets.
std::vector<PlacedTarget> select_targets(const std::string& scene, const SynthConfig& cfg, Rng& rng, int height,
                                         int width);

struct BackgroundStats {
  double mean = 0.0;
  double stddev = 0.0;
  bool floored = false;  // stddev was zero and replaced by 1/255
};

inline constexpr double kSigmaFloor = 1.0 / 255.0;

BackgroundStats background_stats(const Image& img, const BinaryMask& region);

/// Scales template values on the support so their mean is mu_B + C * sigma_B:
/// v = mu_B + C * sigma_B * patch / mean_support(patch), then clipped to
/// [0, 1]. Off-support entries are zero.
Image adjust_intensity(const TargetTemplate& target, const BackgroundStats& bg, double scr);

/// 5x5 Gaussian blur, kernel normalised to 1, reflect padding.
Image blur(const Image& img, double sigma);

/// |mean(target) - mean(background)| / std(background), with the same
/// zero-stddev floor as adjust_intensity.
double scr_of(const Image& composite, const BinaryMask& target, const BinaryMask& background);

/// Ring of width ring_width around the inclusive box, clipped to the image.
BinaryMask ring_region(int height, int width, const std::array<int, 4>& box, int ring_width);

struct Background {
  std::string scene;
  Image image;
};

std::vector<std::string> procedural_scenes();
Image make_background(const std::string& scene, int height, int width, Rng& rng);
std::vector<Background> procedural_backgrounds(int per_scene, int size, std::uint64_t seed);
/// Loads root/<scene>/*.png; the subdirectory name becomes the scene tag.
std::vector<Background> load_backgrounds(const std::filesystem::path& root);

struct TargetMeta {
  std::string kind;
  std::string shape;
  double centroid_row = 0.0;
  double centroid_col = 0.0;
  double scr_requested = 0.0;
  double scr_measured = 0.0;
  double blur_sigma = 0.0;
  std::array<int, 4> bbox{};
  int area = 0;
  bool sigma_floored = false;
  bool clipped = false;  // some support pixel was clipped to [0, 1]
};

struct SampleMeta {
  int index = 0;
  std::string scene;
  int background = 0;
  double blur_sigma = 0.0;
  int rejected_targets = 0;
  std::vector<TargetMeta> targets;
};

struct SampleRecord {
  Image image;      // blurred composite, [0, 1]
  Image composite;  // before blur; SCR is defined here
  BinaryMask mask;  // union of pre-blur supports
  SampleMeta meta;
};

/// Pure function of (config.seed, index, backgrounds).
SampleRecord generate_sample(int index, const std::vector<Background>& backgrounds, const SynthConfig& cfg);

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> test;
};
DatasetSplit split_indices(int n, double test_fraction);

std::string sample_meta_to_json(const SampleMeta& meta);
std::string synth_config_to_json(const SynthConfig& cfg);

struct DatasetStats {
  int images = 0;
  int targets = 0;
  std::map<int, int> count_histogram;
  double multi_target_fraction = 0.0;
  std::map<std::string, int> area_histogram;
  double spie_fraction = 0.0;
  double dim_fraction = 0.0;  // targets whose peak lies outside the image's top 10% brightness
  std::map<std::string, int> kind_counts;
  std::map<std::string, int> scr_counts;
  int rejected_targets = 0;
};

/// Incremental statistics so datasets never need to sit in memory.
class StatsBuilder {
 public:
  explicit StatsBuilder(int image_area) : image_area_(image_area) {}
  void add(const SampleRecord& sample);
  DatasetStats finish() const;

 private:
  int image_area_;
  DatasetStats s_;
  int multi_ = 0;
  int spie_ = 0;
  int dim_ = 0;
};
std::string stats_to_json(const DatasetStats& s);

/// SPIE small-target bound: area strictly below 0.15% of the image.
bool within_spie_bound(int area, int image_area);

/// Writes root/{images,masks,meta}/NNNNN.*, manifest.json and stats.json.
/// Returns the computed statistics. Refuses a non-empty root unless force.
DatasetStats synth_dataset(int n, const std::vector<Background>& backgrounds, const SynthConfig& cfg,
                           const std::filesystem::path& root, bool force = false,
                           const std::string& config_echo = {});

std::string sample_name(int index);

/// On-disk dataset reader.
struct DatasetSample {
  int index;
  Image image;
  BinaryMask mask;
};
std::vector<DatasetSample> load_dataset(const std::filesystem::path& root, const std::string& split);

}  // namespace sirst
