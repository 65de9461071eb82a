#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sirst/postproc.hpp"

namespace sirst {

inline constexpr double kDefaultDeviationThreshold = 3.0;

struct MatchPair {
  int gt_index;
  int pred_id;
  double deviation;
};

struct MatchResult {
  std::vector<MatchPair> pairs;
  std::vector<int> unmatched_gt;
  std::vector<int> unmatched_pred;
  double d_thresh = kDefaultDeviationThreshold;
};

/// |pred & gt| / |pred | gt|; 1 when both are empty.
double iou(const BinaryMask& pred, const BinaryMask& gt);

/// Greedy centroid matching: candidate pairs are visited by ascending
/// deviation (ties by gt index, then pred id) and accepted when the
/// deviation is strictly below d_thresh and both sides are still free.
MatchResult match_targets(const DetectionSet& pred, const DetectionSet& gt, double d_thresh);

struct PdValue {
  double value;  // NaN when undefined
  bool defined;
};
/// |pairs| / t_all. With t_all == 0 the value is 1 if nothing was
/// predicted and undefined otherwise.
PdValue pd(const MatchResult& match, int t_all);

/// Pixel area of unmatched predicted components over H * W.
double fa(const DetectionSet& pred, const MatchResult& match, int height, int width);

/// Raw per-image counts; dataset metrics pool these.
struct ImageCounts {
  std::size_t inter = 0;
  std::size_t uni = 0;
  std::size_t t_correct = 0;
  std::size_t t_all = 0;
  std::size_t p_false = 0;
  std::size_t p_all = 0;
  std::size_t n_pred = 0;
  ImageCounts& operator+=(const ImageCounts& o);
};

ImageCounts evaluate_image(const BinaryMask& pred, const BinaryMask& gt, double d_thresh);

struct RocPoint {
  double threshold;
  double fa;
  double pd;
};

struct MetricsReport {
  double iou = 0.0;
  double pd = 0.0;
  bool pd_defined = true;
  double fa = 0.0;
  double d_thresh = kDefaultDeviationThreshold;
  ImageCounts counts;
  std::size_t images = 0;
  std::vector<RocPoint> roc_points;
};

/// Pooled metrics: sums of numerators over sums of denominators.
MetricsReport pool(const std::vector<ImageCounts>& per_image, double d_thresh);
MetricsReport evaluate(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts, double d_thresh);

/// One (fa, pd) point per threshold from the fixed-threshold pipeline.
std::vector<RocPoint> roc(const std::vector<Image>& prob_maps, const std::vector<BinaryMask>& gt_masks,
                          const std::vector<double>& thresholds, double d_thresh = kDefaultDeviationThreshold);

std::string report_to_json(const MetricsReport& r);
std::string counts_to_json(const ImageCounts& c, double d_thresh);
ImageCounts counts_from_json(const std::string& text);
std::string roc_to_csv(const std::vector<RocPoint>& points);

}  // namespace sirst
