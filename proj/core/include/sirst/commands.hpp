#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sirst/checkpoint.hpp"
#include "sirst/config.hpp"
#include "sirst/metrics.hpp"
#include "sirst/postproc.hpp"
#include "sirst/synth.hpp"
#include "sirst/trainer.hpp"

namespace sirst {

/// A named detector: DNA-Net from a checkpoint, or a classical baseline.
class Detector {
 public:
  /// Uses eval.detector; "dnanet" loads paths.checkpoint.
  static Detector from_config(const RunConfig& rc);
  static Detector dnanet(Checkpoint ckpt, double threshold);
  static Detector baseline(const std::string& name, const FilterConfig& filters);

  const std::string& name() const noexcept { return name_; }
  bool is_network() const noexcept { return ckpt_.has_value(); }

  /// Score map in [0, 1]: the network's probability map, or a baseline
  /// response divided by its maximum.
  Image score(const Image& raw) const;
  /// Network: score > threshold. Baselines: adaptive threshold.
  BinaryMask segment(const Image& score) const;

 private:
  std::string name_;
  std::optional<Checkpoint> ckpt_;
  double threshold_ = 0.5;
  FilterConfig filters_;
};

struct NamedImage {
  std::string name;
  Image image;
  BinaryMask mask;  // empty unless read from a dataset
};

/// Images for detect/eval/roc: paths.images (a PNG or a directory of PNGs)
/// when set, otherwise the eval.split of paths.dataset.
std::vector<NamedImage> input_images(const RunConfig& rc);

struct Prediction {
  Image score;
  BinaryMask mask;
  DetectionSet detections;
};
std::vector<Prediction> run_detector(const Detector& det, const std::vector<NamedImage>& images);

/// Creates dir, refusing a non-empty one unless force (which clears it).
void prepare_output_dir(const std::filesystem::path& dir, bool force);
/// Writes dir/config.txt (resolved key=value) and dir/manifest.json.
void write_manifest(const std::filesystem::path& dir, const std::string& command, const RunConfig& rc,
                    const std::string& extra_json = "{}");

DatasetStats cmd_synth(const RunConfig& rc, bool force);

struct TrainSummary {
  std::int64_t steps = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  std::filesystem::path checkpoint;
};
TrainSummary cmd_train(const RunConfig& rc, bool force);

/// Per image: detections/<name>.json, masks/<name>.png, scores/<name>.png
/// (16-bit) and overlays/<name>.png.
std::size_t cmd_detect(const RunConfig& rc, bool force);

/// report.json at eval.d_thresh plus report_d<d>.json per sweep entry;
/// per_image/<name>.json holds raw counts. Predictions come from
/// paths.pred_masks when set, otherwise from the configured detector.
std::vector<MetricsReport> cmd_eval(const RunConfig& rc, bool force);

/// roc.csv and roc.json over eval.roc_thresholds applied to score maps.
std::vector<RocPoint> cmd_roc(const RunConfig& rc, bool force);

/// Collects the manifests and metric files of the run directories listed in
/// paths.inputs into report.json and report.md.
std::string cmd_report(const RunConfig& rc, bool force);

/// Maps an exception to the process exit code: 2 config, 3 I/O, 4 numeric,
/// 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace sirst
