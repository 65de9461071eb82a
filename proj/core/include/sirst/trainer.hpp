#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sirst/checkpoint.hpp"
#include "sirst/image.hpp"
#include "sirst/network.hpp"
#include "sirst/postproc.hpp"
#include "sirst/rng.hpp"

namespace sirst {

struct AugmentFlags {
  bool flip = true;
  bool blur = true;
  bool crop = true;
  bool normalize = true;
  static AugmentFlags none() { return {false, false, false, false}; }
};

inline constexpr double kCropFraction = 0.9;
inline constexpr double kAdagradEps = 1e-10;

struct TrainConfig {
  double learning_rate = 0.05;
  int batch_size = 16;
  int epochs = 10;
  int max_steps = 0;  // 0: run every epoch
  AugmentFlags augmentation{};
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // steps; 0 disables intermediate checkpoints
  std::filesystem::path out_dir;  // empty: keep everything in memory
  int threads = 0;                // 0: worker_count()

  void validate() const;
};

struct TrainSample {
  int id = 0;
  Image image;
  BinaryMask mask;
};

/// Flips (p = 0.5 each) act on image and mask alike; Gaussian blur
/// (p = 0.5, sigma ~ U[0, 1]) touches the image only; crop (p = 0.5) keeps a
/// random 0.9 window resized back (bilinear image, nearest mask);
/// normalisation runs last.
std::pair<Image, BinaryMask> augment(const Image& image, const BinaryMask& mask, Rng& rng, const AugmentFlags& flags);

/// Network input for a raw [0, 1] image.
Tensor prepare_input(const Image& image);

/// lr0 * (1 + cos(pi * step / total)) / 2.
double cosine_lr(double lr0, std::int64_t step, std::int64_t total);

/// Adagrad on every parameter's grad slot: acc += g^2,
/// p -= lr * g / (sqrt(acc) + 1e-10). Consumes the gradients; a second call
/// without a new backward pass throws.
void adagrad_step(ParamStore& params, double lr);

struct LossRecord {
  std::int64_t step;
  double lr;
  double loss;
};

struct TrainResult {
  ParamStore params;
  std::vector<LossRecord> trace;
  std::vector<std::filesystem::path> checkpoints;
  std::int64_t steps = 0;  // final step counter
};

std::int64_t steps_per_epoch(std::size_t samples, int batch_size);
std::int64_t total_steps(std::size_t samples, const TrainConfig& cfg);

/// Deterministic in (spec.seed, cfg, dataset). When resume is given, the
/// run continues from its step counter with its parameters and
/// accumulators.
TrainResult train(const std::vector<TrainSample>& dataset, const NetworkSpec& spec, const TrainConfig& cfg,
                  std::optional<Checkpoint> resume = std::nullopt);

std::string loss_trace_csv(const std::vector<LossRecord>& trace);

}  // namespace sirst
