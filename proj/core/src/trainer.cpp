#include "sirst/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "sirst/errors.hpp"
#include "sirst/parallel.hpp"

namespace sirst {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (threads < 0) throw ConfigError("threads must be >= 0");
}

std::pair<Image, BinaryMask> augment(const Image& image, const BinaryMask& mask, Rng& rng, const AugmentFlags& flags) {
  if (image.height() != mask.height() || image.width() != mask.width())
    throw InvalidShapeError("image and mask sizes differ");
  Image img = image;
  Image m = mask.to_image();
  // Draws happen unconditionally so that toggling one flag leaves the
  // others' random choices untouched.
  const bool hflip = rng.bernoulli(0.5);
  const bool vflip = rng.bernoulli(0.5);
  const bool do_blur = rng.bernoulli(0.5);
  const double sigma = rng.uniform();
  const bool do_crop = rng.bernoulli(0.5);
  const double cy = rng.uniform();
  const double cx = rng.uniform();

  if (flags.flip && hflip) {
    img = flip_horizontal(img);
    m = flip_horizontal(m);
  }
  if (flags.flip && vflip) {
    img = flip_vertical(img);
    m = flip_vertical(m);
  }
  if (flags.blur && do_blur && sigma > 1e-3) img = gaussian_blur5(img, sigma);
  if (flags.crop && do_crop) {
    const int h = img.height(), w = img.width();
    const int ch = std::max(1, static_cast<int>(std::lround(kCropFraction * h)));
    const int cw = std::max(1, static_cast<int>(std::lround(kCropFraction * w)));
    const int y0 = std::min(h - ch, static_cast<int>(cy * (h - ch + 1)));
    const int x0 = std::min(w - cw, static_cast<int>(cx * (w - cw + 1)));
    img = resize_bilinear(crop(img, y0, x0, ch, cw), h, w);
    m = resize_nearest(crop(m, y0, x0, ch, cw), h, w);
  }
  if (flags.normalize) img = normalize(img);
  return {std::move(img), BinaryMask::from_image(m)};
}

Tensor prepare_input(const Image& image) { return normalize(image).to_tensor(); }

double cosine_lr(double lr0, std::int64_t step, std::int64_t total) {
  if (total <= 0) return lr0;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  return lr0 * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

void adagrad_step(ParamStore& params, double lr) {
  for (const auto& p : params)
    if (!p.value.has_grad()) throw StaleTapeError("parameter '" + p.name + "' has no fresh gradient");
  for (auto& p : params) {
    auto v = p.value.data();
    auto g = std::as_const(p.value).grad();
    if (p.accumulator.size() != v.size()) p.accumulator = Tensor(p.value.shape());
    auto acc = p.accumulator.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      acc[i] += g[i] * g[i];
      v[i] -= lr * g[i] / (std::sqrt(acc[i]) + kAdagradEps);
    }
    p.value.drop_grad();
  }
}

std::int64_t steps_per_epoch(std::size_t samples, int batch_size) {
  return (static_cast<std::int64_t>(samples) + batch_size - 1) / batch_size;
}

std::int64_t total_steps(std::size_t samples, const TrainConfig& cfg) {
  const std::int64_t full = steps_per_epoch(samples, cfg.batch_size) * cfg.epochs;
  return cfg.max_steps > 0 ? std::min<std::int64_t>(full, cfg.max_steps) : full;
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::substream(seed, 2, static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng.engine());
  return order;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t step) {
  char name[48];
  std::snprintf(name, sizeof name, "checkpoint_%06lld.bin", static_cast<long long>(step));
  return dir / name;
}

}  // namespace

TrainResult train(const std::vector<TrainSample>& dataset, const NetworkSpec& spec, const TrainConfig& cfg,
                  std::optional<Checkpoint> resume) {
  spec.validate();
  cfg.validate();
  if (dataset.empty()) throw ConfigError("training set is empty");

  TrainResult result;
  std::int64_t step = 0;
  if (resume) {
    if (spec_to_json(resume->spec) != spec_to_json(spec))
      throw ConfigError("checkpoint network spec differs from the requested one");
    result.params = std::move(resume->params);
    step = static_cast<std::int64_t>(resume->step);
  } else {
    result.params = build(spec);
  }

  const std::int64_t per_epoch = steps_per_epoch(dataset.size(), cfg.batch_size);
  const std::int64_t total = total_steps(dataset.size(), cfg);
  const int workers = cfg.threads > 0 ? cfg.threads : worker_count();
  ParamStore& params = result.params;

  std::vector<std::size_t> order;
  std::int64_t order_epoch = -1;
  std::vector<std::vector<std::vector<double>>> slot_grads;
  std::vector<double> slot_loss;

  for (; step < total; ++step) {
    const std::int64_t epoch = step / per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(dataset.size(), cfg.seed, epoch);
      order_epoch = epoch;
    }
    const std::size_t begin = static_cast<std::size_t>(step % per_epoch) * cfg.batch_size;
    const std::size_t end = std::min(dataset.size(), begin + static_cast<std::size_t>(cfg.batch_size));
    const std::size_t n = end - begin;
    slot_grads.resize(n);
    slot_loss.assign(n, 0.0);

    parallel_for(
        n,
        [&](std::size_t s) {
          const TrainSample& sample = dataset[order[begin + s]];
          Rng rng = Rng::substream(cfg.seed, 3, static_cast<std::uint64_t>(step) * 65536u + s);
          auto [img, mask] = augment(sample.image, sample.mask, rng, cfg.augmentation);
          slot_loss[s] = loss_and_gradients(img.to_tensor(), mask.to_image().to_tensor(), std::as_const(params),
                                            spec, slot_grads[s]);
        },
        workers);

    // Reduce in slot order so the result does not depend on scheduling.
    double loss = 0.0;
    for (std::size_t s = 0; s < n; ++s) loss += slot_loss[s];
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) {
      std::ostringstream ids;
      for (std::size_t s = 0; s < n; ++s) ids << (s ? "," : "") << dataset[order[begin + s]].id;
      throw NumericError("non-finite loss at step " + std::to_string(step) + " (batch samples " + ids.str() + ")");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto g = params[k].value.grad();
      std::fill(g.begin(), g.end(), 0.0);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += slot_grads[s][k][i];
      for (double& v : g) v /= static_cast<double>(n);
    }
    const double lr = cosine_lr(cfg.learning_rate, step, total);
    adagrad_step(params, lr);
    result.trace.push_back({step, lr, loss});

    if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < total) {
      const auto path = checkpoint_path(cfg.out_dir, step + 1);
      save_checkpoint(path, spec, params, static_cast<std::uint64_t>(step + 1));
      result.checkpoints.push_back(path);
    }
  }
  result.steps = step;
  if (!cfg.out_dir.empty()) {
    const auto path = cfg.out_dir / "final.bin";
    save_checkpoint(path, spec, params, static_cast<std::uint64_t>(step));
    result.checkpoints.push_back(path);
  }
  return result;
}

std::string loss_trace_csv(const std::vector<LossRecord>& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "step,lr,loss\n";
  for (const auto& r : trace) out << r.step << ',' << r.lr << ',' << r.loss << '\n';
  return out.str();
}

}  // namespace sirst
