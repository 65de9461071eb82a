#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "sirst/checkpoint.hpp"
#include "sirst/errors.hpp"
#include "sirst/trainer.hpp"

using namespace sirst;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sirst_test_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// 16x16 noise with one bright 2x2 blob.
std::vector<TrainSample> blobs(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainSample> out;
  for (int i = 0; i < n; ++i) {
    TrainSample s{i, Image(16, 16), BinaryMask(16, 16)};
    for (double& v : s.image.pixels()) v = rng.uniform(0.1, 0.3);
    const int r = rng.uniform_int(2, 12), c = rng.uniform_int(2, 12);
    for (int y = r; y < r + 2; ++y)
      for (int x = c; x < c + 2; ++x) {
        s.image.at(y, x) = 0.9;
        s.mask.set(y, x);
      }
    out.push_back(std::move(s));
  }
  return out;
}

TrainConfig quick(int steps) {
  TrainConfig c;
  c.batch_size = 3;
  c.epochs = 100;
  c.max_steps = steps;
  c.seed = 5;
  return c;
}

ParamStore single(double value) {
  ParamStore ps;
  ps.add("w", {1}).value[0] = value;
  return ps;
}

}  // namespace

TEST(Adagrad, HandComputedTwoSteps) {
  ParamStore ps = single(1.0);
  const double lr = 0.1;
  for (int i = 0; i < 2; ++i) {
    ps.at("w").value.grad()[0] = 1.0;
    adagrad_step(ps, lr);
  }
  // acc = 1 then 2: decrease lr * (1 + 1/sqrt(2)), up to the 1e-10 eps
  EXPECT_NEAR(ps.at("w").value[0], 1.0 - lr * (1.0 + 1.0 / std::sqrt(2.0)), 1e-10);
  EXPECT_DOUBLE_EQ(ps.at("w").value[0], 1.0 - lr / (1.0 + kAdagradEps) - lr / (std::sqrt(2.0) + kAdagradEps));
  EXPECT_DOUBLE_EQ(ps.at("w").accumulator[0], 2.0);
}

TEST(Adagrad, ZeroGradientLeavesParameter) {
  ParamStore ps = single(0.25);
  ps.at("w").value.grad()[0] = 0.0;
  adagrad_step(ps, 0.05);
  EXPECT_DOUBLE_EQ(ps.at("w").value[0], 0.25);
  EXPECT_DOUBLE_EQ(ps.at("w").accumulator[0], 0.0);
}

TEST(Adagrad, SecondStepWithoutBackwardThrows) {
  ParamStore ps = single(0.0);
  ps.at("w").value.grad()[0] = 0.5;
  adagrad_step(ps, 0.05);
  EXPECT_FALSE(ps.at("w").value.has_grad());
  EXPECT_THROW(adagrad_step(ps, 0.05), StaleTapeError);
}

TEST(Adagrad, AccumulatorNeverDecreases) {
  ParamStore ps = single(0.0);
  Rng rng(1);
  double prev = 0.0;
  for (int i = 0; i < 50; ++i) {
    ps.at("w").value.grad()[0] = rng.normal();
    adagrad_step(ps, 0.01);
    EXPECT_GE(ps.at("w").accumulator[0], prev);
    prev = ps.at("w").accumulator[0];
  }
}

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0.05, 0, 100), 0.05);
  EXPECT_NEAR(cosine_lr(0.05, 50, 100), 0.025, 1e-15);
  EXPECT_NEAR(cosine_lr(0.05, 100, 100), 0.0, 1e-18);
  for (int s = 0; s < 100; ++s) EXPECT_GE(cosine_lr(0.05, s, 100), cosine_lr(0.05, s + 1, 100));
}

TEST(Augment, AllOffIsIdentity) {
  const auto data = blobs(1, 2);
  Rng rng(3);
  const auto [img, mask] = augment(data[0].image, data[0].mask, rng, AugmentFlags::none());
  EXPECT_EQ(img, data[0].image);
  EXPECT_EQ(mask, data[0].mask);
}

TEST(Augment, FlipsMoveImageAndMaskTogether) {
  const auto data = blobs(1, 4);
  AugmentFlags flip_only = AugmentFlags::none();
  flip_only.flip = true;
  bool saw_change = false;
  for (std::uint64_t seed = 0; seed < 16; ++seed) {
    Rng rng(seed);
    const auto [img, mask] = augment(data[0].image, data[0].mask, rng, flip_only);
    saw_change = saw_change || !(mask == data[0].mask);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) EXPECT_EQ(mask.get(y, x), img.at(y, x) == 0.9);
  }
  EXPECT_TRUE(saw_change);
}

TEST(Augment, MaskStaysBinaryUnderEverything) {
  const auto data = blobs(4, 6);
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    Rng rng(seed);
    const auto& s = data[seed % 4];
    const auto [img, mask] = augment(s.image, s.mask, rng, AugmentFlags{});
    EXPECT_EQ(img.height(), 16);
    EXPECT_EQ(mask.width(), 16);
    const Image m = mask.to_image();
    for (double v : m.pixels()) EXPECT_TRUE(v == 0.0 || v == 1.0);
    EXPECT_NEAR(mean(img), 0.0, 1e-12);
  }
}

TEST(Augment, ShapeMismatchRejected) {
  Rng rng(0);
  EXPECT_THROW(augment(Image(8, 8), BinaryMask(8, 9), rng, AugmentFlags{}), InvalidShapeError);
}

TEST(Schedule, StepCounts) {
  EXPECT_EQ(steps_per_epoch(10, 3), 4);
  EXPECT_EQ(steps_per_epoch(9, 3), 3);
  EXPECT_EQ(steps_per_epoch(1, 16), 1);
  TrainConfig c;
  c.batch_size = 4;
  c.epochs = 3;
  EXPECT_EQ(total_steps(10, c), 9);
  c.max_steps = 5;
  EXPECT_EQ(total_steps(10, c), 5);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.max_steps = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, SingleSampleEpochIsOneStep) {
  TrainConfig c = quick(0);
  c.epochs = 1;
  c.batch_size = 8;
  const auto r = train(blobs(1, 1), NetworkSpec::tiny(), c);
  EXPECT_EQ(r.steps, 1);
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_DOUBLE_EQ(r.trace[0].lr, c.learning_rate);
}

TEST(Train, IdenticalRunsIdenticalTraces) {
  const auto data = blobs(7, 3);
  const auto a = train(data, NetworkSpec::tiny(), quick(5));
  TrainConfig one_thread = quick(5);
  one_thread.threads = 1;
  const auto b = train(data, NetworkSpec::tiny(), one_thread);
  EXPECT_EQ(loss_trace_csv(a.trace), loss_trace_csv(b.trace));
  for (std::size_t k = 0; k < a.params.size(); ++k) EXPECT_EQ(a.params[k].value.values(), b.params[k].value.values());
}

TEST(Train, LossDecreasesOnEasyTask) {
  const auto data = blobs(12, 8);
  TrainConfig c = quick(40);
  c.augmentation = AugmentFlags::none();
  c.augmentation.normalize = true;
  const auto r = train(data, NetworkSpec::tiny(), c);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 5; ++i) {
    head += r.trace[static_cast<std::size_t>(i)].loss;
    tail += r.trace[r.trace.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  EXPECT_LT(tail, head);
  for (const auto& rec : r.trace) {
    EXPECT_GE(rec.loss, 0.0);
    EXPECT_LE(rec.loss, 1.0);
  }
}

TEST(Train, NonFiniteLossNamesStepAndSamples) {
  auto data = blobs(2, 9);
  data[1].image.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
  data[1].id = 4242;
  TrainConfig c = quick(1);
  c.augmentation = AugmentFlags::none();
  try {
    train(data, NetworkSpec::tiny(), c);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("4242"), std::string::npos) << e.what();
  }
}

TEST(Train, EmptyDatasetRejected) {
  EXPECT_THROW(train({}, NetworkSpec::tiny(), quick(1)), ConfigError);
}

TEST(Train, ResumeContinuesBitExactly) {
  const fs::path dir = scratch("resume");
  const auto data = blobs(7, 12);
  TrainConfig c = quick(6);
  c.checkpoint_every = 3;
  c.out_dir = dir;
  const auto full = train(data, NetworkSpec::tiny(), c);
  ASSERT_EQ(full.checkpoints.size(), 2u);
  EXPECT_EQ(full.checkpoints[0].filename(), "checkpoint_000003.bin");

  Checkpoint mid = load_checkpoint(full.checkpoints[0]);
  EXPECT_EQ(mid.step, 3u);
  TrainConfig again = c;
  again.out_dir.clear();
  const auto resumed = train(data, NetworkSpec::tiny(), again, std::move(mid));
  EXPECT_EQ(resumed.steps, 6);
  ASSERT_EQ(resumed.trace.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(resumed.trace[i].step, full.trace[i + 3].step);
    EXPECT_EQ(resumed.trace[i].loss, full.trace[i + 3].loss);
  }
  for (std::size_t k = 0; k < full.params.size(); ++k) {
    EXPECT_EQ(resumed.params[k].value.values(), full.params[k].value.values()) << full.params[k].name;
    EXPECT_EQ(resumed.params[k].accumulator.values(), full.params[k].accumulator.values());
  }
  fs::remove_all(dir);
}

TEST(Train, ResumeRejectsDifferentSpec) {
  const fs::path dir = scratch("spec");
  TrainConfig c = quick(1);
  c.out_dir = dir;
  train(blobs(3, 1), NetworkSpec::tiny(), c);
  Checkpoint ck = load_checkpoint(dir / "final.bin");
  NetworkSpec other = NetworkSpec::tiny();
  other.variant = Variant::NoDnim;
  EXPECT_THROW(train(blobs(3, 1), other, quick(2), std::move(ck)), ConfigError);
  fs::remove_all(dir);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path dir = scratch("ckpt");
  TrainConfig c = quick(2);
  c.out_dir = dir;
  const auto r = train(blobs(4, 2), NetworkSpec::tiny(), c);
  const Checkpoint ck = load_checkpoint(dir / "final.bin");
  EXPECT_EQ(ck.step, 2u);
  EXPECT_EQ(spec_to_json(ck.spec), spec_to_json(NetworkSpec::tiny()));
  ASSERT_EQ(ck.params.size(), r.params.size());
  for (std::size_t k = 0; k < r.params.size(); ++k) {
    EXPECT_EQ(ck.params[k].name, r.params[k].name);
    EXPECT_EQ(ck.params[k].value.values(), r.params[k].value.values());
    EXPECT_EQ(ck.params[k].accumulator.values(), r.params[k].accumulator.values());
  }
  save_checkpoint(dir / "again.bin", ck.spec, ck.params, ck.step);
  EXPECT_EQ(slurp(dir / "again.bin"), slurp(dir / "final.bin"));
  fs::remove_all(dir);
}

TEST(Checkpoint, CorruptFilesAreIoErrors) {
  const fs::path dir = scratch("corrupt");
  const ParamStore ps = build(NetworkSpec::tiny());
  save_checkpoint(dir / "ok.bin", NetworkSpec::tiny(), ps, 0);
  std::string bytes = slurp(dir / "ok.bin");

  auto write = [&](const std::string& name, const std::string& b) {
    std::ofstream(dir / name, std::ios::binary) << b;
    return dir / name;
  };
  EXPECT_THROW(load_checkpoint(dir / "missing.bin"), IoError);
  EXPECT_THROW(load_checkpoint(write("trunc.bin", bytes.substr(0, bytes.size() / 2))), IoError);
  EXPECT_THROW(load_checkpoint(write("tail.bin", bytes + "x")), IoError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(load_checkpoint(write("magic.bin", bad)), IoError);
  bad = bytes;
  bad[8] = 9;  // version
  EXPECT_THROW(load_checkpoint(write("version.bin", bad)), IoError);
  fs::remove_all(dir);
}

TEST(LossTrace, CsvLayout) {
  const std::string csv = loss_trace_csv({{0, 0.05, 0.75}, {1, 0.025, 0.5}});
  EXPECT_EQ(csv, "step,lr,loss\n0,0.050000000000000003,0.75\n1,0.025000000000000001,0.5\n");
}
