#include <benchmark/benchmark.h>

#include "sirst/network.hpp"
#include "sirst/postproc.hpp"
#include "sirst/rng.hpp"
#include "sirst/tape.hpp"

using namespace sirst;

namespace {

Tensor noise(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// forward + backward of one 3x3 conv, channels in -> out, square side
void BM_Conv2d(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), side = static_cast<int>(state.range(1));
  const Tensor x = noise({c, side, side}, 1), w = noise({c, c, 3, 3}, 2), b = noise({c}, 3);
  for (auto _ : state) {
    Tape tape;
    const Var y = conv2d(tape, tape.leaf(x), tape.leaf(w), tape.leaf(b), 1, 1);
    tape.backward(sum(tape, y));
    benchmark::DoNotOptimize(tape.grad(y).data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * c * c * 9 * side * side);
}
BENCHMARK(BM_Conv2d)->Args({8, 64})->Args({16, 32})->Args({64, 8})->Unit(benchmark::kMicrosecond);

void BM_Label8(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  BinaryMask m(side, side);
  Rng rng(4);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) m.set(y, x, rng.bernoulli(0.3));
  for (auto _ : state) benchmark::DoNotOptimize(label8(m).components.size());
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_Label8)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

// toy network on a 64x64 image; range(0) = 1 adds the backward pass
void BM_Forward(benchmark::State& state) {
  const NetworkSpec spec = NetworkSpec::toy();
  const ParamStore ps = build(spec);
  const Tensor img = noise({1, 64, 64}, 5);
  Tensor mask({1, 64, 64});
  mask.data()[64 * 30 + 30] = 1.0;
  std::vector<std::vector<double>> grads;
  for (auto _ : state) {
    if (state.range(0)) {
      benchmark::DoNotOptimize(loss_and_gradients(img, mask, ps, spec, grads));
    } else {
      benchmark::DoNotOptimize(predict(img, ps, spec).data().data());
    }
  }
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
