#include <benchmark/benchmark.h>

#include "dsr/autograd.h"
#include "dsr/image.h"
#include "dsr/layers.h"
#include "dsr/synthgen.h"

using namespace dsr;

namespace {

void BM_Conv3x3Forward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  Rng rng(1);
  nn::ParamStore ps;
  nn::Conv2d conv(ps, "c", c, c, 3, 1, 1, rng);
  auto x = nn::leaf(Tensor::full({c, hw, hw}, 0.5));
  for (auto _ : state) {
    nn::NoGradGuard ng;
    auto y = conv.forward(x);
    benchmark::DoNotOptimize(y->val.data());
  }
}
BENCHMARK(BM_Conv3x3Forward)->Args({16, 48})->Args({16, 96})->Args({32, 48});

void BM_Conv3x3Backward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  Rng rng(1);
  nn::ParamStore ps;
  nn::Conv2d conv(ps, "c", c, c, 3, 1, 1, rng);
  auto x = nn::param(Tensor::full({c, hw, hw}, 0.5));
  for (auto _ : state) {
    ps.zero_grads();
    x->zero_grad();
    auto l = nn::mean_all(nn::square(conv.forward(x)));
    nn::backward(l);
    benchmark::DoNotOptimize(x->grad.data());
  }
}
BENCHMARK(BM_Conv3x3Backward)->Args({16, 48})->Args({32, 48});

void BM_BicubicUp4(benchmark::State& state) {
  Rng rng(2);
  Tensor x({3, 80, 112});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform();
  for (auto _ : state) {
    Tensor y = img::bicubic_resize(x, 320, 448, true);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_BicubicUp4);

void BM_RenderFrame(benchmark::State& state) {
  synth::SceneParams sp;
  sp.texture_seed = 7;
  const int w = static_cast<int>(state.range(0));
  const int h = static_cast<int>(state.range(1));
  for (auto _ : state) {
    auto r = synth::render_frame(sp, w, h);
    benchmark::DoNotOptimize(r.image.data());
  }
}
BENCHMARK(BM_RenderFrame)->Args({112, 80})->Args({448, 320});

}  // namespace

BENCHMARK_MAIN();
