#include <benchmark/benchmark.h>

#include "dsr/dmm.h"
#include "dsr/rng.h"

using namespace dsr;

namespace {

Tensor random_map(std::vector<int> shape, uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_MatchFeatures(benchmark::State& state) {
  const int hw = static_cast<int>(state.range(0));
  const int c = static_cast<int>(state.range(1));
  Tensor a = random_map({c, hw, hw}, 1);
  Tensor b = random_map({c, hw, hw}, 2);
  dmm::MatchConfig cfg;
  cfg.block_h = cfg.block_w = 8;
  for (auto _ : state) {
    auto m = dmm::match_features(a, b, cfg);
    benchmark::DoNotOptimize(m.blocks.data());
  }
}
BENCHMARK(BM_MatchFeatures)->Args({16, 8})->Args({16, 4})->Args({32, 8});

void BM_GatherFold(benchmark::State& state) {
  const int scale = static_cast<int>(state.range(0));
  Tensor a = random_map({8, 16, 16}, 3);
  Tensor b = random_map({8, 16, 16}, 4);
  dmm::MatchConfig cfg;
  cfg.block_h = cfg.block_w = 8;
  auto m = dmm::match_features(a, b, cfg);
  Tensor scores = dmm::stacked_scores(m);
  Tensor ref = random_map({8, 16 * scale, 16 * scale}, 5);
  for (auto _ : state) {
    Tensor out = dmm::gather_weight_fold_ref(ref, m, scale, scores);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_GatherFold)->Arg(1)->Arg(2)->Arg(4);

}  // namespace
