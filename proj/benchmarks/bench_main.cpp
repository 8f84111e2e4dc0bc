// Throughput of the hot paths: Magnus evolution, the Riccati fixed point,
// a full propagation-table sweep and the operator cache round trip.

#include "kgd/cache.hpp"
#include "kgd/evolution.hpp"

#include <benchmark/benchmark.h>

#include <filesystem>

using namespace kgd;

namespace {

std::shared_ptr<ModelOperatorData> sech_model(int n, double T) {
  const SpatialGrid g = build_grid(n, 8 * M_PI);
  return std::make_shared<ModelOperatorData>(
      assemble_model(make_preset("sech", {}, g.length), g, TimeGrid::symmetric(T, 0.05)));
}

}  // namespace

/// One unit of time of fourth-order Magnus evolution (20 steps).
static void BM_EvolveUnitTime(benchmark::State& state) {
  auto model = sech_model(static_cast<int>(state.range(0)), 2.0);
  const BlockOperatorFamily gen = full_generator(model);
  for (auto _ : state) benchmark::DoNotOptimize(evolve(gen, 1.0, 0.0));
}
BENCHMARK(BM_EvolveUnitTime)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_RiccatiSolve(benchmark::State& state) {
  auto model = sech_model(static_cast<int>(state.range(0)), 5.0);
  for (auto _ : state) benchmark::DoNotOptimize(riccati_solve(*model, {}));
}
BENCHMARK(BM_RiccatiSolve)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

/// Table over [-T, T] with T = 5 (200 nodes).
static void BM_PropagationTable(benchmark::State& state) {
  auto model = sech_model(static_cast<int>(state.range(0)), 5.0);
  const BlockOperatorFamily gen = full_generator(model);
  for (auto _ : state) benchmark::DoNotOptimize(PropagationTable(gen));
}
BENCHMARK(BM_PropagationTable)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_CacheRoundTrip(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::vector<Mat> blocks(100, Mat::Random(2 * n, 2 * n));
  const std::string path = (std::filesystem::temp_directory_path() / "kgd_bench.kgdc").string();
  for (auto _ : state) {
    cache_store(path, "bench", 1, blocks);
    benchmark::DoNotOptimize(cache_load(path, "bench", 1));
  }
  state.SetBytesProcessed(state.iterations() * 2 * static_cast<int64_t>(blocks.size()) * 4 * n * n * 16);
  std::filesystem::remove(path);
}
BENCHMARK(BM_CacheRoundTrip)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
