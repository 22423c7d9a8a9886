#include <benchmark/benchmark.h>

#include "povrate/kernels.hpp"
#include "povrate/random.hpp"

using namespace povrate;

namespace {

imagery::RasterTile random_tile(int side) {
  auto t = imagery::make_tile("bench", side, side);
  auto rng = make_rng(1, 0);
  for (auto& p : t.pixels) p = static_cast<float>(uniform01(rng));
  return t;
}

Eigen::MatrixXd random_filters(int k) {
  auto rng = make_rng(2, 0);
  Eigen::MatrixXd f(k, 27);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = normal01(rng);
  return f;
}

struct BootstrapFixture {
  std::vector<double> y, p, w;
  explicit BootstrapFixture(std::size_t n) : y(n), p(n), w(n) {
    auto rng = make_rng(3, 0);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = uniform01(rng) < 0.3 ? 1.0 : 0.0;
      p[i] = uniform01(rng);
      w[i] = 0.5 + uniform01(rng);
    }
  }
  kernels::BootstrapInput input() const { return {y, p, w}; }
};

// 256 x 256 tile, 128 filters, stride from the argument.
void BM_FeaturizeSerial(benchmark::State& state) {
  const auto tile = random_tile(256);
  const auto filters = random_filters(128);
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::featurize_serial(tile, filters, static_cast<int>(state.range(0))));
}
void BM_FeaturizeParallel(benchmark::State& state) {
  const auto tile = random_tile(256);
  const auto filters = random_filters(128);
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::featurize_parallel(tile, filters, static_cast<int>(state.range(0))));
}

// 1600 test households, 100 draws, iterations from the argument.
void BM_BootstrapSerial(benchmark::State& state) {
  const BootstrapFixture f(1600);
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::bootstrap_serial(f.input(), 100, static_cast<int>(state.range(0)), 7));
}
void BM_BootstrapParallel(benchmark::State& state) {
  const BootstrapFixture f(1600);
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::bootstrap_parallel(f.input(), 100, static_cast<int>(state.range(0)), 7));
}

}  // namespace

BENCHMARK(BM_FeaturizeSerial)->Arg(4)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FeaturizeParallel)->Arg(4)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BootstrapSerial)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BootstrapParallel)->Arg(1000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
