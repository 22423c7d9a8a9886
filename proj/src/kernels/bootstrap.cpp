#include <cmath>

#include "povrate/error.hpp"
#include "povrate/kernels.hpp"
#include "povrate/random.hpp"

namespace povrate::kernels {

namespace {

void check(const BootstrapInput& in, int n_draw, int iters) {
  if (in.truth.empty()) throw Error(Errc::EmptyGroup, "bootstrap over empty set");
  if (in.truth.size() != in.predicted.size() || in.truth.size() != in.weights.size()) {
    throw Error(Errc::ShapeError, "bootstrap inputs differ in length");
  }
  if (n_draw < 1 || iters < 1) {
    throw Error(Errc::ConfigError, "n_draw and iters must be positive");
  }
}

// |true rate - predicted rate| on one resample, in percentage points.
double one_iteration(const BootstrapInput& in, int n_draw, std::uint64_t seed,
                     std::uint64_t iteration) {
  auto rng = make_rng(seed, iteration);
  const auto n = static_cast<std::uint64_t>(in.truth.size());
  double wy = 0.0, wp = 0.0, ws = 0.0;
  for (int d = 0; d < n_draw; ++d) {
    const auto i = uniform_index(rng, n);
    wy += in.weights[i] * in.truth[i];
    wp += in.weights[i] * in.predicted[i];
    ws += in.weights[i];
  }
  return 100.0 * std::abs(wy / ws - wp / ws);
}

BootstrapStats summarize(std::vector<double> pre) {
  BootstrapStats s;
  double sum = 0.0;
  for (double v : pre) sum += v;
  s.mean_pre = sum / static_cast<double>(pre.size());
  double ss = 0.0;
  for (double v : pre) ss += (v - s.mean_pre) * (v - s.mean_pre);
  s.std_pre = std::sqrt(ss / static_cast<double>(pre.size()));
  s.per_iteration = std::move(pre);
  return s;
}

}  // namespace

BootstrapStats bootstrap_serial(const BootstrapInput& in, int n_draw, int iters,
                                std::uint64_t seed) {
  check(in, n_draw, iters);
  std::vector<double> pre(iters);
  for (int it = 0; it < iters; ++it) pre[it] = one_iteration(in, n_draw, seed, it);
  return summarize(std::move(pre));
}

BootstrapStats bootstrap_parallel(const BootstrapInput& in, int n_draw,
                                  int iters, std::uint64_t seed) {
  check(in, n_draw, iters);
  std::vector<double> pre(iters);
#pragma omp parallel for schedule(static)
  for (int it = 0; it < iters; ++it) pre[it] = one_iteration(in, n_draw, seed, it);
  return summarize(std::move(pre));
}

}  // namespace povrate::kernels
