#pragma once

// Hot loops in two flavours: a plain serial reference, kept for testing and
// benchmarking, and an OpenMP version. Both have a fixed reduction order, so
// the OpenMP version returns the same bits for any thread count.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "povrate/imagery.hpp"

namespace povrate::kernels {

// Mean over valid stride-spaced 3x3 windows of ReLU(<window, filter>).
// `filters` is k x 27 in mosaiks flattening order.
std::vector<double> featurize_serial(const imagery::RasterTile& tile,
                                     const Eigen::MatrixXd& filters, int stride);
std::vector<double> featurize_parallel(const imagery::RasterTile& tile,
                                       const Eigen::MatrixXd& filters,
                                       int stride);

struct BootstrapInput {
  std::span<const double> truth;      // y_i (0/1)
  std::span<const double> predicted;  // yhat_i (probability or 0/1)
  std::span<const double> weights;
};

struct BootstrapStats {
  double mean_pre = 0.0;  // percentage points
  double std_pre = 0.0;   // population standard deviation
  std::vector<double> per_iteration;
};

// Each iteration draws `n_draw` rows uniformly with replacement from its
// own substream (seed, iteration).
BootstrapStats bootstrap_serial(const BootstrapInput& in, int n_draw, int iters,
                                std::uint64_t seed);
BootstrapStats bootstrap_parallel(const BootstrapInput& in, int n_draw,
                                  int iters, std::uint64_t seed);

}  // namespace povrate::kernels
