#include <algorithm>
#include <vector>

#include "povrate/error.hpp"
#include "povrate/kernels.hpp"

namespace povrate::kernels {

namespace {

constexpr int kDim = 27;

void check_args(const imagery::RasterTile& tile, const Eigen::MatrixXd& filters,
                int stride) {
  if (tile.width < 3 || tile.height < 3) {
    throw Error(Errc::TileTooSmall, "tile '" + tile.cluster_id + "' is below 3x3");
  }
  if (stride < 1) throw Error(Errc::ConfigError, "stride must be >= 1");
  if (filters.cols() != kDim) {
    throw Error(Errc::ShapeError, "filters must have 27 columns");
  }
}

int positions(int extent, int stride) { return (extent - 3) / stride + 1; }

}  // namespace

std::vector<double> featurize_serial(const imagery::RasterTile& tile,
                                     const Eigen::MatrixXd& filters,
                                     int stride) {
  check_args(tile, filters, stride);
  const auto k = static_cast<int>(filters.rows());
  std::vector<double> sums(k, 0.0);
  const int nx = positions(tile.width, stride);
  const int ny = positions(tile.height, stride);
  for (int f = 0; f < k; ++f) {
    double acc = 0.0;
    for (int py = 0; py < ny; ++py) {
      for (int px = 0; px < nx; ++px) {
        const int x0 = px * stride;
        const int y0 = py * stride;
        double dot = 0.0;
        for (int dy = 0; dy < 3; ++dy)
          for (int dx = 0; dx < 3; ++dx)
            for (int c = 0; c < 3; ++c)
              dot += static_cast<double>(tile.at(x0 + dx, y0 + dy, c)) *
                     filters(f, (dy * 3 + dx) * 3 + c);
        acc += std::max(dot, 0.0);
      }
    }
    sums[f] = acc / (static_cast<double>(nx) * ny);
  }
  return sums;
}

std::vector<double> featurize_parallel(const imagery::RasterTile& tile,
                                       const Eigen::MatrixXd& filters,
                                       int stride) {
  check_args(tile, filters, stride);
  const auto k = static_cast<int>(filters.rows());
  const int nx = positions(tile.width, stride);
  const int ny = positions(tile.height, stride);

  // 27 x k, so the inner loop over filters is contiguous.
  std::vector<double> ft(static_cast<std::size_t>(kDim) * k);
  for (int j = 0; j < kDim; ++j)
    for (int f = 0; f < k; ++f) ft[static_cast<std::size_t>(j) * k + f] = filters(f, j);

  // One partial sum per window row, reduced serially afterwards.
  std::vector<double> row_sums(static_cast<std::size_t>(ny) * k, 0.0);

#pragma omp parallel for schedule(static)
  for (int py = 0; py < ny; ++py) {
    std::vector<double> dots(k);
    double window[kDim];
    double* row = row_sums.data() + static_cast<std::size_t>(py) * k;
    const int y0 = py * stride;
    for (int px = 0; px < nx; ++px) {
      const int x0 = px * stride;
      for (int dy = 0; dy < 3; ++dy) {
        const float* src =
            tile.pixels.data() +
            (static_cast<std::size_t>(y0 + dy) * tile.width + x0) * 3;
        for (int j = 0; j < 9; ++j) window[dy * 9 + j] = src[j];
      }
      std::fill(dots.begin(), dots.end(), 0.0);
      for (int j = 0; j < kDim; ++j) {
        const double v = window[j];
        const double* fcol = ft.data() + static_cast<std::size_t>(j) * k;
        for (int f = 0; f < k; ++f) dots[f] += v * fcol[f];
      }
      for (int f = 0; f < k; ++f) row[f] += std::max(dots[f], 0.0);
    }
  }

  std::vector<double> out(k, 0.0);
  for (int py = 0; py < ny; ++py)
    for (int f = 0; f < k; ++f) out[f] += row_sums[static_cast<std::size_t>(py) * k + f];
  const double count = static_cast<double>(nx) * ny;
  for (auto& v : out) v /= count;
  return out;
}

}  // namespace povrate::kernels
