#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "povrate/imagery.hpp"

namespace povrate::mosaiks {

inline constexpr int kPatch = 3;
inline constexpr int kPatchDim = kPatch * kPatch * 3;

using PatchMatrix = Eigen::MatrixXd;  // rows are flattened 3x3x3 patches

// Random 3x3x3 filters after ZCA whitening. Immutable once built: whitening
// is applied to the filters only, never to image windows.
struct FilterBank {
  int k = 0;
  Eigen::MatrixXd filters;    // k x 27
  Eigen::MatrixXd whitening;  // 27 x 27, symmetric
  Eigen::VectorXd mean;       // 27
  std::uint64_t source_seed = 0;

  std::string fingerprint() const;
};

// Filters used as given, with identity whitening. For tests and ablations.
FilterBank bypass_bank(const Eigen::MatrixXd& filters);

struct FeatureMatrix {
  std::vector<std::string> cluster_ids;
  Eigen::MatrixXd values;  // n_clusters x k, all >= 0
  std::string bank_fingerprint;

  // Row of `cluster_id`, or -1.
  Eigen::Index row_of(const std::string& cluster_id) const;
};

// Flattening order: row-major over the 3x3 window with the channel index
// fastest, i.e. offset (dy * 3 + dx) * 3 + c.
inline constexpr int patch_offset(int dx, int dy, int c) {
  return (dy * kPatch + dx) * 3 + c;
}

// Picks min(n_images, tiles.size()) tiles without replacement, then k window
// positions uniformly over valid top-left corners of uniformly chosen
// selected tiles. Pass training-split tiles only.
PatchMatrix sample_patches(std::span<const imagery::RasterTile> tiles,
                           int n_images, int k, std::uint64_t seed);

struct Whitening {
  Eigen::VectorXd mean;
  Eigen::MatrixXd matrix;  // E diag((lambda + eps)^-1/2) E^T
};

// ZCA transform of the rows of `samples` (any dimension). Covariance uses
// the unbiased (n - 1) normalization.
Whitening zca_matrix(const Eigen::MatrixXd& samples, double eps);

FilterBank zca_whiten(const PatchMatrix& patches, double eps = 1e-6,
                      std::uint64_t source_seed = 0);

// Valid-mode 3x3 convolution at `stride`, zero bias, ReLU, mean pooling.
std::vector<double> featurize(const imagery::RasterTile& tile,
                              const FilterBank& bank, int stride = 1);

FeatureMatrix featurize_all(std::span<const imagery::RasterTile> tiles,
                            const FilterBank& bank, int stride = 1);

void save_bank(const FilterBank& bank, const std::filesystem::path& path);
FilterBank load_bank(const std::filesystem::path& path);

// CSV header: cluster_id,f000,f001,...
void save_features_csv(const FeatureMatrix& fm, const std::filesystem::path& path);
FeatureMatrix load_features_csv(const std::filesystem::path& path);

// float64 little-endian payload + JSON sidecar, mirroring the raster format.
void save_features_bin(const FeatureMatrix& fm, const std::filesystem::path& path);
FeatureMatrix load_features_bin(const std::filesystem::path& path);

}  // namespace povrate::mosaiks
