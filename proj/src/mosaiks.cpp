#include "povrate/mosaiks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "csv.hpp"
#include "povrate/error.hpp"
#include "povrate/hash.hpp"
#include "povrate/kernels.hpp"
#include "povrate/random.hpp"

namespace povrate::mosaiks {

using nlohmann::json;

std::string FilterBank::fingerprint() const {
  Fnv1a h;
  h.update_value(static_cast<std::int64_t>(k));
  h.update_value(source_seed);
  for (Eigen::Index i = 0; i < filters.rows(); ++i)
    for (Eigen::Index j = 0; j < filters.cols(); ++j) h.update_value(filters(i, j));
  return h.hex();
}

FilterBank bypass_bank(const Eigen::MatrixXd& filters) {
  if (filters.cols() != kPatchDim || filters.rows() < 1) {
    throw Error(Errc::ShapeError, "filters must be k x 27 with k >= 1");
  }
  FilterBank bank;
  bank.k = static_cast<int>(filters.rows());
  bank.filters = filters;
  bank.whitening = Eigen::MatrixXd::Identity(kPatchDim, kPatchDim);
  bank.mean = Eigen::VectorXd::Zero(kPatchDim);
  return bank;
}

Eigen::Index FeatureMatrix::row_of(const std::string& cluster_id) const {
  auto it = std::find(cluster_ids.begin(), cluster_ids.end(), cluster_id);
  return it == cluster_ids.end() ? -1 : it - cluster_ids.begin();
}

PatchMatrix sample_patches(std::span<const imagery::RasterTile> tiles,
                           int n_images, int k, std::uint64_t seed) {
  if (tiles.empty()) throw Error(Errc::EmptyGroup, "no tiles to sample patches from");
  if (k < 1 || n_images < 1) {
    throw Error(Errc::ConfigError, "k and n_images must be positive");
  }
  for (const auto& t : tiles) {
    if (t.width < kPatch || t.height < kPatch) {
      throw Error(Errc::TileTooSmall,
                  "tile '" + t.cluster_id + "' is smaller than the patch");
    }
  }

  auto rng = make_rng(seed, 0);
  std::vector<std::size_t> order(tiles.size());
  std::iota(order.begin(), order.end(), 0);
  const auto chosen = std::min<std::size_t>(static_cast<std::size_t>(n_images),
                                            tiles.size());
  // partial Fisher-Yates: first `chosen` entries are a uniform subset
  for (std::size_t i = 0; i < chosen; ++i) {
    const auto j = i + uniform_index(rng, order.size() - i);
    std::swap(order[i], order[j]);
  }

  PatchMatrix patches(k, kPatchDim);
  for (int p = 0; p < k; ++p) {
    const auto& tile = tiles[order[uniform_index(rng, chosen)]];
    const auto x0 = static_cast<int>(uniform_index(rng, tile.width - kPatch + 1));
    const auto y0 = static_cast<int>(uniform_index(rng, tile.height - kPatch + 1));
    for (int dy = 0; dy < kPatch; ++dy)
      for (int dx = 0; dx < kPatch; ++dx)
        for (int c = 0; c < 3; ++c)
          patches(p, patch_offset(dx, dy, c)) = tile.at(x0 + dx, y0 + dy, c);
  }
  return patches;
}

Whitening zca_matrix(const Eigen::MatrixXd& samples, double eps) {
  if (samples.rows() < 2) {
    throw Error(Errc::NumericalError, "whitening needs at least 2 samples");
  }
  if (!samples.allFinite()) {
    throw Error(Errc::NumericalError, "non-finite values in whitening input");
  }
  Whitening z;
  z.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - z.mean.transpose();
  Eigen::MatrixXd cov = (centered.transpose() * centered) /
                        static_cast<double>(samples.rows() - 1);
  cov = 0.5 * (cov + cov.transpose());
  if (cov.trace() <= 0.0) {
    throw Error(Errc::NumericalError, "patches have zero variance");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) {
    throw Error(Errc::NumericalError, "eigendecomposition failed");
  }
  // clamp tiny negative eigenvalues from round-off
  const Eigen::VectorXd lambda = eig.eigenvalues().cwiseMax(0.0);
  if (eps <= 0.0 && lambda.minCoeff() <= 0.0) {
    throw Error(Errc::NumericalError, "singular covariance with eps = 0");
  }
  const Eigen::VectorXd scale = (lambda.array() + eps).rsqrt().matrix();
  const auto& e = eig.eigenvectors();
  z.matrix = e * scale.asDiagonal() * e.transpose();
  z.matrix = 0.5 * (z.matrix + z.matrix.transpose());
  if (!z.matrix.allFinite()) {
    throw Error(Errc::NumericalError, "non-finite whitening matrix");
  }
  return z;
}

FilterBank zca_whiten(const PatchMatrix& patches, double eps,
                      std::uint64_t source_seed) {
  if (patches.cols() != kPatchDim) {
    throw Error(Errc::ShapeError, "patches must have 27 columns");
  }
  const auto z = zca_matrix(patches, eps);
  FilterBank bank;
  bank.k = static_cast<int>(patches.rows());
  bank.mean = z.mean;
  bank.whitening = z.matrix;
  bank.filters = (patches.rowwise() - z.mean.transpose()) * z.matrix;
  bank.source_seed = source_seed;
  return bank;
}

std::vector<double> featurize(const imagery::RasterTile& tile,
                              const FilterBank& bank, int stride) {
  return kernels::featurize_parallel(tile, bank.filters, stride);
}

FeatureMatrix featurize_all(std::span<const imagery::RasterTile> tiles,
                            const FilterBank& bank, int stride) {
  std::unordered_set<std::string> seen;
  for (const auto& t : tiles) {
    if (!seen.insert(t.cluster_id).second) {
      throw Error(Errc::DuplicateCluster, "duplicate cluster '" + t.cluster_id + "'");
    }
    if (t.width < kPatch || t.height < kPatch) {
      throw Error(Errc::TileTooSmall, "tile '" + t.cluster_id + "' is below 3x3");
    }
  }
  if (stride < 1) throw Error(Errc::ConfigError, "stride must be >= 1");

  FeatureMatrix fm;
  fm.bank_fingerprint = bank.fingerprint();
  fm.values.resize(static_cast<Eigen::Index>(tiles.size()), bank.k);
  for (const auto& t : tiles) fm.cluster_ids.push_back(t.cluster_id);

  const auto n = static_cast<std::ptrdiff_t>(tiles.size());
  // Tiles in parallel; each tile is reduced in a fixed order, so the result
  // does not depend on the schedule. A nested region inside
  // featurize_parallel runs single-threaded.
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto row = kernels::featurize_parallel(tiles[i], bank.filters, stride);
    for (int f = 0; f < bank.k; ++f) fm.values(i, f) = row[f];
  }
  return fm;
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto m = n ? static_cast<Eigen::Index>(rows[0].size()) : 0;
  Eigen::MatrixXd out(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != m) {
      throw Error(Errc::ShapeError, "ragged matrix in JSON");
    }
    for (Eigen::Index j = 0; j < m; ++j) out(i, j) = rows[i][j].get<double>();
  }
  return out;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void save_bank(const FilterBank& bank, const std::filesystem::path& path) {
  json j = {{"seed", bank.source_seed},
            {"k", bank.k},
            {"mean", std::vector<double>(bank.mean.data(), bank.mean.data() + bank.mean.size())},
            {"whitening", matrix_to_json(bank.whitening)},
            {"filters", matrix_to_json(bank.filters)},
            {"fingerprint", bank.fingerprint()}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << j.dump() << '\n';
}

FilterBank load_bank(const std::filesystem::path& path) {
  try {
    const auto j = json::parse(slurp(path));
    FilterBank bank;
    bank.source_seed = j.at("seed").get<std::uint64_t>();
    bank.k = j.at("k").get<int>();
    const auto mean = j.at("mean").get<std::vector<double>>();
    bank.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(),
                                                  static_cast<Eigen::Index>(mean.size()));
    bank.whitening = matrix_from_json(j.at("whitening"));
    bank.filters = matrix_from_json(j.at("filters"));
    if (bank.filters.rows() != bank.k || bank.filters.cols() != kPatchDim ||
        bank.whitening.rows() != kPatchDim || bank.whitening.cols() != kPatchDim ||
        bank.mean.size() != kPatchDim) {
      throw Error(Errc::ShapeError, path.string() + ": filter bank shape mismatch");
    }
    return bank;
  } catch (const json::exception& e) {
    throw Error(Errc::IoError, path.string() + ": " + e.what());
  }
}

namespace {

std::string feature_name(int f) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "f%03d", f);
  return buf;
}

}  // namespace

void save_features_csv(const FeatureMatrix& fm, const std::filesystem::path& path) {
  csv::Table t;
  t.header.push_back("cluster_id");
  for (Eigen::Index f = 0; f < fm.values.cols(); ++f)
    t.header.push_back(feature_name(static_cast<int>(f)));
  for (std::size_t i = 0; i < fm.cluster_ids.size(); ++i) {
    std::vector<std::string> row = {fm.cluster_ids[i]};
    for (Eigen::Index f = 0; f < fm.values.cols(); ++f)
      row.push_back(csv::format_double(fm.values(static_cast<Eigen::Index>(i), f)));
    t.rows.push_back(std::move(row));
  }
  csv::write(path, t);
  // The fingerprint travels in a sidecar so the CSV stays a plain table.
  std::ofstream side(path.string() + ".json", std::ios::binary | std::ios::trunc);
  side << json{{"bank_fingerprint", fm.bank_fingerprint}}.dump() << '\n';
}

FeatureMatrix load_features_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  if (t.header.empty() || t.header[0] != "cluster_id") {
    throw Error(Errc::IoError, path.string() + ": first column must be cluster_id");
  }
  FeatureMatrix fm;
  const auto k = static_cast<Eigen::Index>(t.header.size() - 1);
  fm.values.resize(static_cast<Eigen::Index>(t.rows.size()), k);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    fm.cluster_ids.push_back(t.rows[i][0]);
    for (Eigen::Index f = 0; f < k; ++f)
      fm.values(static_cast<Eigen::Index>(i), f) = csv::parse_double(t.rows[i][f + 1]);
  }
  const auto side = path.string() + ".json";
  if (std::filesystem::exists(side)) {
    fm.bank_fingerprint = json::parse(slurp(side)).value("bank_fingerprint", "");
  }
  return fm;
}

void save_features_bin(const FeatureMatrix& fm, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  for (Eigen::Index i = 0; i < fm.values.rows(); ++i) {
    for (Eigen::Index f = 0; f < fm.values.cols(); ++f) {
      const auto bits = std::bit_cast<std::uint64_t>(fm.values(i, f));
      char bytes[8];
      for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>(bits >> (8 * b));
      out.write(bytes, 8);
    }
  }
  json side = {{"cluster_ids", fm.cluster_ids},
               {"rows", fm.values.rows()},
               {"cols", fm.values.cols()},
               {"bank_fingerprint", fm.bank_fingerprint}};
  std::ofstream s(path.string() + ".json", std::ios::binary | std::ios::trunc);
  s << side.dump() << '\n';
}

FeatureMatrix load_features_bin(const std::filesystem::path& path) {
  FeatureMatrix fm;
  try {
    const auto side = json::parse(slurp(path.string() + ".json"));
    fm.cluster_ids = side.at("cluster_ids").get<std::vector<std::string>>();
    fm.bank_fingerprint = side.at("bank_fingerprint").get<std::string>();
    const auto rows = side.at("rows").get<Eigen::Index>();
    const auto cols = side.at("cols").get<Eigen::Index>();
    const auto bytes = slurp(path);
    if (rows != static_cast<Eigen::Index>(fm.cluster_ids.size()) ||
        bytes.size() != static_cast<std::size_t>(rows * cols * 8)) {
      throw Error(Errc::RasterFormatError, path.string() + ": size mismatch");
    }
    fm.values.resize(rows, cols);
    std::size_t off = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index f = 0; f < cols; ++f) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
          bits |= std::uint64_t(static_cast<unsigned char>(bytes[off++])) << (8 * b);
        fm.values(i, f) = std::bit_cast<double>(bits);
      }
  } catch (const json::exception& e) {
    throw Error(Errc::RasterFormatError, path.string() + ": " + e.what());
  }
  return fm;
}

}  // namespace povrate::mosaiks
