#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "povrate/error.hpp"

namespace povrate::imagery {

// RGB crop for one cluster. Pixels are row-major with the channel index
// fastest: pixel(x, y, c) = pixels[(y * width + x) * 3 + c], all in [0,1].
struct RasterTile {
  std::string cluster_id;
  int width = 0;
  int height = 0;
  int channels = 3;
  double gsd = 10.0;
  std::vector<float> pixels;

  float at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  float& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  bool operator==(const RasterTile&) const = default;
};

RasterTile make_tile(std::string cluster_id, int width, int height,
                     double gsd = 10.0);

// Throws RasterFormatError if the tile violates its invariants.
void validate(const RasterTile& tile);

// Writes the float32 little-endian payload to `path` and a JSON sidecar with
// keys {cluster_id, width, height, channels, gsd} to `path` + ".json".
void save_raster(const RasterTile& tile, const std::filesystem::path& path);
RasterTile load_raster(const std::filesystem::path& path);

struct CatalogItem {
  std::string item_id;
  double cloud_cover = 0.0;  // percent
  std::string acquired;      // ISO-8601
  std::string asset_ref;     // file:// or http:// URI of a scene descriptor
};

struct BBox {
  double min_lon, min_lat, max_lon, max_lat;
};

struct DateRange {
  std::string start;
  std::string end;
};

class CatalogUnavailable : public Error {
 public:
  explicit CatalogUnavailable(int status, const std::string& detail = {})
      : Error(Errc::CatalogUnavailable,
              "CatalogUnavailable(" + std::to_string(status) + ")" +
                  (detail.empty() ? "" : ": " + detail)),
        status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

// Seconds since the Unix epoch; accepts YYYY-MM-DD[THH:MM[:SS[.fff]]][Z].
std::int64_t parse_iso8601(const std::string& text);

// POST <endpoint>/search {bbox, datetime: "start/end", collections: [..]}.
std::vector<CatalogItem> query_catalog(const std::string& endpoint,
                                       const BBox& bbox,
                                       const DateRange& date_range,
                                       const std::string& collection);

std::vector<CatalogItem> parse_catalog_response(const std::string& body);

// Least cloud cover; ties go to the earliest acquisition, then item_id.
CatalogItem select_least_cloudy(const std::vector<CatalogItem>& items);

// Full scene behind a catalog asset: raw reflectance, georeferenced by the
// lon/lat of its top-left corner.
struct Scene {
  std::string item_id;
  int width = 0;
  int height = 0;
  double gsd = 10.0;
  double origin_lon = 0.0;
  double origin_lat = 0.0;
  double full_scale = 10000.0;
  std::vector<float> reflectance;  // width * height * 3, channel fastest
};

// Descriptor JSON at `path` plus payload `payload` (relative to it).
void save_scene(const Scene& scene, const std::filesystem::path& path);
Scene load_scene(const std::string& asset_ref);

struct LonLat {
  double lon;
  double lat;
};

struct Crop {
  RasterTile tile;
  double pad_fraction = 0.0;
};

int crop_side_pixels(double size_km, double gsd);

Crop crop_scene(const Scene& scene, const std::string& cluster_id,
                LonLat center, double size_km = 10.0, double gsd = 10.0);

Crop fetch_crop(const CatalogItem& item, const std::string& cluster_id,
                LonLat center, double size_km = 10.0, double gsd = 10.0);

// Minimal STAC-like search server for tests and offline demos. Items are
// filtered by bbox intersection and acquisition date.
class MockCatalog {
 public:
  struct Entry {
    CatalogItem item;
    BBox footprint;
  };

  MockCatalog();
  ~MockCatalog();
  MockCatalog(const MockCatalog&) = delete;
  MockCatalog& operator=(const MockCatalog&) = delete;

  void add(Entry entry);
  // Subsequent searches fail with this HTTP status (0 = healthy).
  void fail_with(int status);
  // Serve files below `root` at GET /assets/<relative path>.
  void serve_assets(const std::filesystem::path& root);

  // Starts listening on 127.0.0.1 at an ephemeral port (or `port`).
  void start(int port = 0);
  void stop();
  int port() const;
  std::string endpoint() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace povrate::imagery
