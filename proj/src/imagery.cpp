#include "povrate/imagery.hpp"

#include <httplib.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <json.hpp>

namespace povrate::imagery {

using nlohmann::json;

RasterTile make_tile(std::string cluster_id, int width, int height,
                     double gsd) {
  RasterTile t;
  t.cluster_id = std::move(cluster_id);
  t.width = width;
  t.height = height;
  t.gsd = gsd;
  t.pixels.assign(static_cast<std::size_t>(width) * height * 3, 0.0f);
  return t;
}

void validate(const RasterTile& tile) {
  if (tile.channels != 3) {
    throw Error(Errc::RasterFormatError,
                "only RGB rasters are supported, got " +
                    std::to_string(tile.channels) + " channels");
  }
  if (tile.width < 3 || tile.height < 3) {
    throw Error(Errc::RasterFormatError, "raster must be at least 3x3");
  }
  if (tile.pixels.size() != static_cast<std::size_t>(tile.width) * tile.height * 3) {
    throw Error(Errc::RasterFormatError, "pixel count does not match size");
  }
  for (float v : tile.pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw Error(Errc::RasterFormatError, "pixel value outside [0,1]");
    }
  }
}

namespace {

void write_f32_le(const std::filesystem::path& path,
                  const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (float v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      char bytes[4] = {static_cast<char>(bits), static_cast<char>(bits >> 8),
                       static_cast<char>(bits >> 16),
                       static_cast<char>(bits >> 24)};
      out.write(bytes, 4);
    }
  }
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

std::vector<float> decode_f32_le(const std::string& bytes) {
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + 4 * i);
    const std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
                               (std::uint32_t(p[2]) << 16) |
                               (std::uint32_t(p[3]) << 24);
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

std::string read_file(const std::filesystem::path& path, Errc errc) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path sidecar_of(const std::filesystem::path& payload) {
  return std::filesystem::path(payload.string() + ".json");
}

}  // namespace

void save_raster(const RasterTile& tile, const std::filesystem::path& path) {
  validate(tile);
  write_f32_le(path, tile.pixels);
  json side = {{"cluster_id", tile.cluster_id},
               {"width", tile.width},
               {"height", tile.height},
               {"channels", tile.channels},
               {"gsd", tile.gsd}};
  std::ofstream out(sidecar_of(path), std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write sidecar for " + path.string());
  out << side.dump(2) << '\n';
}

RasterTile load_raster(const std::filesystem::path& path) {
  RasterTile tile;
  try {
    const auto side = json::parse(read_file(sidecar_of(path), Errc::RasterFormatError));
    tile.cluster_id = side.at("cluster_id").get<std::string>();
    tile.width = side.at("width").get<int>();
    tile.height = side.at("height").get<int>();
    tile.channels = side.at("channels").get<int>();
    tile.gsd = side.at("gsd").get<double>();
  } catch (const json::exception& e) {
    throw Error(Errc::RasterFormatError,
                "corrupt sidecar for " + path.string() + ": " + e.what());
  }
  if (tile.channels != 3) {
    throw Error(Errc::RasterFormatError,
                path.string() + ": only RGB rasters are supported");
  }
  if (tile.width < 3 || tile.height < 3) {
    throw Error(Errc::RasterFormatError, path.string() + ": raster below 3x3");
  }
  const auto bytes = read_file(path, Errc::RasterFormatError);
  const auto expected =
      static_cast<std::size_t>(tile.width) * tile.height * tile.channels * 4;
  if (bytes.size() != expected) {
    throw Error(Errc::RasterFormatError,
                path.string() + ": payload has " + std::to_string(bytes.size()) +
                    " bytes, sidecar implies " + std::to_string(expected));
  }
  tile.pixels = decode_f32_le(bytes);
  validate(tile);
  return tile;
}

std::int64_t parse_iso8601(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0;
  double s = 0.0;
  const int n = std::sscanf(text.c_str(), "%d-%d-%dT%d:%d:%lf", &y, &mo, &d, &h,
                            &mi, &s);
  if (n < 3 || mo < 1 || mo > 12 || d < 1 || d > 31) {
    throw Error(Errc::CatalogParseError, "bad ISO-8601 datetime '" + text + "'");
  }
  using namespace std::chrono;
  const auto days = sys_days(year_month_day(year(y), month(static_cast<unsigned>(mo)),
                                            day(static_cast<unsigned>(d))));
  return days.time_since_epoch().count() * 86400LL + h * 3600LL + mi * 60LL +
         static_cast<std::int64_t>(std::floor(s));
}

namespace {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;  // prefix, no trailing slash
};

Endpoint split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) return {"http://" + url, ""};
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  std::string path = url.substr(slash);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {url.substr(0, slash), path};
}

}  // namespace

std::vector<CatalogItem> parse_catalog_response(const std::string& body) {
  std::vector<CatalogItem> items;
  try {
    const auto doc = json::parse(body);
    const auto& list = doc.is_object() && doc.contains("features")
                           ? doc.at("features")
                           : doc;
    if (!list.is_array()) {
      throw Error(Errc::CatalogParseError, "catalog response is not a list");
    }
    for (const auto& f : list) {
      CatalogItem it;
      it.item_id = f.at("id").get<std::string>();
      it.cloud_cover = f.at("cloud_cover").get<double>();
      it.acquired = f.at("acquired").get<std::string>();
      it.asset_ref = f.at("asset_ref").get<std::string>();
      if (!(it.cloud_cover >= 0.0 && it.cloud_cover <= 100.0)) {
        throw Error(Errc::CatalogParseError,
                    "cloud_cover out of range for item " + it.item_id);
      }
      parse_iso8601(it.acquired);
      items.push_back(std::move(it));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::CatalogParseError, std::string("malformed catalog response: ") + e.what());
  }
  return items;
}

std::vector<CatalogItem> query_catalog(const std::string& endpoint,
                                       const BBox& bbox,
                                       const DateRange& date_range,
                                       const std::string& collection) {
  if (parse_iso8601(date_range.start) > parse_iso8601(date_range.end)) {
    throw Error(Errc::ConfigError, "date range start after end");
  }
  const auto ep = split_url(endpoint);
  httplib::Client client(ep.base);
  client.set_connection_timeout(5);
  client.set_read_timeout(30);
  const json body = {
      {"bbox", {bbox.min_lon, bbox.min_lat, bbox.max_lon, bbox.max_lat}},
      {"datetime", date_range.start + "/" + date_range.end},
      {"collections", {collection}}};
  auto res = client.Post(ep.path + "/search", body.dump(), "application/json");
  if (!res) {
    throw CatalogUnavailable(0, httplib::to_string(res.error()));
  }
  if (res->status != 200) throw CatalogUnavailable(res->status);
  return parse_catalog_response(res->body);
}

CatalogItem select_least_cloudy(const std::vector<CatalogItem>& items) {
  if (items.empty()) throw Error(Errc::NoScenesFound, "no scenes in catalog result");
  auto key = [](const CatalogItem& it) {
    return std::make_tuple(it.cloud_cover, parse_iso8601(it.acquired),
                           std::cref(it.item_id));
  };
  return *std::min_element(items.begin(), items.end(),
                           [&](const auto& a, const auto& b) {
                             return key(a) < key(b);
                           });
}

void save_scene(const Scene& scene, const std::filesystem::path& path) {
  const auto payload = path.filename().string() + ".f32";
  write_f32_le(path.parent_path() / payload, scene.reflectance);
  json desc = {{"item_id", scene.item_id},     {"width", scene.width},
               {"height", scene.height},       {"channels", 3},
               {"gsd", scene.gsd},             {"origin_lon", scene.origin_lon},
               {"origin_lat", scene.origin_lat}, {"full_scale", scene.full_scale},
               {"payload", payload}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << desc.dump(2) << '\n';
}

namespace {

std::string fetch_uri(const std::string& uri) {
  if (uri.rfind("http://", 0) == 0) {
    const auto ep = split_url(uri);
    httplib::Client client(ep.base);
    client.set_connection_timeout(5);
    auto res = client.Get(ep.path);
    if (!res || res->status != 200) {
      throw Error(Errc::AssetFetchError,
                  "GET " + uri + " failed" +
                      (res ? " with status " + std::to_string(res->status) : ""));
    }
    return res->body;
  }
  std::string path = uri.rfind("file://", 0) == 0 ? uri.substr(7) : uri;
  return read_file(path, Errc::AssetFetchError);
}

std::string sibling_uri(const std::string& uri, const std::string& name) {
  const auto slash = uri.rfind('/');
  return slash == std::string::npos ? name : uri.substr(0, slash + 1) + name;
}

}  // namespace

Scene load_scene(const std::string& asset_ref) {
  Scene scene;
  std::string payload;
  try {
    const auto desc = json::parse(fetch_uri(asset_ref));
    scene.item_id = desc.at("item_id").get<std::string>();
    scene.width = desc.at("width").get<int>();
    scene.height = desc.at("height").get<int>();
    scene.gsd = desc.at("gsd").get<double>();
    scene.origin_lon = desc.at("origin_lon").get<double>();
    scene.origin_lat = desc.at("origin_lat").get<double>();
    scene.full_scale = desc.at("full_scale").get<double>();
    payload = desc.at("payload").get<std::string>();
    if (desc.at("channels").get<int>() != 3) {
      throw Error(Errc::AssetFetchError, "scene is not RGB");
    }
  } catch (const json::exception& e) {
    throw Error(Errc::AssetFetchError,
                "bad scene descriptor " + asset_ref + ": " + e.what());
  }
  const auto bytes = fetch_uri(sibling_uri(asset_ref, payload));
  if (bytes.size() != static_cast<std::size_t>(scene.width) * scene.height * 12) {
    throw Error(Errc::AssetFetchError, "scene payload size mismatch for " + asset_ref);
  }
  scene.reflectance = decode_f32_le(bytes);
  return scene;
}

int crop_side_pixels(double size_km, double gsd) {
  const auto side = static_cast<int>(std::lround(size_km * 1000.0 / gsd));
  if (side < 3) {
    throw Error(Errc::ConfigError, "crop must be at least 3 pixels per side");
  }
  return side;
}

Crop crop_scene(const Scene& scene, const std::string& cluster_id,
                LonLat center, double size_km, double gsd) {
  constexpr double kMetersPerDegree = 111320.0;
  const int side = crop_side_pixels(size_km, gsd);
  const double m_lon = kMetersPerDegree * std::cos(center.lat * M_PI / 180.0);
  // scene pixel coordinates of the crop center; pixel k covers [k, k+1)
  const double cx = (center.lon - scene.origin_lon) * m_lon / scene.gsd;
  const double cy = (scene.origin_lat - center.lat) * kMetersPerDegree / scene.gsd;
  const double step = gsd / scene.gsd;

  Crop crop;
  crop.tile = make_tile(cluster_id, side, side, gsd);
  std::size_t padded = 0;
  for (int r = 0; r < side; ++r) {
    const auto sy = static_cast<long>(
        std::floor(cy + (r + 0.5 - 0.5 * side) * step));
    for (int c = 0; c < side; ++c) {
      const auto sx = static_cast<long>(
          std::floor(cx + (c + 0.5 - 0.5 * side) * step));
      if (sx < 0 || sy < 0 || sx >= scene.width || sy >= scene.height) {
        ++padded;
        continue;
      }
      const std::size_t src = (static_cast<std::size_t>(sy) * scene.width + sx) * 3;
      for (int ch = 0; ch < 3; ++ch) {
        const double v = scene.reflectance[src + ch] / scene.full_scale;
        crop.tile.at(c, r, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  crop.pad_fraction =
      static_cast<double>(padded) / (static_cast<double>(side) * side);
  return crop;
}

Crop fetch_crop(const CatalogItem& item, const std::string& cluster_id,
                LonLat center, double size_km, double gsd) {
  return crop_scene(load_scene(item.asset_ref), cluster_id, center, size_km, gsd);
}

struct MockCatalog::Impl {
  httplib::Server server;
  std::thread thread;
  std::mutex mutex;
  std::vector<Entry> entries;
  int fail_status = 0;
  int port = -1;
};

MockCatalog::MockCatalog() : impl_(std::make_unique<Impl>()) {
  impl_->server.Post("/search", [this](const httplib::Request& req,
                                       httplib::Response& res) {
    std::lock_guard lock(impl_->mutex);
    if (impl_->fail_status != 0) {
      res.status = impl_->fail_status;
      res.set_content("{\"error\":\"injected failure\"}", "application/json");
      return;
    }
    json q;
    try {
      q = json::parse(req.body);
    } catch (const json::exception&) {
      res.status = 400;
      return;
    }
    const auto bbox = q.value("bbox", std::vector<double>{-180, -90, 180, 90});
    const auto dt = q.value("datetime", std::string("0001-01-01/9999-12-31"));
    const auto sep = dt.find('/');
    const auto start = parse_iso8601(dt.substr(0, sep));
    const auto end_text = dt.substr(sep + 1);
    auto end = parse_iso8601(end_text);
    if (end_text.find('T') == std::string::npos) end += 86399;  // whole day

    json out = json::array();
    for (const auto& e : impl_->entries) {
      const auto t = parse_iso8601(e.item.acquired);
      const bool in_time = t >= start && t <= end;
      const bool overlaps = bbox.size() == 4 && e.footprint.min_lon <= bbox[2] &&
                            e.footprint.max_lon >= bbox[0] &&
                            e.footprint.min_lat <= bbox[3] &&
                            e.footprint.max_lat >= bbox[1];
      if (in_time && overlaps) {
        out.push_back({{"id", e.item.item_id},
                       {"cloud_cover", e.item.cloud_cover},
                       {"acquired", e.item.acquired},
                       {"asset_ref", e.item.asset_ref}});
      }
    }
    res.set_content(out.dump(), "application/json");
  });
}

MockCatalog::~MockCatalog() { stop(); }

void MockCatalog::add(Entry entry) {
  std::lock_guard lock(impl_->mutex);
  impl_->entries.push_back(std::move(entry));
}

void MockCatalog::fail_with(int status) {
  std::lock_guard lock(impl_->mutex);
  impl_->fail_status = status;
}

void MockCatalog::serve_assets(const std::filesystem::path& root) {
  impl_->server.set_mount_point("/assets", root.string());
}

void MockCatalog::start(int port) {
  if (port > 0) {
    if (!impl_->server.bind_to_port("127.0.0.1", port)) {
      throw Error(Errc::IoError, "cannot bind port " + std::to_string(port));
    }
    impl_->port = port;
  } else {
    impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
  }
  if (impl_->port <= 0) throw Error(Errc::IoError, "cannot bind mock catalog");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void MockCatalog::stop() {
  if (impl_->thread.joinable()) {
    impl_->server.stop();
    impl_->thread.join();
  }
}

int MockCatalog::port() const { return impl_->port; }

std::string MockCatalog::endpoint() const {
  return "http://127.0.0.1:" + std::to_string(impl_->port);
}

}  // namespace povrate::imagery
