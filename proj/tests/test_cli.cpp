#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "povrate/imagery.hpp"
#include "povrate/pipeline.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using povrate::cli::run;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

// Small, fast configuration rooted at `out`.
fs::path small_ini(const fs::path& dir, const fs::path& out, const std::string& paths_extra = "",
                   const std::string& extra = "") {
  const auto p = dir / "small.ini";
  std::ofstream f(p);
  f << "[paths]\nout = " << out.string() << "\n" << paths_extra
    << "[synth]\nn_clusters = 50\ntile_size = 16\n"
    << "[ebm]\ngrid = lean\n"
    << "[mosaiks]\nk = 16\nstride = 1\n"
    << "[eval]\niters = 100\n"
    << "[bench]\nsweep = 0,10\n" << extra;
  return p;
}

const std::vector<std::string> kChain = {"synth",  "ingest", "fetch-imagery", "featurize", "select",
                                         "train", "evaluate", "interpret", "bench"};

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file())
      out[fs::relative(e.path(), root).generic_string()] = povrate::pipeline::read_text(e.path());
  return out;
}

}  // namespace

TEST_CASE("help lists every key with its default") {
  const auto r = invoke({"--help"});
  CHECK(r.code == 0);
  for (const auto& k : povrate::cli::config_keys()) {
    const std::string shown = std::string(k.key) + " = " + (*k.default_value ? k.default_value : "\"\"");
    CHECK_MESSAGE(r.out.find(shown) != std::string::npos, shown);
  }
  CHECK(r.out.find("mosaiks.k = 128") != std::string::npos);
  CHECK(r.out.find("eval.iters = 1000") != std::string::npos);
  CHECK(r.out.find("ebm.cv_folds = 10") != std::string::npos);
}

TEST_CASE("errors are one machine-parsable line") {
  auto one_line = [](const Outcome& r, const std::string& code) {
    CHECK(r.code != 0);
    CHECK(r.err.rfind("error code=" + code + " message=\"", 0) == 0);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  };
  one_line(invoke({"synth", "--set", "nope.key=1"}), "ConfigError");
  one_line(invoke({"synth", "--set", "synth.tile_size=abc"}), "ConfigError");
  one_line(invoke({"frobnicate"}), "ConfigError");
  one_line(invoke({"synth", "--config", "/nonexistent.ini"}), "IoError");
  const auto out = testutil::scratch_dir("cli_errors");
  one_line(invoke({"synth", "--set", "paths.out=" + out.string(), "--set", "synth.tile_size=2"}),
           "ConfigError");
}

TEST_CASE("RunConfig: INI, overrides, hash") {
  const auto dir = testutil::scratch_dir("cli_config");
  std::ofstream(dir / "a.ini") << "[mosaiks]\nk = 64\n[paths]\nout = /x\n";
  povrate::cli::RunConfig a;
  a.merge_ini((dir / "a.ini").string());
  CHECK(a.get_int("mosaiks.k") == 64);
  povrate::cli::RunConfig b;
  b.set("mosaiks.k=64");
  // output location does not change the hash, parameters do
  CHECK(a.hash() == b.hash());
  b.set("run.seed", "3");
  CHECK(a.hash() != b.hash());
  CHECK(a.to_ini().find("out =") == std::string::npos);
  std::ofstream(dir / "bad.ini") << "[mosaiks]\nfilters = 3\n";
  CHECK_ERRC(a.merge_ini((dir / "bad.ini").string()), povrate::Errc::ConfigError);
}

TEST_CASE("dependency rule and mixed hashes") {
  const auto dir = testutil::scratch_dir("cli_deps");
  const auto ini = small_ini(dir, dir / "out").string();
  auto r = invoke({"--config", ini, "evaluate"});
  CHECK(r.code == 2);
  CHECK(r.err.find("code=DependencyMissing") != std::string::npos);

  for (const char* c : {"synth", "ingest", "fetch-imagery", "featurize", "select"})
    REQUIRE(invoke({"--config", ini, c}).code == 0);
  r = invoke({"--config", ini, "evaluate"});
  CHECK(r.err.rfind("error code=DependencyMissing message=\"train:", 0) == 0);

  r = invoke({"--config", ini, "--seed", "5", "bench"});
  CHECK(r.code == 2);
  CHECK(r.err.find("code=ConfigError") != std::string::npos);
  CHECK(r.err.find("mixed config hash") != std::string::npos);
}

TEST_CASE("full chain: artifacts, tables, byte-identical reruns across thread counts") {
  const auto dir = testutil::scratch_dir("cli_chain");
  const auto ini_a = small_ini(dir, dir / "a").string();
  fs::create_directories(dir / "b");
  const auto ini_b = small_ini(dir / "b", dir / "b" / "out").string();
  for (const auto& c : kChain) {
    INFO(c);
    const auto ra = invoke({"--config", ini_a, "--threads", "1", c});
    CHECK_MESSAGE(ra.code == 0, ra.err);
    const auto rb = invoke({"--config", ini_b, "--threads", "3", c});
    CHECK_MESSAGE(rb.code == 0, rb.err);
  }
  const auto a = read_tree(dir / "a");
  const auto b = read_tree(dir / "b" / "out");
  CHECK(a.size() == b.size());
  for (const auto& [name, bytes] : a) {
    INFO(name);
    REQUIRE(b.count(name));
    CHECK(b.at(name) == bytes);
  }

  for (const auto& c : kChain) {
    const auto m = nlohmann::json::parse(a.at(c + "/manifest.json"));
    CHECK(m.at("command") == c);
    CHECK(m.at("config_hash").get<std::string>().size() == 16);
    CHECK(m.at("files").contains("config.ini"));
  }
  for (const char* table : {"evaluate/table1.csv", "bench/table1.csv"}) {
    const auto& t = a.at(table);
    CHECK(std::count(t.begin(), t.end(), '\n') == 7);
    CHECK(t.rfind("selection,inputs,all_mean,all_std,rural_mean,rural_std,urban_mean,urban_std", 0) == 0);
  }
  CHECK(a.count("select/standard.json"));
  CHECK(a.count("select/survey_guided.json"));
  CHECK(a.count("select/survey_image_guided.json"));
  CHECK(a.count("train/survey_image_guided__survey_image.json"));
  CHECK(a.count("interpret/pca.json"));
  CHECK(a.count("bench/fig3.csv"));
}

TEST_CASE("fetch-imagery against the mock catalog") {
  using namespace povrate::imagery;
  const auto dir = testutil::scratch_dir("cli_catalog");
  // one config for the whole chain; the catalog location itself is not hashed
  const auto ini = small_ini(dir, dir / "out", "clusters = " + (dir / "clusters.csv").string() + "\n",
                             "[imagery]\nsize_km = 0.16\n")
                       .string();
  REQUIRE(invoke({"--config", ini, "synth"}).code == 0);
  REQUIRE(invoke({"--config", ini, "ingest"}).code == 0);

  Scene scene;
  scene.item_id = "clear";
  scene.width = scene.height = 300;
  scene.origin_lon = 38.0;
  scene.origin_lat = 9.0;
  scene.reflectance.resize(300 * 300 * 3);
  auto rng = povrate::make_rng(1, 0);
  for (auto& v : scene.reflectance) v = static_cast<float>(10000.0 * povrate::uniform01(rng));
  save_scene(scene, dir / "scene.json");

  MockCatalog mock;
  mock.serve_assets(dir);
  mock.start();
  const BBox footprint{37.9, 8.9, 38.1, 9.1};
  mock.add({{"cloudy", 40.0, "2016-03-01", mock.endpoint() + "/assets/scene.json"}, footprint});
  mock.add({{"clear", 5.0, "2016-06-01", mock.endpoint() + "/assets/scene.json"}, footprint});
  mock.add({{"old", 0.0, "2014-06-01", mock.endpoint() + "/assets/scene.json"}, footprint});

  // cluster centers well inside the scene
  std::ofstream coords(dir / "clusters.csv");
  coords << "cluster_id,lon,lat\n";
  for (int k = 0; k < 50; ++k) {
    char cid[8];
    std::snprintf(cid, sizeof(cid), "C%04d", k);
    coords << cid << "," << 38.005 + 0.0003 * (k % 10) << "," << 8.985 + 0.0003 * (k / 10) << "\n";
  }
  coords.close();

  const std::vector<std::string> common = {"--config", ini};
  auto args = common;
  args.insert(args.end(), {"--catalog-endpoint", mock.endpoint(), "fetch-imagery"});
  auto r = invoke(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto tile = load_raster(dir / "out" / "fetch-imagery" / "tiles" / "C0007.f32");
  CHECK(tile.width == 16);
  CHECK(tile.height == 16);
  for (float v : tile.pixels) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  const auto items = povrate::pipeline::read_text(dir / "out" / "fetch-imagery" / "items.csv");
  CHECK(items.find("C0000,clear,5,2016-06-01,0") != std::string::npos);
  CHECK(items.find("cloudy") == std::string::npos);
  const auto first = read_tree(dir / "out" / "fetch-imagery");

  // the same endpoint through the environment gives the same bytes
  setenv("POVRATE_CATALOG_URL", mock.endpoint().c_str(), 1);
  args = common;
  args.push_back("fetch-imagery");
  r = invoke(args);
  unsetenv("POVRATE_CATALOG_URL");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(read_tree(dir / "out" / "fetch-imagery") == first);

  // featurize runs on the fetched tiles
  r = invoke({"--config", ini, "featurize"});
  CHECK_MESSAGE(r.code == 0, r.err);

  mock.fail_with(503);
  args = common;
  args.insert(args.end(), {"--catalog-endpoint", mock.endpoint(), "fetch-imagery"});
  r = invoke(args);
  CHECK(r.err.rfind("error code=CatalogUnavailable", 0) == 0);
}
