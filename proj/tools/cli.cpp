#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>
#include <omp.h>

#include "csv.hpp"
#include "povrate/data_model.hpp"
#include "povrate/ebm.hpp"
#include "povrate/error.hpp"
#include "povrate/hash.hpp"
#include "povrate/imagery.hpp"
#include "povrate/mosaiks.hpp"
#include "povrate/pipeline.hpp"
#include "povrate/selection.hpp"
#include "povrate/synthbench.hpp"

namespace povrate::cli {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys = {
      {"run.seed", "0", "master seed for every stochastic step"},
      {"paths.out", "povrate_out", "artifact root; each command writes <out>/<command>/"},
      {"paths.survey", "", "survey CSV; empty uses the synth world"},
      {"paths.qmap", "", "variable -> question CSV; required with paths.survey"},
      {"paths.raster_dir", "", "directory of <cluster>.f32 tiles"},
      {"paths.clusters", "", "cluster_id,lon,lat CSV for catalog fetches"},
      {"paths.catalog_endpoint", "", "catalog URL (or --catalog-endpoint / POVRATE_CATALOG_URL)"},
      {"data.poverty_line", "3.0", "expenditure threshold for the poverty indicator"},
      {"data.train_frac", "0.68", "stratified train fraction"},
      {"imagery.collection", "sentinel-2-l2a", "catalog collection"},
      {"imagery.start", "2016-01-01", "acquisition window start"},
      {"imagery.end", "2016-12-31", "acquisition window end"},
      {"imagery.size_km", "10", "crop side in km"},
      {"imagery.gsd", "10", "ground sample distance in m"},
      {"mosaiks.k", "128", "number of random filters"},
      {"mosaiks.n_images", "20", "training images sampled for patches"},
      {"mosaiks.stride", "4", "convolution stride"},
      {"mosaiks.zca_eps", "1e-6", "ZCA regularizer"},
      {"ebm.grid", "full", "full (27-point grid) or lean (single fast config)"},
      {"ebm.cv_folds", "10", "cross-validation folds"},
      {"selection.method", "all", "all, standard, survey_guided or survey_image_guided"},
      {"selection.n_questions", "10", "question budget"},
      {"selection.exclude", "auto", "variables dropped under image guidance; auto = region variable, none = nothing"},
      {"selection.standard_questions", "auto", "baseline question ids; auto = from the synth world"},
      {"eval.n_draw", "100", "households per bootstrap draw"},
      {"eval.iters", "1000", "bootstrap iterations"},
      {"eval.mode", "soft", "soft (mean probability) or hard (thresholded)"},
      {"eval.threshold", "0.5", "hard-mode threshold"},
      {"synth.n_clusters", "500", "synthetic clusters"},
      {"synth.households_per_cluster", "10", "households per cluster"},
      {"synth.n_questions", "40", "survey questions"},
      {"synth.tile_size", "256", "tile side in pixels"},
      {"synth.target_rate", "0.3", "expected national poverty rate"},
      {"synth.urban_effect_y", "-6", "poverty log-odds per unit urbanization"},
      {"synth.urban_effect_texture", "0.25", "texture amplitude per unit urbanization"},
      {"synth.household_signal", "2", "largest household-question coefficient"},
      {"synth.weight_sigma", "0.5", "log-normal weight spread"},
      {"synth.perfect_information", "false", "label equals one household question"},
      {"bench.sweep", "0,10,20,30,40,50", "question counts for the r2/PRE curve"},
      {"bench.region_probe", "true", "rank the region variable under image guidance"},
  };
  return keys;
}

namespace {

[[noreturn]] void config_error(const std::string& m) { throw Error(Errc::ConfigError, m); }

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

const std::set<std::string> kLocationKeys = {"paths.out", "paths.catalog_endpoint"};

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.key] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) config_error("unknown config key " + key);
  it->second = trim(value);
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) config_error("--set expects key=value, got " + assignment);
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void RunConfig::merge_ini(const std::string& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(Errc::ConfigError, std::string("cannot read config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) config_error("config key outside a section: " + section);
    for (const auto& [key, node] : body) set(section + "." + key, node.data());
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) config_error("unknown config key " + key);
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  try {
    return csv::parse_double(get(key));
  } catch (const Error&) {
    config_error(key + " must be a number, got '" + get(key) + "'");
  }
}

int RunConfig::get_int(const std::string& key) const {
  const auto& v = get(key);
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    config_error(key + " must be an integer, got '" + v + "'");
  return out;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const auto& v = get(key);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    config_error(key + " must be a non-negative integer, got '" + v + "'");
  return out;
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  config_error(key + " must be true or false, got '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

std::string RunConfig::hash() const {
  Fnv1a h;
  for (const auto& [k, v] : values_)
    if (!kLocationKeys.count(k)) h.update(k).update("=").update(v).update("\n");
  return h.hex();
}

std::string RunConfig::to_ini() const {
  std::string out = "; config_hash = " + hash() + "\n";
  std::string section;
  for (const auto& [k, v] : values_) {
    if (kLocationKeys.count(k)) continue;
    const auto dot = k.find('.');
    if (k.substr(0, dot) != section) {
      section = k.substr(0, dot);
      out += "[" + section + "]\n";
    }
    out += k.substr(dot + 1) + " = " + v + "\n";
  }
  return out;
}

namespace {

// ---------------------------------------------------------------- artifacts

std::string file_digest(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + p.string());
  Fnv1a h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

class Context {
 public:
  Context(RunConfig cfg, std::string command)
      : cfg_(std::move(cfg)), command_(std::move(command)), root_(cfg_.get("paths.out")) {}

  const RunConfig& cfg() const { return cfg_; }
  std::uint64_t seed() const { return cfg_.get_u64("run.seed"); }
  fs::path dir(const std::string& command) const { return root_ / command; }
  fs::path own() const { return dir(command_); }

  // Fresh output directory for this command.
  void begin() {
    fs::remove_all(own());
    fs::create_directories(own());
  }

  // Upstream artifact directory; its manifest must exist and share our hash.
  fs::path require(const std::string& command) {
    const auto manifest = dir(command) / "manifest.json";
    if (!fs::exists(manifest))
      throw Error(Errc::DependencyMissing,
                  command + ": " + manifest.string() + " not found; run 'povrate " + command + "' first");
    const auto j = json::parse(pipeline::read_text(manifest));
    const auto theirs = j.at("config_hash").get<std::string>();
    if (theirs != cfg_.hash())
      config_error("mixed config hash: " + command + " artifacts have " + theirs +
                   ", current config is " + cfg_.hash() + "; rerun 'povrate " + command + "'");
    upstream_[command] = theirs;
    return dir(command);
  }

  bool has(const std::string& command) const {
    return fs::exists(dir(command) / "manifest.json");
  }

  void finish() {
    pipeline::write_text(own() / "config.ini", cfg_.to_ini());
    json files = json::object();
    std::vector<fs::path> paths;
    for (const auto& e : fs::recursive_directory_iterator(own()))
      if (e.is_regular_file() && e.path().filename() != "manifest.json") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) files[fs::relative(p, own()).generic_string()] = file_digest(p);
    json m = {{"command", command_},
              {"config_hash", cfg_.hash()},
              {"seed", seed()},
              {"upstream", upstream_},
              {"files", files}};
    pipeline::write_text(own() / "manifest.json", m.dump(2) + "\n");
  }

 private:
  RunConfig cfg_;
  std::string command_;
  fs::path root_;
  json upstream_ = json::object();
};

// --------------------------------------------------------- shared loaders

struct Ingested {
  data::SurveyDataset survey;
  data::SurveyDataset train;
  data::SurveyDataset test;
  std::optional<std::string> region_variable;
  std::vector<std::string> standard_questions;
};

Ingested load_ingested(Context& ctx) {
  const auto d = ctx.require("ingest");
  Ingested in;
  in.survey = data::load_survey(d / "survey.csv", d / "qmap.csv",
                                ctx.cfg().get_double("data.poverty_line"));
  const auto split = json::parse(pipeline::read_text(d / "split.json"));
  const auto train_ids = split.at("train_ids").get<std::vector<std::string>>();
  const auto test_ids = split.at("test_ids").get<std::vector<std::string>>();
  in.train = in.survey.subset_by_ids(train_ids);
  in.test = in.survey.subset_by_ids(test_ids);
  const auto meta = json::parse(pipeline::read_text(d / "meta.json"));
  if (!meta.at("region_variable").is_null())
    in.region_variable = meta.at("region_variable").get<std::string>();
  in.standard_questions = meta.at("standard_questions").get<std::vector<std::string>>();
  return in;
}

std::vector<std::string> cluster_order(const data::SurveyDataset& ds) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& h : ds.households())
    if (seen.insert(h.cluster_id).second) out.push_back(h.cluster_id);
  return out;
}

mosaiks::FeatureMatrix load_features(Context& ctx) {
  return mosaiks::load_features_csv(ctx.require("featurize") / "features.csv");
}

std::vector<ebm::TrainConfig> grid_of(const RunConfig& cfg) {
  const auto& g = cfg.get("ebm.grid");
  if (g == "full") return ebm::full_grid();
  if (g == "lean") return {synth::lean_config()};
  config_error("ebm.grid must be full or lean, got '" + g + "'");
}

pipeline::BootstrapSpec bootstrap_spec(const Context& ctx) {
  pipeline::BootstrapSpec spec;
  spec.n_draw = ctx.cfg().get_int("eval.n_draw");
  spec.iters = ctx.cfg().get_int("eval.iters");
  spec.seed = ctx.seed();
  spec.mode = pipeline::parse_mode(ctx.cfg().get("eval.mode"));
  spec.threshold = ctx.cfg().get_double("eval.threshold");
  return spec;
}

synth::SynthConfig synth_config(const Context& ctx) {
  const auto& c = ctx.cfg();
  synth::SynthConfig s;
  s.seed = ctx.seed();
  s.n_clusters = c.get_int("synth.n_clusters");
  s.households_per_cluster = c.get_int("synth.households_per_cluster");
  s.n_questions = c.get_int("synth.n_questions");
  s.tile_size = c.get_int("synth.tile_size");
  s.target_rate = c.get_double("synth.target_rate");
  s.poverty_line = c.get_double("data.poverty_line");
  s.urban_effect_y = c.get_double("synth.urban_effect_y");
  s.urban_effect_texture = c.get_double("synth.urban_effect_texture");
  s.household_signal = c.get_double("synth.household_signal");
  s.weight_sigma = c.get_double("synth.weight_sigma");
  s.perfect_information = c.get_bool("synth.perfect_information");
  return s;
}

std::string model_file(const std::string& method, bool images) {
  return method + (images ? "__survey_image.json" : "__survey.json");
}

// ---------------------------------------------------------------- commands

void cmd_synth(Context& ctx) {
  const auto world = synth::generate(synth_config(ctx));
  ctx.begin();
  synth::save_world(world, ctx.own());
}

void cmd_ingest(Context& ctx) {
  const auto& c = ctx.cfg();
  fs::path survey_csv = c.get("paths.survey");
  fs::path qmap_csv = c.get("paths.qmap");
  json meta = {{"region_variable", nullptr}, {"standard_questions", json::array()}};
  if (survey_csv.empty()) {
    const auto d = ctx.require("synth");
    survey_csv = d / "survey.csv";
    qmap_csv = d / "qmap.csv";
    const auto world = json::parse(pipeline::read_text(d / "world.json"));
    meta["region_variable"] = world.at("region_variable");
    meta["standard_questions"] = world.at("standard_questions");
  } else if (qmap_csv.empty()) {
    config_error("paths.qmap is required with paths.survey");
  }
  for (const auto& p : {survey_csv, qmap_csv})
    if (!fs::exists(p)) throw Error(Errc::IoError, "no such file " + p.string());
  const auto ds = data::load_survey(survey_csv, qmap_csv, c.get_double("data.poverty_line"));
  const auto split = data::stratified_split(ds, c.get_double("data.train_frac"), ctx.seed());

  ctx.begin();
  data::save_survey(ds, ctx.own() / "survey.csv");
  data::save_question_map(ds.question_map(), ds.variable_names(), ctx.own() / "qmap.csv");
  json s = {{"train_ids", split.train_ids},
            {"test_ids", split.test_ids},
            {"train_rate", split.train_rate},
            {"test_rate", split.test_rate},
            {"national_rate", split.national_rate}};
  pipeline::write_text(ctx.own() / "split.json", s.dump(2) + "\n");
  pipeline::write_text(ctx.own() / "meta.json", meta.dump(2) + "\n");
}

void cmd_fetch_imagery(Context& ctx, const std::string& endpoint) {
  const auto& c = ctx.cfg();
  const auto in = load_ingested(ctx);
  const auto clusters = cluster_order(in.survey);
  const double size_km = c.get_double("imagery.size_km");
  const double gsd = c.get_double("imagery.gsd");
  std::vector<imagery::RasterTile> tiles;
  csv::Table items{{"cluster_id", "item_id", "cloud_cover", "acquired", "pad_fraction"}, {}};

  if (!endpoint.empty()) {
    const fs::path coords = c.get("paths.clusters");
    if (coords.empty()) config_error("paths.clusters is required for catalog fetches");
    const auto table = csv::read(coords);
    std::map<std::string, imagery::LonLat> where;
    for (const auto& row : table.rows) {
      if (row.size() < 3) config_error("paths.clusters rows need cluster_id,lon,lat");
      where[row[0]] = {csv::parse_double(row[1]), csv::parse_double(row[2])};
    }
    // half the crop side, in degrees at the equator
    const double half = size_km / 2.0 / 111.32;
    for (const auto& cid : clusters) {
      const auto it = where.find(cid);
      if (it == where.end()) throw Error(Errc::IoError, "no coordinates for cluster " + cid);
      const auto [lon, lat] = it->second;
      const auto found = imagery::query_catalog(
          endpoint, {lon - half, lat - half, lon + half, lat + half},
          {c.get("imagery.start"), c.get("imagery.end")}, c.get("imagery.collection"));
      const auto best = imagery::select_least_cloudy(found);
      auto crop = imagery::fetch_crop(best, cid, it->second, size_km, gsd);
      items.rows.push_back({cid, best.item_id, csv::format_double(best.cloud_cover),
                            best.acquired, csv::format_double(crop.pad_fraction)});
      tiles.push_back(std::move(crop.tile));
    }
  } else {
    fs::path source = c.get("paths.raster_dir");
    if (source.empty()) source = ctx.require("synth") / "tiles";
    for (const auto& cid : clusters) {
      const auto p = source / (cid + ".f32");
      if (!fs::exists(p)) throw Error(Errc::IoError, "no tile for cluster " + cid + " at " + p.string());
      tiles.push_back(imagery::load_raster(p));
      if (tiles.back().cluster_id != cid)
        throw Error(Errc::RasterFormatError, p.string() + " holds cluster " + tiles.back().cluster_id);
    }
  }

  ctx.begin();
  fs::create_directories(ctx.own() / "tiles");
  for (const auto& t : tiles) imagery::save_raster(t, ctx.own() / "tiles" / (t.cluster_id + ".f32"));
  if (!items.rows.empty()) csv::write(ctx.own() / "items.csv", items);
}

void cmd_featurize(Context& ctx) {
  const auto& c = ctx.cfg();
  const auto in = load_ingested(ctx);
  const auto tiles_dir = ctx.require("fetch-imagery") / "tiles";
  std::vector<imagery::RasterTile> tiles;
  for (const auto& cid : cluster_order(in.survey))
    tiles.push_back(imagery::load_raster(tiles_dir / (cid + ".f32")));
  // filters come from training-cluster tiles only
  const auto train_clusters = cluster_order(in.train);
  const std::set<std::string> train_set(train_clusters.begin(), train_clusters.end());
  std::vector<imagery::RasterTile> train_tiles;
  for (const auto& t : tiles)
    if (train_set.count(t.cluster_id)) train_tiles.push_back(t);
  const auto patches = mosaiks::sample_patches(train_tiles, c.get_int("mosaiks.n_images"),
                                               c.get_int("mosaiks.k"), ctx.seed());
  const auto bank = mosaiks::zca_whiten(patches, c.get_double("mosaiks.zca_eps"), ctx.seed());
  const auto fm = mosaiks::featurize_all(tiles, bank, c.get_int("mosaiks.stride"));

  ctx.begin();
  mosaiks::save_bank(bank, ctx.own() / "bank.json");
  mosaiks::save_features_csv(fm, ctx.own() / "features.csv");
}

void cmd_select(Context& ctx) {
  const auto& c = ctx.cfg();
  const auto in = load_ingested(ctx);
  const auto method = c.get("selection.method");
  const bool all = method == "all";
  if (!all) selection::parse_method(method);

  selection::SelectionConfig sc;
  sc.n_questions = c.get_int("selection.n_questions");
  sc.grid = grid_of(c);
  sc.cv_folds = c.get_int("ebm.cv_folds");
  sc.seed = ctx.seed();

  std::vector<std::string> standard_qs = in.standard_questions;
  if (c.get("selection.standard_questions") != "auto")
    standard_qs = c.get_list("selection.standard_questions");
  std::vector<std::string> exclude;
  if (c.get("selection.exclude") == "auto") {
    if (in.region_variable) exclude = {*in.region_variable};
  } else if (c.get("selection.exclude") != "none") {
    exclude = c.get_list("selection.exclude");
  }

  auto wanted = [&](const char* m) { return all || method == m; };
  std::vector<selection::SelectionReport> reports;
  std::optional<selection::SelectionReport> guided;
  if (wanted("survey_guided") || (wanted("standard") && sc.grid.size() > 1)) {
    guided = selection::select_survey_guided(in.train, sc);
  }
  if (wanted("standard")) {
    if (standard_qs.empty()) {
      if (!all) config_error("selection.standard_questions is empty");
    } else {
      auto r = selection::select_standard(in.train, standard_qs);
      // the baseline questionnaire uses the survey-guided hyperparameters
      r.train_config = guided ? guided->train_config : sc.grid.front();
      reports.push_back(r);
    }
  }
  if (wanted("survey_guided")) reports.push_back(*guided);
  if (wanted("survey_image_guided")) {
    const auto fm = load_features(ctx);
    reports.push_back(selection::select_survey_image_guided(in.train, fm, sc, exclude));
  }

  ctx.begin();
  for (const auto& r : reports)
    selection::save_report(r, ctx.own() / (selection::method_name(r.method) + ".json"));
}

std::vector<selection::SelectionReport> load_selections(Context& ctx) {
  const auto d = ctx.require("select");
  std::vector<selection::SelectionReport> out;
  for (auto m : {selection::Method::Standard, selection::Method::SurveyGuided,
                 selection::Method::SurveyImageGuided}) {
    const auto p = d / (selection::method_name(m) + ".json");
    if (fs::exists(p)) out.push_back(selection::load_report(p));
  }
  return out;
}

void cmd_train(Context& ctx) {
  const auto in = load_ingested(ctx);
  const auto sels = load_selections(ctx);
  const auto fm = load_features(ctx);
  std::vector<std::pair<std::string, ebm::EbmModel>> models;
  for (const auto& s : sels)
    for (bool images : {false, true}) {
      auto tc = s.train_config;
      tc.seed = ctx.seed();
      models.emplace_back(model_file(selection::method_name(s.method), images),
                          pipeline::train_pmt(in.train, s.selected_variables,
                                              images ? &fm : nullptr, tc));
    }
  ctx.begin();
  for (const auto& [name, m] : models) ebm::save_model(m, ctx.own() / name);
}

void cmd_evaluate(Context& ctx) {
  const auto in = load_ingested(ctx);
  const auto train_dir = ctx.require("train");
  const auto sels = load_selections(ctx);
  const auto fm = load_features(ctx);
  std::vector<pipeline::ScoredModel> scored;
  for (const auto& s : sels)
    for (bool images : {false, true}) {
      const auto name = selection::method_name(s.method);
      const auto p = train_dir / model_file(name, images);
      if (!fs::exists(p)) throw Error(Errc::DependencyMissing, "train: " + p.string() + " not found");
      const auto model = ebm::load_model(p);
      scored.push_back({name, images ? "survey+image" : "survey",
                        pipeline::predict_probs(model, in.test, images ? &fm : nullptr)});
    }
  const auto report = pipeline::stratified_eval(scored, in.test, bootstrap_spec(ctx));
  ctx.begin();
  pipeline::write_text(ctx.own() / "eval.json", pipeline::eval_to_json(report));
  pipeline::write_text(ctx.own() / "table1.csv", pipeline::eval_to_csv(report));
}

void cmd_interpret(Context& ctx) {
  const auto in = load_ingested(ctx);
  const auto fm = load_features(ctx);
  std::vector<std::string> region;
  if (in.region_variable) region = {*in.region_variable};
  const auto pca = pipeline::pca_interpret(fm, in.survey, 3, 10, region);
  ctx.begin();
  pipeline::write_text(ctx.own() / "pca.json", pipeline::pca_to_json(pca));
  pipeline::write_text(ctx.own() / "correlations.csv", pipeline::correlations_to_csv(pca));
}

std::string sweep_csv(const synth::BenchReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? csv::format_double(*v) : ""; };
  std::string out = "n_questions,pre_survey,pre_image,r2_survey,r2_image\n";
  for (const auto& pt : r.sweep)
    out += std::to_string(pt.n_questions) + "," + opt(pt.pre_survey) + "," +
           csv::format_double(pt.pre_image) + "," + opt(pt.r2_survey) + "," +
           csv::format_double(pt.r2_image) + "\n";
  return out;
}

void cmd_bench(Context& ctx) {
  const auto& c = ctx.cfg();
  const auto world = synth::load_world(ctx.require("synth"));
  synth::ProtocolConfig p;
  p.seed = ctx.seed();
  p.train_frac = c.get_double("data.train_frac");
  p.mosaiks_k = c.get_int("mosaiks.k");
  p.mosaiks_images = c.get_int("mosaiks.n_images");
  p.mosaiks_stride = c.get_int("mosaiks.stride");
  p.zca_eps = c.get_double("mosaiks.zca_eps");
  p.n_questions = c.get_int("selection.n_questions");
  p.grid = grid_of(c);
  p.cv_folds = c.get_int("ebm.cv_folds");
  if (c.get("selection.exclude") == "none") {
    p.exclude = std::vector<std::string>{};
  } else if (c.get("selection.exclude") != "auto") {
    p.exclude = c.get_list("selection.exclude");
  }
  const auto spec = bootstrap_spec(ctx);
  p.n_draw = spec.n_draw;
  p.iters = spec.iters;
  p.mode = spec.mode;
  p.sweep.clear();
  for (const auto& s : c.get_list("bench.sweep")) {
    p.sweep.push_back(static_cast<int>(csv::parse_double(s)));
  }
  p.region_probe = c.get_bool("bench.region_probe");
  const auto report = synth::run_benchmark(world, p);

  ctx.begin();
  pipeline::write_text(ctx.own() / "report.json", synth::report_to_json(report) + "\n");
  pipeline::write_text(ctx.own() / "table1.csv", pipeline::eval_to_csv(report.eval));
  pipeline::write_text(ctx.own() / "fig3.csv", sweep_csv(report));
}

std::string help_footer() {
  std::string out = "\nConfiguration keys (INI [section] key = value, or --set section.key=value):\n";
  for (const auto& k : config_keys()) {
    std::string line = "  " + std::string(k.key) + " = " +
                       (*k.default_value ? k.default_value : "\"\"");
    if (line.size() < 44) line.resize(44, ' ');
    out += line + " " + k.help + "\n";
  }
  out += "\nArtifacts go to <paths.out>/<command>/ with a manifest.json recording the\n"
         "config hash, seed and file digests. Errors print one line:\n"
         "  error code=<Code> message=\"...\"\n";
  return out;
}

std::string error_line(std::string_view code, const std::string& message) {
  return "error code=" + std::string(code) + " message=" + json(message).dump();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"povrate: survey + satellite imagery poverty-rate pipeline", "povrate"};
  app.footer(help_footer());
  app.require_subcommand(1, 1);

  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string endpoint_flag;
  app.add_option("--config", config_path, "INI configuration file");
  app.add_option("--set", sets, "override, section.key=value (repeatable)");
  app.add_option("--seed", seed, "overrides run.seed");
  app.add_option("--threads", threads, "OpenMP threads (results do not depend on it)")
      ->check(CLI::PositiveNumber);
  app.add_option("--catalog-endpoint", endpoint_flag,
                 "catalog URL; beats POVRATE_CATALOG_URL and paths.catalog_endpoint");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "generate a synthetic world"},
      {"ingest", "load the survey and split it into train/test"},
      {"fetch-imagery", "collect one tile per cluster (catalog, raster_dir or synth)"},
      {"featurize", "build MOSAIKS filters from training tiles and featurize all clusters"},
      {"select", "choose questions with the configured method(s)"},
      {"train", "fit PMT models with and without image features"},
      {"evaluate", "bootstrap PRE per stratum and cluster r2"},
      {"interpret", "PCA of image features and survey correlations"},
      {"bench", "run the full comparison on the synth world"},
  };
  for (const auto& [name, desc] : commands) app.add_subcommand(name, desc)->fallthrough();

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_line("ConfigError", e.what()) << "\n";
    return 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw Error(Errc::IoError, "no such config " + config_path);
      cfg.merge_ini(config_path);
    }
    for (const auto& s : sets) cfg.set(s);
    if (seed) cfg.set("run.seed", std::to_string(*seed));
    std::string endpoint = cfg.get("paths.catalog_endpoint");
    if (const char* env = std::getenv("POVRATE_CATALOG_URL"); env && *env) endpoint = env;
    if (!endpoint_flag.empty()) endpoint = endpoint_flag;
    cfg.set("paths.catalog_endpoint", endpoint);
    cfg.get_u64("run.seed");
    if (threads) omp_set_num_threads(*threads);

    Context ctx(cfg, command);
    if (command == "synth") cmd_synth(ctx);
    else if (command == "ingest") cmd_ingest(ctx);
    else if (command == "fetch-imagery") cmd_fetch_imagery(ctx, endpoint);
    else if (command == "featurize") cmd_featurize(ctx);
    else if (command == "select") cmd_select(ctx);
    else if (command == "train") cmd_train(ctx);
    else if (command == "evaluate") cmd_evaluate(ctx);
    else if (command == "interpret") cmd_interpret(ctx);
    else cmd_bench(ctx);
    ctx.finish();
    out << command << ": wrote " << ctx.own().string() << "\n";
    return 0;
  } catch (const Error& e) {
    err << error_line(errc_name(e.code()), e.what()) << "\n";
  } catch (const std::exception& e) {
    err << error_line("IoError", e.what()) << "\n";
  }
  return 2;
}

}  // namespace povrate::cli
