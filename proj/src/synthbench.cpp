#include "povrate/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>

#include <json.hpp>

#include "povrate/error.hpp"
#include "povrate/mosaiks.hpp"
#include "povrate/random.hpp"

namespace povrate::synth {

using nlohmann::json;

void validate(const SynthConfig& c) {
  auto fail = [](const std::string& m) { throw Error(Errc::ConfigError, m); };
  if (c.n_clusters < 1 || c.households_per_cluster < 1) fail("synth counts must be >= 1");
  if (c.tile_size < 3) fail("synth tile_size must be >= 3");
  if (c.region_levels < 2) fail("synth region_levels must be >= 2");
  if (c.n_geo_proxies < 0 || c.n_household_signals < 1) fail("bad synth question layout");
  if (c.n_questions < 1 + c.n_geo_proxies + c.n_household_signals) {
    fail("synth n_questions too small for the region, geography and household blocks");
  }
  if (!(c.target_rate > 0.0 && c.target_rate < 1.0)) fail("synth target_rate must be in (0,1)");
  if (!(c.poverty_line > 0.0)) fail("synth poverty_line must be > 0");
  if (c.weight_sigma < 0.0 || c.texture_noise < 0.0 || c.region_noise < 0.0 ||
      c.geo_noise < 0.0 || c.brightness_spread < 0.0 || c.urban_effect_texture < 0.0) {
    fail("synth noise levels and texture effect must be >= 0");
  }
}

namespace {

double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

std::string qid(int q) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "q%02d", q);
  return buf;
}

std::string numbered(char prefix, int width, int v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%0*d", prefix, width, v);
  return buf;
}

enum class Kind { Region, Geo, Household, NoiseBinary, NoiseCategorical };

struct Layout {
  std::vector<Kind> kinds;  // per question
  std::vector<std::string> variables;
  data::QuestionMap qmap;
  std::vector<std::string> standard;
};

constexpr const char* kLevels[] = {"a", "b", "c"};

Layout layout_for(const SynthConfig& c) {
  Layout l;
  std::vector<int> geo, hh, noise;
  for (int q = 0; q < c.n_questions; ++q) {
    Kind k;
    if (q == 0) {
      k = Kind::Region;
    } else if (q <= c.n_geo_proxies) {
      k = Kind::Geo;
      geo.push_back(q);
    } else if (q <= c.n_geo_proxies + c.n_household_signals) {
      k = Kind::Household;
      hh.push_back(q);
    } else {
      k = q % 2 ? Kind::NoiseCategorical : Kind::NoiseBinary;
      noise.push_back(q);
    }
    l.kinds.push_back(k);
    if (k == Kind::NoiseCategorical) {
      for (const char* lv : kLevels) {
        l.variables.push_back(qid(q) + "=" + lv);
        l.qmap.add(l.variables.back(), qid(q));
      }
    } else {
      l.variables.push_back(qid(q));
      l.qmap.add(qid(q), qid(q));
    }
  }
  // a fixed scorecard: region, two geography proxies, the first household
  // questions and a couple of uninformative ones
  l.standard.push_back(qid(0));
  for (std::size_t i = 0; i < geo.size() && i < 2; ++i) l.standard.push_back(qid(geo[i]));
  for (std::size_t i = 0; i < hh.size() && i < 5; ++i) l.standard.push_back(qid(hh[i]));
  for (std::size_t i = 0; i < noise.size() && l.standard.size() < 10; ++i)
    l.standard.push_back(qid(noise[i]));
  return l;
}

// Smooth base, a checkerboard whose amplitude grows with u, and noise.
imagery::RasterTile make_synth_tile(const SynthConfig& c, const std::string& id, double u,
                                    Rng& rng) {
  auto tile = imagery::make_tile(id, c.tile_size, c.tile_size);
  const double brightness = 0.4 + c.brightness_spread * uniform01(rng);
  const double phase_x = 2.0 * std::numbers::pi * uniform01(rng);
  const double phase_y = 2.0 * std::numbers::pi * uniform01(rng);
  const double period = c.tile_size / 2.0;
  const double amp = c.urban_effect_texture * u;
  const double half_width = c.texture_noise * std::sqrt(3.0);
  for (int y = 0; y < c.tile_size; ++y)
    for (int x = 0; x < c.tile_size; ++x) {
      const double smooth = 0.05 * std::sin(2 * std::numbers::pi * x / period + phase_x) *
                            std::cos(2 * std::numbers::pi * y / period + phase_y);
      const double checker = (x + y) % 2 ? amp : -amp;
      for (int ch = 0; ch < 3; ++ch) {
        const double noise = half_width * (2.0 * uniform01(rng) - 1.0);
        const double v = brightness + 0.03 * ch + smooth + 0.5 * checker + noise;
        tile.at(x, y, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return tile;
}

struct ClusterDraw {
  double u = 0.0;
  imagery::RasterTile tile;
  std::vector<data::Household> households;
  std::vector<double> linear;  // log-odds without the intercept
  std::vector<double> draw;    // uniform for the label
  std::vector<double> spend;   // uniform for expenditure
  std::vector<int> perfect;    // label under perfect information
};

}  // namespace

double texture_statistic(const imagery::RasterTile& tile) {
  if (tile.width < 2) return 0.0;
  double s = 0.0;
  for (int y = 0; y < tile.height; ++y)
    for (int x = 1; x < tile.width; ++x)
      for (int c = 0; c < 3; ++c) s += std::abs(tile.at(x, y, c) - tile.at(x - 1, y, c));
  return s / (3.0 * tile.height * (tile.width - 1));
}

SynthWorld generate(const SynthConfig& c) {
  validate(c);
  const auto lay = layout_for(c);
  const int nq = c.n_questions;
  std::vector<double> beta(static_cast<std::size_t>(nq), 0.0);
  std::vector<double> threshold(static_cast<std::size_t>(nq), 0.0);
  {
    int g = 0, h = 0;
    for (int q = 0; q < nq; ++q) {
      if (lay.kinds[q] == Kind::Geo) {
        threshold[q] = c.n_geo_proxies > 1 ? 0.3 + 0.4 * g / (c.n_geo_proxies - 1) : 0.5;
        ++g;
      } else if (lay.kinds[q] == Kind::Household) {
        const double mag = c.household_signal * (1.0 - 0.5 * h / c.n_household_signals);
        beta[q] = h % 2 ? -mag : mag;
        ++h;
      }
    }
  }

  std::vector<ClusterDraw> clusters(static_cast<std::size_t>(c.n_clusters));
#pragma omp parallel for schedule(dynamic, 4)
  for (int k = 0; k < c.n_clusters; ++k) {
    auto rng = make_rng(c.seed, 1000 + static_cast<std::uint64_t>(k));
    auto& cd = clusters[static_cast<std::size_t>(k)];
    const auto cid = numbered('C', 4, k);
    cd.u = uniform01(rng);
    cd.tile = make_synth_tile(c, cid, cd.u, rng);
    const double region = std::clamp(
        std::floor(c.region_levels * (cd.u + c.region_noise * normal01(rng))), 0.0,
        static_cast<double>(c.region_levels - 1));
    for (int m = 0; m < c.households_per_cluster; ++m) {
      data::Household h;
      h.household_id = numbered('H', 6, k * c.households_per_cluster + m);
      h.cluster_id = cid;
      h.weight = std::exp(c.weight_sigma * normal01(rng) - 0.5 * c.weight_sigma * c.weight_sigma);
      h.urban = cd.u > c.urban_threshold;
      double lin = c.urban_effect_y * (cd.u - 0.5);
      int first_hh = -1;
      for (int q = 0; q < nq; ++q) {
        switch (lay.kinds[q]) {
          case Kind::Region:
            h.responses.push_back(region);
            break;
          case Kind::Geo:
            h.responses.push_back(cd.u + c.geo_noise * normal01(rng) > threshold[q] ? 1.0 : 0.0);
            break;
          case Kind::Household: {
            const double x = uniform01(rng) < 0.5 ? 1.0 : 0.0;
            h.responses.push_back(x);
            lin += beta[q] * (x - 0.5);
            if (first_hh < 0) first_hh = static_cast<int>(x);
            break;
          }
          case Kind::NoiseBinary:
            h.responses.push_back(uniform01(rng) < 0.5 ? 1.0 : 0.0);
            break;
          case Kind::NoiseCategorical: {
            const auto level = uniform_index(rng, 3);
            for (std::uint64_t lv = 0; lv < 3; ++lv) h.responses.push_back(lv == level ? 1.0 : 0.0);
            break;
          }
        }
      }
      cd.linear.push_back(lin);
      cd.draw.push_back(uniform01(rng));
      cd.spend.push_back(uniform01(rng));
      cd.perfect.push_back(first_hh);
      cd.households.push_back(std::move(h));
    }
  }

  // intercept so the expected weighted rate hits the target
  double lo = -30.0, hi = 30.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double wp = 0.0, ws = 0.0;
    for (const auto& cd : clusters)
      for (std::size_t i = 0; i < cd.households.size(); ++i) {
        wp += cd.households[i].weight * sigmoid(mid + cd.linear[i]);
        ws += cd.households[i].weight;
      }
    (wp / ws < c.target_rate ? lo : hi) = mid;
  }
  const double b0 = 0.5 * (lo + hi);

  SynthWorld world;
  world.config = c;
  world.intercept = b0;
  world.region_variable = qid(0);
  world.standard_questions = lay.standard;
  std::vector<data::Household> all;
  for (auto& cd : clusters) {
    for (std::size_t i = 0; i < cd.households.size(); ++i) {
      auto& h = cd.households[i];
      const bool poor = c.perfect_information ? cd.perfect[i] == 1
                                              : cd.draw[i] < sigmoid(b0 + cd.linear[i]);
      h.hce = poor ? c.poverty_line * (0.3 + 0.7 * cd.spend[i])
                   : c.poverty_line * (1.01 + 2.0 * cd.spend[i]);
      all.push_back(std::move(h));
    }
    world.cluster_ids.push_back(cd.tile.cluster_id);
    world.latent.push_back(cd.u);
    world.tiles.push_back(std::move(cd.tile));
  }
  world.survey = data::SurveyDataset(std::move(all), lay.variables, lay.qmap, c.poverty_line);
  world.true_rate = data::poverty_rate(world.survey.labels(), world.survey.weights());
  return world;
}

namespace {

json synth_json(const SynthConfig& c) {
  return {{"n_clusters", c.n_clusters},
          {"households_per_cluster", c.households_per_cluster},
          {"n_questions", c.n_questions},
          {"tile_size", c.tile_size},
          {"seed", c.seed},
          {"target_rate", c.target_rate},
          {"poverty_line", c.poverty_line},
          {"urban_threshold", c.urban_threshold},
          {"urban_effect_y", c.urban_effect_y},
          {"urban_effect_texture", c.urban_effect_texture},
          {"texture_noise", c.texture_noise},
          {"brightness_spread", c.brightness_spread},
          {"region_levels", c.region_levels},
          {"region_noise", c.region_noise},
          {"n_geo_proxies", c.n_geo_proxies},
          {"geo_noise", c.geo_noise},
          {"n_household_signals", c.n_household_signals},
          {"household_signal", c.household_signal},
          {"weight_sigma", c.weight_sigma},
          {"perfect_information", c.perfect_information}};
}

SynthConfig synth_from(const json& j) {
  SynthConfig c;
  c.n_clusters = j.at("n_clusters").get<int>();
  c.households_per_cluster = j.at("households_per_cluster").get<int>();
  c.n_questions = j.at("n_questions").get<int>();
  c.tile_size = j.at("tile_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.target_rate = j.at("target_rate").get<double>();
  c.poverty_line = j.at("poverty_line").get<double>();
  c.urban_threshold = j.at("urban_threshold").get<double>();
  c.urban_effect_y = j.at("urban_effect_y").get<double>();
  c.urban_effect_texture = j.at("urban_effect_texture").get<double>();
  c.texture_noise = j.at("texture_noise").get<double>();
  c.brightness_spread = j.at("brightness_spread").get<double>();
  c.region_levels = j.at("region_levels").get<int>();
  c.region_noise = j.at("region_noise").get<double>();
  c.n_geo_proxies = j.at("n_geo_proxies").get<int>();
  c.geo_noise = j.at("geo_noise").get<double>();
  c.n_household_signals = j.at("n_household_signals").get<int>();
  c.household_signal = j.at("household_signal").get<double>();
  c.weight_sigma = j.at("weight_sigma").get<double>();
  c.perfect_information = j.at("perfect_information").get<bool>();
  return c;
}

}  // namespace

void save_world(const SynthWorld& w, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "tiles");
  data::save_survey(w.survey, dir / "survey.csv");
  data::save_question_map(w.survey.question_map(), w.survey.variable_names(), dir / "qmap.csv");
  for (const auto& t : w.tiles) imagery::save_raster(t, dir / "tiles" / (t.cluster_id + ".f32"));
  json j = {{"config", synth_json(w.config)},
            {"true_rate", w.true_rate},
            {"intercept", w.intercept},
            {"region_variable", w.region_variable},
            {"standard_questions", w.standard_questions},
            {"cluster_ids", w.cluster_ids},
            {"latent", w.latent}};
  pipeline::write_text(dir / "world.json", j.dump(2) + "\n");
}

SynthWorld load_world(const std::filesystem::path& dir) {
  SynthWorld w;
  try {
    const auto j = json::parse(pipeline::read_text(dir / "world.json"));
    w.config = synth_from(j.at("config"));
    w.true_rate = j.at("true_rate").get<double>();
    w.intercept = j.at("intercept").get<double>();
    w.region_variable = j.at("region_variable").get<std::string>();
    w.standard_questions = j.at("standard_questions").get<std::vector<std::string>>();
    w.cluster_ids = j.at("cluster_ids").get<std::vector<std::string>>();
    w.latent = j.at("latent").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error(Errc::IoError, std::string("bad world.json: ") + e.what());
  }
  if (w.latent.size() != w.cluster_ids.size()) {
    throw Error(Errc::IoError, "world.json latent and cluster lists differ");
  }
  w.survey = data::load_survey(dir / "survey.csv", dir / "qmap.csv", w.config.poverty_line);
  for (const auto& cid : w.cluster_ids)
    w.tiles.push_back(imagery::load_raster(dir / "tiles" / (cid + ".f32")));
  return w;
}

ebm::TrainConfig lean_config() {
  ebm::TrainConfig c;
  c.learning_rate = 0.1;
  c.n_leaves = 3;
  c.n_interactions = 0;
  c.n_rounds = 300;
  c.max_bins = 16;
  c.max_pair_bins = 16;
  return c;
}

const pipeline::EvalRow& eval_row(const BenchReport& r, const std::string& selection,
                                  const std::string& inputs) {
  for (const auto& row : r.eval.rows)
    if (row.selection == selection && row.inputs == inputs) return row;
  throw Error(Errc::ConfigError, "no evaluation row " + selection + "/" + inputs);
}

BenchReport run_benchmark(const SynthWorld& world, const ProtocolConfig& p) {
  BenchReport report;
  report.seed = p.seed;
  report.region_variable = world.region_variable;
  const auto& survey = world.survey;

  const auto split = data::stratified_split(survey, p.train_frac, p.seed);
  const auto train = survey.subset_by_ids(split.train_ids);
  const auto test = survey.subset_by_ids(split.test_ids);
  report.national_rate = split.national_rate;
  report.train_rate = split.train_rate;
  report.test_rate = split.test_rate;
  report.n_train = train.size();
  report.n_test = test.size();

  // filters come from training-cluster tiles only
  std::set<std::string> train_clusters;
  for (const auto& h : train.households()) train_clusters.insert(h.cluster_id);
  std::vector<imagery::RasterTile> train_tiles;
  for (const auto& t : world.tiles)
    if (train_clusters.count(t.cluster_id)) train_tiles.push_back(t);
  const auto patches = mosaiks::sample_patches(train_tiles, p.mosaiks_images, p.mosaiks_k, p.seed);
  train_tiles.clear();
  const auto bank = mosaiks::zca_whiten(patches, p.zca_eps, p.seed);
  const auto features = mosaiks::featurize_all(world.tiles, bank, p.mosaiks_stride);
  report.bank_fingerprint = features.bank_fingerprint;

  selection::SelectionConfig sc;
  sc.n_questions = p.n_questions;
  sc.grid = p.grid.empty() ? std::vector<ebm::TrainConfig>{lean_config()} : p.grid;
  sc.cv_folds = p.cv_folds;
  sc.seed = p.seed;
  const std::vector<std::string> exclude =
      p.exclude ? *p.exclude : std::vector<std::string>{world.region_variable};

  auto guided = selection::select_survey_guided(train, sc);
  auto standard = selection::select_standard(train, world.standard_questions);
  standard.train_config = guided.train_config;
  auto image_guided = selection::select_survey_image_guided(train, features, sc, exclude);
  report.selections = {standard, guided, image_guided};

  auto rank_of = [&](const selection::SelectionReport& r) {
    for (std::size_t i = 0; i < r.ranked_variables.size(); ++i)
      if (r.ranked_variables[i].name == world.region_variable) return static_cast<int>(i) + 1;
    return 0;
  };
  report.region_rank_survey = rank_of(guided);
  if (p.region_probe) {
    const auto probe = selection::select_survey_image_guided(train, features, sc, {});
    report.region_rank_image = rank_of(probe);
  }

  // test-set probabilities, cached by (variables, images)
  std::map<std::pair<std::vector<std::string>, bool>, std::vector<double>> cache;
  auto probs_for = [&](const std::vector<std::string>& vars, bool images,
                       const ebm::TrainConfig& tc) -> const std::vector<double>& {
    auto key = std::make_pair(vars, images);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto cfg = tc;
    cfg.seed = p.seed;
    const auto* fm = images ? &features : nullptr;
    const auto model = pipeline::train_pmt(train, vars, fm, cfg);
    return cache.emplace(key, pipeline::predict_probs(model, test, fm)).first->second;
  };

  std::vector<pipeline::ScoredModel> scored;
  for (const auto& sel : report.selections)
    for (bool images : {false, true})
      scored.push_back({selection::method_name(sel.method), images ? "survey+image" : "survey",
                        probs_for(sel.selected_variables, images, sel.train_config)});
  pipeline::BootstrapSpec spec;
  spec.n_draw = p.n_draw;
  spec.iters = p.iters;
  spec.seed = p.seed;
  spec.mode = p.mode;
  report.eval = pipeline::stratified_eval(scored, test, spec);

  const auto order = selection::variables_to_questions(
      guided.ranked_variables, train.question_map(), train.variable_names(),
      static_cast<int>(train.question_map().question_ids().size()));
  for (int n : p.sweep) {
    SweepPoint pt;
    pt.n_questions = n;
    std::set<std::string> qs(order.selected_questions.begin(),
                             order.selected_questions.begin() +
                                 std::min<std::size_t>(static_cast<std::size_t>(std::max(n, 0)),
                                                       order.selected_questions.size()));
    std::vector<std::string> vars;
    for (const auto& v : train.variable_names())
      if (qs.count(train.question_map().question_of(v))) vars.push_back(v);
    const auto& img = probs_for(vars, true, guided.train_config);
    pt.pre_image = pipeline::bootstrap_pre(img, test, pipeline::Stratum::All, spec).mean_pre;
    pt.r2_image = pipeline::cluster_r2(img, test, p.mode);
    if (!vars.empty()) {
      const auto& sv = probs_for(vars, false, guided.train_config);
      pt.pre_survey = pipeline::bootstrap_pre(sv, test, pipeline::Stratum::All, spec).mean_pre;
      pt.r2_survey = pipeline::cluster_r2(sv, test, p.mode);
    }
    report.sweep.push_back(pt);
  }

  const auto pca = pipeline::pca_interpret(features, survey, 3, 10, {});
  std::vector<double> pc1(static_cast<std::size_t>(pca.scores.rows()));
  std::vector<double> latent(pc1.size());
  for (std::size_t i = 0; i < pc1.size(); ++i) {
    pc1[i] = pca.scores(static_cast<Eigen::Index>(i), 0);
    const auto at = std::find(world.cluster_ids.begin(), world.cluster_ids.end(),
                              pca.cluster_ids[i]);
    latent[i] = world.latent[static_cast<std::size_t>(at - world.cluster_ids.begin())];
  }
  report.pc1_latent_corr = pipeline::pearson(pc1, latent);
  report.explained_ratio = pca.explained_ratio;
  return report;
}

std::string report_to_json(const BenchReport& r) {
  json sels = json::array();
  for (const auto& s : r.selections) sels.push_back(json::parse(selection::report_to_json(s)));
  json sweep = json::array();
  for (const auto& pt : r.sweep) {
    sweep.push_back({{"n_questions", pt.n_questions},
                     {"pre_survey", pt.pre_survey ? json(*pt.pre_survey) : json(nullptr)},
                     {"pre_image", pt.pre_image},
                     {"r2_survey", pt.r2_survey ? json(*pt.r2_survey) : json(nullptr)},
                     {"r2_image", pt.r2_image}});
  }
  json j = {{"seed", r.seed},
            {"national_rate", r.national_rate},
            {"train_rate", r.train_rate},
            {"test_rate", r.test_rate},
            {"n_train", r.n_train},
            {"n_test", r.n_test},
            {"bank_fingerprint", r.bank_fingerprint},
            {"selections", sels},
            {"eval", json::parse(pipeline::eval_to_json(r.eval))},
            {"sweep", sweep},
            {"pca", {{"pc1_latent_corr", r.pc1_latent_corr}, {"explained_ratio", r.explained_ratio}}},
            {"region", {{"variable", r.region_variable},
                        {"rank_survey_guided", r.region_rank_survey},
                        {"rank_image_guided", r.region_rank_image}}}};
  return j.dump(2);
}

namespace {

void schema_walk(const json& j, const std::string& path, std::vector<std::string>& out) {
  switch (j.type()) {
    case json::value_t::object:
      out.push_back(path + ":object");
      for (const auto& [k, v] : j.items()) schema_walk(v, path + "." + k, out);
      break;
    case json::value_t::array:
      out.push_back(path + ":array");
      if (!j.empty()) schema_walk(j.front(), path + "[]", out);
      break;
    case json::value_t::string: out.push_back(path + ":string"); break;
    case json::value_t::boolean: out.push_back(path + ":boolean"); break;
    case json::value_t::null:
    case json::value_t::number_integer:
    case json::value_t::number_unsigned:
    case json::value_t::number_float:
      // optional numbers serialize as null
      out.push_back(path + ":number");
      break;
    default: out.push_back(path + ":other");
  }
}

}  // namespace

std::vector<std::string> report_schema(const std::string& text) {
  std::vector<std::string> out;
  schema_walk(json::parse(text), "$", out);
  std::sort(out.begin(), out.end());
  return out;
}

double sign_test_p(int wins, int n) {
  if (n < 0 || wins < 0 || wins > n) throw Error(Errc::ConfigError, "bad sign test counts");
  double p = 0.0;
  for (int k = wins; k <= n; ++k)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) -
                  n * std::log(2.0));
  return std::min(p, 1.0);
}

}  // namespace povrate::synth
