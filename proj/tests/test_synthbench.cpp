#include <doctest.h>

#include <cmath>

#include "povrate/synthbench.hpp"
#include "synth_util.hpp"
#include "test_util.hpp"

using namespace povrate;
using namespace povrate::synth;

namespace {

bool same_households(const data::SurveyDataset& a, const data::SurveyDataset& b) {
  if (a.size() != b.size() || a.variable_names() != b.variable_names()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.households()[i];
    const auto& y = b.households()[i];
    if (x.household_id != y.household_id || x.cluster_id != y.cluster_id ||
        x.weight != y.weight || x.hce != y.hce || x.urban != y.urban ||
        x.responses != y.responses)
      return false;
  }
  return true;
}

ProtocolConfig small_protocol(std::uint64_t seed) {
  ProtocolConfig p;
  p.seed = seed;
  p.mosaiks_k = 16;
  p.mosaiks_images = 10;
  p.mosaiks_stride = 1;
  p.iters = 200;
  p.sweep = {0, 10};
  auto tc = lean_config();
  tc.n_rounds = 80;
  p.grid = {tc};
  return p;
}

}  // namespace

TEST_CASE("generate: deterministic and layout") {
  const auto a = generate(testutil::small_config(3));
  const auto b = generate(testutil::small_config(3));
  CHECK(same_households(a.survey, b.survey));
  CHECK(a.tiles == b.tiles);
  CHECK(a.latent == b.latent);
  CHECK(a.true_rate == b.true_rate);
  CHECK_FALSE(same_households(a.survey, generate(testutil::small_config(4)).survey));

  CHECK(a.survey.size() == 800);
  CHECK(a.tiles.size() == 80);
  CHECK(a.region_variable == "q00");
  CHECK(a.survey.question_map().question_ids().size() == 40);
  CHECK(a.standard_questions.size() == 10);
  for (const auto& t : a.tiles) {
    CHECK(t.width == 16);
    CHECK(t.height == 16);
  }
}

TEST_CASE("generate: config validation") {
  auto c = testutil::small_config(0);
  c.tile_size = 2;
  CHECK_ERRC(generate(c), Errc::ConfigError);
  c = testutil::small_config(0);
  c.n_clusters = 0;
  CHECK_ERRC(generate(c), Errc::ConfigError);
  c = testutil::small_config(0);
  c.n_questions = 10;
  CHECK_ERRC(generate(c), Errc::ConfigError);
}

TEST_CASE("generate: texture tracks latent urbanization") {
  auto c = testutil::small_config(5, 500);
  c.tile_size = 24;
  const auto w = generate(c);
  // monotone for clusters whose latent values are not nearly tied
  int violations = 0, pairs = 0;
  std::vector<double> tex;
  for (const auto& t : w.tiles) tex.push_back(texture_statistic(t));
  for (std::size_t i = 0; i < tex.size(); ++i)
    for (std::size_t j = 0; j < tex.size(); ++j)
      if (w.latent[i] + 0.05 < w.latent[j]) {
        ++pairs;
        violations += tex[i] >= tex[j];
      }
  CHECK(pairs > 1000);
  CHECK(violations == 0);
  CHECK(pipeline::pearson(tex, w.latent) > 0.99);

  c.urban_effect_texture = 0.0;
  const auto flat = generate(c);
  std::vector<double> flat_tex;
  for (const auto& t : flat.tiles) flat_tex.push_back(texture_statistic(t));
  CHECK(std::abs(pipeline::pearson(flat_tex, flat.latent)) <= 0.1);
}

TEST_CASE("generate: default world hits the target rate") {
  SynthConfig c;
  c.tile_size = 8;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    c.seed = seed;
    const auto w = generate(c);
    CHECK(w.survey.size() == 5000);
    CHECK(std::abs(w.true_rate - c.target_rate) <= 0.05);
  }
  c.target_rate = 0.6;
  const auto w = generate(c);
  CHECK(std::abs(w.true_rate - 0.6) <= 0.05);
}

TEST_CASE("generate: perfect information") {
  auto c = testutil::small_config(2);
  c.perfect_information = true;
  const auto w = generate(c);
  const auto& names = w.survey.variable_names();
  const auto col = std::find(names.begin(), names.end(), "q04") - names.begin();
  REQUIRE(col < static_cast<long>(names.size()));
  const auto labels = w.survey.labels();
  for (std::size_t i = 0; i < w.survey.size(); ++i)
    CHECK(labels[i] == static_cast<int>(w.survey.households()[i].responses[col]));
}

TEST_CASE("save_world / load_world round trip") {
  const auto w = generate(testutil::small_config(6, 20));
  const auto dir = testutil::scratch_dir("synth_world");
  save_world(w, dir);
  const auto back = load_world(dir);
  CHECK(back.config == w.config);
  CHECK(same_households(back.survey, w.survey));
  CHECK(back.tiles == w.tiles);
  CHECK(back.cluster_ids == w.cluster_ids);
  CHECK(back.latent == w.latent);
  CHECK(back.true_rate == w.true_rate);
  CHECK(back.intercept == w.intercept);
  CHECK(back.region_variable == w.region_variable);
  CHECK(back.standard_questions == w.standard_questions);
}

TEST_CASE("run_benchmark: report shape, determinism, schema") {
  const auto world = generate(testutil::small_config(7, 100));
  const auto a = run_benchmark(world, small_protocol(7));
  const auto b = run_benchmark(world, small_protocol(7));
  CHECK(report_to_json(a) == report_to_json(b));

  CHECK(a.eval.rows.size() == 6);
  CHECK(a.selections.size() == 3);
  for (const char* sel : {"standard", "survey_guided", "survey_image_guided"})
    for (const char* in : {"survey", "survey+image"}) CHECK_NOTHROW(eval_row(a, sel, in));
  CHECK_ERRC(eval_row(a, "greedy", "survey"), Errc::ConfigError);
  REQUIRE(a.sweep.size() == 2);
  CHECK_FALSE(a.sweep[0].pre_survey.has_value());
  CHECK(a.sweep[1].pre_survey.has_value());
  CHECK(a.n_train + a.n_test == world.survey.size());
  CHECK(a.region_rank_survey >= 1);
  CHECK(a.region_rank_image >= 1);

  // a different world and protocol still yields the same schema
  auto other_cfg = testutil::small_config(8, 60);
  other_cfg.n_questions = 30;
  auto other_p = small_protocol(8);
  other_p.sweep = {0, 10, 20, 30, 40, 50};
  other_p.region_probe = false;
  const auto c = run_benchmark(generate(other_cfg), other_p);
  CHECK(report_schema(report_to_json(c)) == report_schema(report_to_json(a)));
}

TEST_CASE("run_benchmark: perfect information gives near-zero error") {
  auto cfg = testutil::small_config(9, 100);
  cfg.perfect_information = true;
  auto p = small_protocol(9);
  p.mode = pipeline::RateMode::Hard;
  const auto r = run_benchmark(generate(cfg), p);
  for (const auto& row : r.eval.rows) {
    INFO(row.selection << "/" << row.inputs);
    // the standard set does not contain the deciding question
    if (row.selection == "standard") continue;
    CHECK(row.strata[0].mean_pre <= 0.5);
  }
}

TEST_CASE("run_benchmark: most of the image gain comes from texture") {
  // Image features are constant within a cluster, so even without texture
  // they can carry cluster effects to test households of the same cluster.
  // Removing the texture signal must remove most of the gain.
  auto mean_gain = [](double texture) {
    double gain = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto cfg = testutil::small_config(seed, 100);
      cfg.urban_effect_texture = texture;
      auto p = small_protocol(seed);
      p.region_probe = false;
      p.sweep = {};
      const auto r = run_benchmark(generate(cfg), p);
      gain += eval_row(r, "standard", "survey").strata[0].mean_pre -
              eval_row(r, "standard", "survey+image").strata[0].mean_pre;
    }
    return gain / 20.0;
  };
  const double with_texture = mean_gain(SynthConfig{}.urban_effect_texture);
  const double without = mean_gain(0.0);
  INFO("gain with texture " << with_texture << ", without " << without);
  CHECK(with_texture > 0.0);
  CHECK(without < 0.5 * with_texture);
}

TEST_CASE("sign_test_p") {
  CHECK(std::abs(sign_test_p(15, 20) - 21700.0 / 1048576.0) <= 1e-12);
  CHECK(sign_test_p(14, 20) > 0.05);
  CHECK(sign_test_p(0, 20) == doctest::Approx(1.0));
  CHECK(std::abs(sign_test_p(20, 20) - 1.0 / 1048576.0) <= 1e-15);
  CHECK_ERRC(sign_test_p(21, 20), Errc::ConfigError);
}
