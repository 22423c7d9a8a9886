#include <doctest.h>

#include <algorithm>
#include <set>

#include "povrate/selection.hpp"
#include "synth_util.hpp"
#include "test_util.hpp"

using namespace povrate;
using namespace povrate::selection;

namespace {

data::SurveyDataset named_dataset(const std::vector<std::pair<std::string, std::string>>& vars,
                                  std::size_t n = 20) {
  data::QuestionMap qmap;
  std::vector<std::string> names;
  for (const auto& [v, q] : vars) {
    qmap.add(v, q);
    names.push_back(v);
  }
  std::vector<data::Household> hh(n);
  for (std::size_t i = 0; i < n; ++i) {
    hh[i].household_id = "H" + std::to_string(i);
    hh[i].cluster_id = "C" + std::to_string(i / 5);
    hh[i].hce = i % 2 ? 1.0 : 5.0;
    hh[i].responses.assign(names.size(), static_cast<double>(i % 3));
  }
  return data::SurveyDataset(std::move(hh), names, qmap, 3.0);
}

ebm::EbmModel fake_model(std::vector<std::string> names, std::vector<double> importance) {
  ebm::EbmModel m;
  m.feature_names = std::move(names);
  m.importance = std::move(importance);
  m.feature_functions.resize(m.feature_names.size());
  return m;
}

std::vector<std::string> names_of(const std::vector<RankedVariable>& r) {
  std::vector<std::string> out;
  for (const auto& v : r) out.push_back(v.name);
  return out;
}

// 40 binary questions; the two variables of question "qA" drive y.
data::SurveyDataset driven_dataset(std::uint64_t seed) {
  auto rng = make_rng(seed, 7);
  data::QuestionMap qmap;
  std::vector<std::string> names = {"qA=x", "qA=y"};
  qmap.add("qA=x", "qA");
  qmap.add("qA=y", "qA");
  for (int q = 1; q < 40; ++q) {
    names.push_back("n" + std::to_string(q));
    qmap.add(names.back(), names.back());
  }
  std::vector<data::Household> hh(400);
  for (std::size_t i = 0; i < hh.size(); ++i) {
    auto& h = hh[i];
    h.household_id = "H" + std::to_string(i);
    h.cluster_id = "C" + std::to_string(i / 10);
    h.weight = 0.5 + uniform01(rng);
    const int level = static_cast<int>(uniform_index(rng, 3));
    h.responses = {level == 0 ? 1.0 : 0.0, level == 1 ? 1.0 : 0.0};
    for (int q = 1; q < 40; ++q) h.responses.push_back(uniform01(rng) < 0.5 ? 1.0 : 0.0);
    const double p = level == 0 ? 0.8 : level == 1 ? 0.15 : 0.35;
    h.hce = uniform01(rng) < p ? 1.0 : 5.0;
  }
  return data::SurveyDataset(std::move(hh), names, qmap, 3.0);
}

SelectionConfig quick_config(std::uint64_t seed) {
  SelectionConfig c;
  auto tc = synth::lean_config();
  tc.n_rounds = 60;
  c.grid = {tc};
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("rank_variables: order, ties, image columns") {
  const auto ds = named_dataset({{"v1", "q1"}, {"v2", "q2"}, {"v3", "q3"}});
  CHECK(names_of(rank_variables(fake_model({"v1", "v2", "v3"}, {0.1, 0.5, 0.3}), ds)) ==
        std::vector<std::string>{"v2", "v3", "v1"});
  CHECK(names_of(rank_variables(fake_model({"v1", "v2"}, {0.5, 0.5}), ds)) ==
        std::vector<std::string>{"v1", "v2"});
  const auto mixed = rank_variables(
      fake_model({"img_000", "v1", "img_001", "v3"}, {0.9, 0.2, 0.8, 0.4}), ds);
  CHECK(names_of(mixed) == std::vector<std::string>{"v3", "v1"});
  CHECK_ERRC(rank_variables(fake_model({"img_000"}, {0.9}), ds), Errc::EmptyFeatureSet);
}

TEST_CASE("variables_to_questions: retrieval walk") {
  const auto ds = named_dataset({{"q1_a", "q1"}, {"q2_b", "q2"}, {"q1_c", "q1"}, {"q3_d", "q3"}});
  std::vector<RankedVariable> ranked = {{"q1_a", 3}, {"q2_b", 2}, {"q1_c", 1}, {"q3_d", 0.5}};
  auto r = variables_to_questions(ranked, ds.question_map(), ds.variable_names(), 2);
  CHECK(r.selected_questions == std::vector<std::string>{"q1", "q2"});
  CHECK(std::set<std::string>(r.selected_variables.begin(), r.selected_variables.end()) ==
        std::set<std::string>{"q1_a", "q1_c", "q2_b"});
  CHECK_FALSE(r.shortfall);

  r = variables_to_questions(ranked, ds.question_map(), ds.variable_names(), 5);
  CHECK(r.selected_questions.size() == 3);
  CHECK(r.shortfall);

  const auto one = named_dataset({{"a", "q"}, {"b", "q"}, {"c", "q"}});
  std::vector<RankedVariable> r1 = {{"b", 1}, {"a", 0.5}, {"c", 0}};
  const auto s = variables_to_questions(r1, one.question_map(), one.variable_names(), 1);
  CHECK(s.selected_questions == std::vector<std::string>{"q"});
  CHECK(s.selected_variables == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("select_standard") {
  const auto ds = named_dataset({{"a", "q1"}, {"b", "q2"}, {"c", "q1"}});
  const std::vector<std::string> qs = {"q1"};
  const auto r = select_standard(ds, qs);
  CHECK(r.method == Method::Standard);
  CHECK(r.selected_variables == std::vector<std::string>{"a", "c"});
  const std::vector<std::string> bad = {"q9"};
  CHECK_ERRC(select_standard(ds, bad), Errc::MissingQuestion);
}

TEST_CASE("select_survey_guided: driving question is found") {
  int found = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto ds = driven_dataset(seed);
    const auto r = select_survey_guided(ds, quick_config(seed));
    CHECK(r.selected_questions.size() == 10);
    found += std::count(r.selected_questions.begin(), r.selected_questions.end(), "qA") > 0;
  }
  CHECK(found >= 95);
}

TEST_CASE("select_survey_guided: budget, determinism, closure") {
  const auto ds = driven_dataset(3);
  const auto a = select_survey_guided(ds, quick_config(3));
  const auto b = select_survey_guided(ds, quick_config(3));
  CHECK(a == b);
  CHECK(a.method == Method::SurveyGuided);
  CHECK(a.selected_questions.size() == 10);
  std::set<std::string> qs(a.selected_questions.begin(), a.selected_questions.end());
  std::size_t expected = 0;
  for (const auto& v : ds.variable_names()) expected += qs.count(ds.question_map().question_of(v));
  CHECK(a.selected_variables.size() == expected);
  for (const auto& v : a.selected_variables) CHECK(qs.count(ds.question_map().question_of(v)));

  const auto round_trip = report_from_json(report_to_json(a));
  CHECK(round_trip == a);
}

TEST_CASE("select_survey_guided: appending a constant variable keeps the ranking") {
  const auto ds = driven_dataset(5);
  auto hh = ds.households();
  for (auto& h : hh) h.responses.push_back(1.0);
  auto names = ds.variable_names();
  names.push_back("const");
  auto qmap = ds.question_map();
  qmap.add("const", "qconst");
  const data::SurveyDataset extended(hh, names, qmap, ds.poverty_line());
  const auto base = select_survey_guided(ds, quick_config(5));
  const auto ext = select_survey_guided(extended, quick_config(5));
  REQUIRE(ext.ranked_variables.size() == base.ranked_variables.size() + 1);
  CHECK(ext.ranked_variables.back().name == "const");
  CHECK(ext.ranked_variables.back().importance == 0.0);
  for (std::size_t i = 0; i < base.ranked_variables.size(); ++i)
    CHECK(ext.ranked_variables[i] == base.ranked_variables[i]);
}

TEST_CASE("select_survey_image_guided: exclusion, survey-only ranking, missing clusters") {
  const auto world = synth::generate(testutil::small_config(1));
  const auto fm = testutil::world_features(world, 16, 1);
  const std::vector<std::string> exclude = {world.region_variable};
  const auto r = select_survey_image_guided(world.survey, fm, quick_config(1), exclude);
  CHECK(r.method == Method::SurveyImageGuided);
  CHECK(r.excluded_variables == exclude);
  for (const auto& v : r.ranked_variables) {
    CHECK(v.name != world.region_variable);
    CHECK(v.name.rfind("img_", 0) != 0);
  }
  CHECK(r.ranked_variables.size() == world.survey.variable_count() - 1);

  auto partial = fm;
  partial.cluster_ids.pop_back();
  partial.values.conservativeResize(partial.values.rows() - 1, Eigen::NoChange);
  CHECK_ERRC(select_survey_image_guided(world.survey, partial, quick_config(1), exclude),
             Errc::MissingClusterFeatures);
}

TEST_CASE("select_survey_image_guided: region variable loses rank") {
  int worse = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto world = synth::generate(testutil::small_config(seed, 60));
    const auto fm = testutil::world_features(world, 16, seed);
    const auto survey = select_survey_guided(world.survey, quick_config(seed));
    const auto image = select_survey_image_guided(world.survey, fm, quick_config(seed), {});
    auto rank = [&](const SelectionReport& r) {
      const auto names = names_of(r.ranked_variables);
      return std::find(names.begin(), names.end(), world.region_variable) - names.begin();
    };
    worse += rank(image) > rank(survey);
  }
  CHECK(worse >= 80);
}

TEST_CASE("method names") {
  for (auto m : {Method::Standard, Method::SurveyGuided, Method::SurveyImageGuided})
    CHECK(parse_method(method_name(m)) == m);
  CHECK_ERRC(parse_method("greedy"), Errc::ConfigError);
}
