#include "povrate/selection.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "povrate/error.hpp"

namespace povrate::selection {

using nlohmann::json;

std::string method_name(Method m) {
  switch (m) {
    case Method::Standard: return "standard";
    case Method::SurveyGuided: return "survey_guided";
    case Method::SurveyImageGuided: return "survey_image_guided";
  }
  return "standard";
}

Method parse_method(const std::string& name) {
  if (name == "standard") return Method::Standard;
  if (name == "survey_guided") return Method::SurveyGuided;
  if (name == "survey_image_guided") return Method::SurveyImageGuided;
  throw Error(Errc::ConfigError, "unknown selection method '" + name + "'");
}

std::string image_column(std::size_t j) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%03zu", j);
  return buf;
}

Eigen::MatrixXd broadcast_features(const data::SurveyDataset& dataset,
                                   const mosaiks::FeatureMatrix& features) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(dataset.size()), features.values.cols());
  Eigen::Index i = 0;
  for (const auto& h : dataset.households()) {
    const auto r = features.row_of(h.cluster_id);
    if (r < 0) {
      throw Error(Errc::MissingClusterFeatures,
                  "no image features for cluster " + h.cluster_id);
    }
    out.row(i++) = features.values.row(r);
  }
  return out;
}

std::vector<RankedVariable> rank_variables(const ebm::EbmModel& model,
                                           const data::SurveyDataset& dataset) {
  if (model.feature_names.size() != model.feature_count() ||
      model.importance.size() != model.feature_count()) {
    throw Error(Errc::ShapeError, "model lacks feature names or importances");
  }
  std::vector<RankedVariable> out;
  for (std::size_t f = 0; f < model.feature_count(); ++f) {
    if (dataset.variable_index(model.feature_names[f]))
      out.push_back({model.feature_names[f], model.importance[f]});
  }
  if (out.empty()) throw Error(Errc::EmptyFeatureSet, "model uses no survey variables");
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.importance > b.importance;
  });
  return out;
}

SelectionReport variables_to_questions(std::span<const RankedVariable> ranked,
                                       const data::QuestionMap& qmap,
                                       std::span<const std::string> variable_order,
                                       int n_questions) {
  SelectionReport r;
  r.n_questions = n_questions;
  r.ranked_variables.assign(ranked.begin(), ranked.end());
  std::set<std::string> seen;
  for (const auto& v : ranked) {
    if (static_cast<int>(r.selected_questions.size()) >= n_questions) break;
    const auto& q = qmap.question_of(v.name);
    if (seen.insert(q).second) r.selected_questions.push_back(q);
  }
  r.shortfall = static_cast<int>(r.selected_questions.size()) < n_questions;
  for (const auto& v : variable_order)
    if (qmap.contains(v) && seen.count(qmap.question_of(v))) r.selected_variables.push_back(v);
  return r;
}

SelectionReport select_standard(const data::SurveyDataset& dataset,
                                std::span<const std::string> questions) {
  SelectionReport r;
  r.method = Method::Standard;
  r.n_questions = static_cast<int>(questions.size());
  const auto& known = dataset.question_map().question_ids();
  std::set<std::string> chosen;
  for (const auto& q : questions) {
    if (std::find(known.begin(), known.end(), q) == known.end()) {
      throw Error(Errc::MissingQuestion, "standard question '" + q + "' not in the survey");
    }
    if (chosen.insert(q).second) r.selected_questions.push_back(q);
  }
  for (const auto& v : dataset.variable_names())
    if (chosen.count(dataset.question_map().question_of(v))) r.selected_variables.push_back(v);
  return r;
}

ebm::TrainConfig choose_config(const Eigen::MatrixXd& x, std::span<const int> y,
                               std::span<const double> w, const SelectionConfig& config) {
  if (config.grid.empty()) throw Error(Errc::ConfigError, "empty hyperparameter grid");
  if (config.grid.size() == 1) return config.grid.front();
  return ebm::cross_validate(x, y, w, config.grid, config.cv_folds, config.seed).best;
}

namespace {

SelectionReport fit_and_select(const data::SurveyDataset& train, const Eigen::MatrixXd& x,
                               std::vector<std::string> names, const SelectionConfig& config,
                               Method method) {
  const auto w = train.weights();
  auto tc = choose_config(x, train.labels(), w, config);
  tc.seed = config.seed;
  const auto model = ebm::train_ebm(x, train.labels(), w, tc, std::move(names));
  auto ranked = rank_variables(model, train);
  auto r = variables_to_questions(ranked, train.question_map(), train.variable_names(),
                                  config.n_questions);
  r.method = method;
  r.train_config = tc;
  return r;
}

}  // namespace

SelectionReport select_survey_guided(const data::SurveyDataset& train,
                                     const SelectionConfig& config) {
  return fit_and_select(train, train.design_matrix(), train.variable_names(), config,
                        Method::SurveyGuided);
}

SelectionReport select_survey_image_guided(const data::SurveyDataset& train,
                                           const mosaiks::FeatureMatrix& features,
                                           const SelectionConfig& config,
                                           std::span<const std::string> exclude) {
  const std::unordered_set<std::string> drop(exclude.begin(), exclude.end());
  std::vector<std::string> names, excluded;
  for (const auto& v : train.variable_names())
    (drop.count(v) ? excluded : names).push_back(v);
  const auto img = broadcast_features(train, features);
  const auto survey = train.design_matrix(names);
  Eigen::MatrixXd x(survey.rows(), survey.cols() + img.cols());
  x << survey, img;
  for (Eigen::Index j = 0; j < img.cols(); ++j)
    names.push_back(image_column(static_cast<std::size_t>(j)));
  auto r = fit_and_select(train, x, std::move(names), config, Method::SurveyImageGuided);
  r.excluded_variables = std::move(excluded);
  return r;
}

std::string report_to_json(const SelectionReport& r) {
  json ranked = json::array();
  for (const auto& v : r.ranked_variables)
    ranked.push_back({{"variable", v.name}, {"importance", v.importance}});
  json j = {{"method", method_name(r.method)},
            {"n_questions", r.n_questions},
            {"ranked_variables", ranked},
            {"selected_questions", r.selected_questions},
            {"selected_variables", r.selected_variables},
            {"excluded_variables", r.excluded_variables},
            {"shortfall", r.shortfall},
            {"train_config", json::parse(ebm::config_to_json(r.train_config))}};
  return j.dump(2);
}

SelectionReport report_from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    SelectionReport r;
    r.method = parse_method(j.at("method").get<std::string>());
    r.n_questions = j.at("n_questions").get<int>();
    for (const auto& v : j.at("ranked_variables"))
      r.ranked_variables.push_back(
          {v.at("variable").get<std::string>(), v.at("importance").get<double>()});
    r.selected_questions = j.at("selected_questions").get<std::vector<std::string>>();
    r.selected_variables = j.at("selected_variables").get<std::vector<std::string>>();
    r.excluded_variables = j.at("excluded_variables").get<std::vector<std::string>>();
    r.shortfall = j.at("shortfall").get<bool>();
    r.train_config = ebm::config_from_json(j.at("train_config").dump());
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::IoError, std::string("bad selection report: ") + e.what());
  }
}

void save_report(const SelectionReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << report_to_json(report) << '\n';
}

SelectionReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

}  // namespace povrate::selection
