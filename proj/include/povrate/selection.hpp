#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "povrate/data_model.hpp"
#include "povrate/ebm.hpp"
#include "povrate/mosaiks.hpp"

namespace povrate::selection {

enum class Method { Standard, SurveyGuided, SurveyImageGuided };

std::string method_name(Method m);
Method parse_method(const std::string& name);

struct RankedVariable {
  std::string name;
  double importance = 0.0;

  bool operator==(const RankedVariable&) const = default;
};

struct SelectionReport {
  Method method = Method::Standard;
  int n_questions = 10;
  std::vector<RankedVariable> ranked_variables;
  std::vector<std::string> selected_questions;
  std::vector<std::string> selected_variables;  // dataset variable order
  std::vector<std::string> excluded_variables;
  bool shortfall = false;
  // Hyperparameters chosen during selection, reused for the downstream PMT.
  ebm::TrainConfig train_config;

  bool operator==(const SelectionReport&) const = default;
};

struct SelectionConfig {
  int n_questions = 10;
  // A single-entry grid skips cross-validation.
  std::vector<ebm::TrainConfig> grid = ebm::full_grid();
  int cv_folds = 10;
  std::uint64_t seed = 0;
};

// Column names given to broadcast image features.
std::string image_column(std::size_t j);

// Cluster features copied onto every member household, in dataset row order.
Eigen::MatrixXd broadcast_features(const data::SurveyDataset& dataset,
                                   const mosaiks::FeatureMatrix& features);

// Survey variables of the model, by descending importance. Model columns
// that are not dataset variables (image features) are skipped.
std::vector<RankedVariable> rank_variables(const ebm::EbmModel& model,
                                           const data::SurveyDataset& dataset);

// Walks the ranking collecting parent questions until n_questions distinct
// ones are found; selected_variables are all members of those questions.
SelectionReport variables_to_questions(std::span<const RankedVariable> ranked,
                                       const data::QuestionMap& qmap,
                                       std::span<const std::string> variable_order,
                                       int n_questions);

// A fixed question list, e.g. an existing scorecard.
SelectionReport select_standard(const data::SurveyDataset& dataset,
                                std::span<const std::string> questions);

SelectionReport select_survey_guided(const data::SurveyDataset& train,
                                     const SelectionConfig& config);

SelectionReport select_survey_image_guided(const data::SurveyDataset& train,
                                           const mosaiks::FeatureMatrix& features,
                                           const SelectionConfig& config,
                                           std::span<const std::string> exclude);

// Picks grid[0] when the grid has one entry, else the cross-validated best.
ebm::TrainConfig choose_config(const Eigen::MatrixXd& x, std::span<const int> y,
                               std::span<const double> w,
                               const SelectionConfig& config);

std::string report_to_json(const SelectionReport& report);
SelectionReport report_from_json(const std::string& text);
void save_report(const SelectionReport& report, const std::filesystem::path& path);
SelectionReport load_report(const std::filesystem::path& path);

}  // namespace povrate::selection
