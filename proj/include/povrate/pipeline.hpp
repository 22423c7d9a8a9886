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

namespace povrate::pipeline {

enum class RateMode { Soft, Hard };
std::string mode_name(RateMode m);
RateMode parse_mode(const std::string& name);

enum class Stratum { All, Rural, Urban };
std::string stratum_name(Stratum s);
inline constexpr Stratum kStrata[] = {Stratum::All, Stratum::Rural, Stratum::Urban};

// Design matrix for the model's columns: dataset variables by name, then
// image columns (selection::image_column names) broadcast from `features`.
Eigen::MatrixXd design_for(std::span<const std::string> columns,
                           const data::SurveyDataset& dataset,
                           const mosaiks::FeatureMatrix* features);

// Trains on `variables` (may be empty) plus all image columns when
// `features` is given.
ebm::EbmModel train_pmt(const data::SurveyDataset& train,
                        std::span<const std::string> variables,
                        const mosaiks::FeatureMatrix* features,
                        const ebm::TrainConfig& config);

std::vector<double> predict_probs(const ebm::EbmModel& model,
                                  const data::SurveyDataset& dataset,
                                  const mosaiks::FeatureMatrix* features);

// Household predictions: probabilities, or 0/1 at `threshold`.
std::vector<double> to_predictions(std::span<const double> probs, RateMode mode,
                                   double threshold = 0.5);

double predict_rate(std::span<const double> probs, std::span<const double> weights,
                    RateMode mode = RateMode::Soft, double threshold = 0.5);

// |pr - prhat| in percentage points.
double poverty_rate_error(double pr, double pr_hat);

struct PreStats {
  double mean_pre = 0.0;
  double std_pre = 0.0;
  int n_draw = 0;
  int iters = 0;
  std::uint64_t seed = 0;

  bool operator==(const PreStats&) const = default;
};

struct BootstrapSpec {
  int n_draw = 100;
  int iters = 1000;
  std::uint64_t seed = 0;
  RateMode mode = RateMode::Soft;
  double threshold = 0.5;
};

// Resamples households of the stratum; `probs` are aligned with `test`.
PreStats bootstrap_pre(std::span<const double> probs, const data::SurveyDataset& test,
                       Stratum stratum, const BootstrapSpec& spec);

// Squared Pearson correlation of true vs predicted cluster rates.
double cluster_r2(std::span<const double> true_rates, std::span<const double> pred_rates);
double cluster_r2(std::span<const double> probs, const data::SurveyDataset& test,
                  RateMode mode = RateMode::Soft, double threshold = 0.5);

struct EvalRow {
  std::string selection;  // selection method label
  std::string inputs;     // "survey" or "survey+image"
  PreStats strata[3];     // all, rural, urban
  double cluster_r2 = 0.0;

  bool operator==(const EvalRow&) const = default;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  int n_draw = 0;
  int iters = 0;
  std::uint64_t seed = 0;
  std::string mode = "soft";

  bool operator==(const EvalReport&) const = default;
};

struct ScoredModel {
  std::string selection;
  std::string inputs;
  std::vector<double> probs;  // aligned with the test set
};

EvalReport stratified_eval(std::span<const ScoredModel> models,
                           const data::SurveyDataset& test, const BootstrapSpec& spec);

std::string eval_to_json(const EvalReport& report);
EvalReport eval_from_json(const std::string& text);
// One row per model: means and stds per stratum, then cluster r2.
std::string eval_to_csv(const EvalReport& report);

struct PcaReport {
  Eigen::MatrixXd components;  // n_components x k, orthonormal rows
  std::vector<double> explained_variance;
  std::vector<double> explained_ratio;
  std::vector<std::string> cluster_ids;
  Eigen::MatrixXd scores;  // clusters x n_components
  std::vector<std::string> variables;
  Eigen::MatrixXd correlations;  // variables x n_components
  std::vector<std::string> top_variables;
  std::vector<std::string> region_variables;
  Eigen::MatrixXd region_cross_correlations;  // top x region
};

// Pearson correlation; 0 when either side has no variance.
double pearson(std::span<const double> a, std::span<const double> b);

PcaReport pca_interpret(const mosaiks::FeatureMatrix& features,
                        const data::SurveyDataset& dataset, int n_components = 3,
                        int top_n = 10,
                        std::span<const std::string> region_variables = {});

std::string pca_to_json(const PcaReport& report);
// Variable x component correlations followed by the region columns.
std::string correlations_to_csv(const PcaReport& report);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace povrate::pipeline
