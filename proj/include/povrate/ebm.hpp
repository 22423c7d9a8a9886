#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace povrate::ebm {

// Per-feature ordered cut points. A value v falls in bin
// #{cuts c : c <= v}, so a feature with m cuts has m + 1 bins.
struct BinSpec {
  std::vector<std::vector<double>> cuts;

  std::size_t feature_count() const { return cuts.size(); }
  int bin_count(std::size_t feature) const {
    return static_cast<int>(cuts[feature].size()) + 1;
  }
  int bin(std::size_t feature, double value) const;

  bool operator==(const BinSpec&) const = default;
};

// Cut points at weighted quantiles, midway between adjacent distinct values.
// Columns with at most max_bins distinct values get one bin per value
// (so 0/1 columns get the single cut 0.5).
BinSpec quantile_bin(const Eigen::MatrixXd& x, std::span<const double> w,
                     int max_bins = 256);

struct TrainConfig {
  double learning_rate = 0.01;
  int n_leaves = 31;
  int n_interactions = 10;
  int n_rounds = 500;
  int max_bins = 256;
  std::uint64_t seed = 0;
  // Stop after this many rounds without validation improvement; 0 disables.
  int early_stopping_rounds = 50;
  double validation_fraction = 0.15;
  int max_pair_bins = 32;
  // Fewest fitting rows any leaf (main or pair) may hold.
  int min_samples_leaf = 20;
  // Each extra leaf must gain this many times log(cut positions) times the
  // gain expected from noise; 0 disables the penalty.
  double leaf_penalty = 2.0;

  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& config);

struct FeatureFunction {
  int feature = 0;
  std::vector<double> scores;  // log-odds contribution per bin
};

struct PairFunction {
  int first = 0;   // first < second
  int second = 0;
  int rows = 0;    // pair bins of `first`
  int cols = 0;    // pair bins of `second`
  std::vector<double> scores;  // rows x cols, row-major

  double at(int a, int b) const { return scores[static_cast<std::size_t>(a) * cols + b]; }
};

struct EbmModel {
  double intercept = 0.0;
  std::vector<FeatureFunction> feature_functions;
  std::vector<PairFunction> pair_functions;
  BinSpec bins;
  BinSpec pair_bins;
  TrainConfig config;
  std::vector<double> importance;
  std::vector<std::string> feature_names;

  // Diagnostics, not serialized: weighted NLL on the fitting rows after each
  // boosting round (entry 0 is the intercept-only model), and rounds kept.
  std::vector<double> train_loss;
  int main_rounds_used = 0;
  int pair_rounds_used = 0;

  std::size_t feature_count() const { return feature_functions.size(); }
};

EbmModel train_ebm(const Eigen::MatrixXd& x, std::span<const int> y,
                   std::span<const double> w, const TrainConfig& config,
                   std::vector<std::string> feature_names = {});

// Additive score: intercept + sum of main-effect and pair scores.
double predict_logit(const EbmModel& model, std::span<const double> x);
double predict_proba(const EbmModel& model, std::span<const double> x);
std::vector<double> predict_proba(const EbmModel& model, const Eigen::MatrixXd& x);

// Weighted mean |score| per feature over the rows of x; each pair term
// credits half of its |score| to both members.
std::vector<double> feature_importance(const EbmModel& model,
                                       const Eigen::MatrixXd& x,
                                       std::span<const double> w);

double weighted_log_loss(std::span<const int> y, std::span<const double> prob,
                         std::span<const double> w);

// Stratified k-way fold assignment (fold index per row).
std::vector<int> stratified_folds(std::span<const int> y, int k,
                                  std::uint64_t seed);

struct CvResult {
  TrainConfig best;
  std::size_t best_index = 0;
  std::vector<double> mean_loss;  // per grid entry
  std::size_t fits = 0;
};

CvResult cross_validate(const Eigen::MatrixXd& x, std::span<const int> y,
                        std::span<const double> w,
                        const std::vector<TrainConfig>& grid, int k,
                        std::uint64_t seed);

// learning rate x leaves x interactions, in that nesting order.
std::vector<TrainConfig> full_grid(const TrainConfig& base = {});

std::string config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const std::string& text);

std::string model_to_json(const EbmModel& model);
EbmModel model_from_json(const std::string& text);
void save_model(const EbmModel& model, const std::filesystem::path& path);
EbmModel load_model(const std::filesystem::path& path);

}  // namespace povrate::ebm
