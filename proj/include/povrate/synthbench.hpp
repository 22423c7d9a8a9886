#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "povrate/data_model.hpp"
#include "povrate/ebm.hpp"
#include "povrate/imagery.hpp"
#include "povrate/pipeline.hpp"
#include "povrate/selection.hpp"

namespace povrate::synth {

// Question layout of a generated world, in order:
//   q00           regional indicator: floor(levels * (u + noise)), one variable
//   q01..         geography proxies: household-level noisy thresholds of u
//   next block    household questions independent of u that drive y
//   rest          noise; odd-numbered ones are 3-level categoricals
struct SynthConfig {
  int n_clusters = 500;
  int households_per_cluster = 10;
  int n_questions = 40;
  int tile_size = 256;
  std::uint64_t seed = 0;

  double target_rate = 0.3;
  double poverty_line = 3.0;
  double urban_threshold = 0.7;  // u above this is flagged urban

  // log-odds of poverty per unit of latent urbanization
  double urban_effect_y = -6.0;
  // checkerboard amplitude per unit of latent urbanization
  double urban_effect_texture = 0.25;
  double texture_noise = 0.01;
  // per-cluster brightness offsets, uniform over this width
  double brightness_spread = 0.01;

  int region_levels = 4;
  double region_noise = 0.25;
  int n_geo_proxies = 3;
  double geo_noise = 0.5;
  int n_household_signals = 12;
  double household_signal = 2.0;  // largest coefficient; later ones shrink

  double weight_sigma = 0.5;

  // y equals the first household question exactly.
  bool perfect_information = false;

  bool operator==(const SynthConfig&) const = default;
};

void validate(const SynthConfig& config);

struct SynthWorld {
  SynthConfig config;
  data::SurveyDataset survey;
  std::vector<imagery::RasterTile> tiles;  // one per cluster, cluster order
  std::vector<std::string> cluster_ids;
  std::vector<double> latent;  // u per cluster
  double true_rate = 0.0;      // weighted rate of the generated labels
  double intercept = 0.0;      // calibrated logistic intercept
  std::string region_variable;
  std::vector<std::string> standard_questions;
};

SynthWorld generate(const SynthConfig& config);

// Mean absolute horizontal gradient over all channels.
double texture_statistic(const imagery::RasterTile& tile);

// survey.csv, qmap.csv, tiles/<cluster>.f32 (+ .json), world.json.
void save_world(const SynthWorld& world, const std::filesystem::path& dir);
SynthWorld load_world(const std::filesystem::path& dir);

struct ProtocolConfig {
  std::uint64_t seed = 0;
  double train_frac = 0.68;

  int mosaiks_k = 128;
  int mosaiks_images = 20;
  int mosaiks_stride = 4;
  double zca_eps = 1e-6;

  int n_questions = 10;
  std::vector<ebm::TrainConfig> grid;  // empty: single lean default
  int cv_folds = 10;
  // Applied to survey+image guided selection; empty means the region variable.
  std::optional<std::vector<std::string>> exclude;

  int n_draw = 100;
  int iters = 1000;
  pipeline::RateMode mode = pipeline::RateMode::Soft;

  std::vector<int> sweep = {0, 10, 20, 30, 40, 50};
  // Also rank with image guidance and no exclusions, to track the region
  // variable's position.
  bool region_probe = true;
};

// Hyperparameters used when the protocol grid is empty.
ebm::TrainConfig lean_config();

struct SweepPoint {
  int n_questions = 0;
  std::optional<double> pre_survey;  // absent at zero questions
  double pre_image = 0.0;
  std::optional<double> r2_survey;
  double r2_image = 0.0;

  bool operator==(const SweepPoint&) const = default;
};

struct BenchReport {
  std::uint64_t seed = 0;
  double national_rate = 0.0;
  double train_rate = 0.0;
  double test_rate = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::string bank_fingerprint;
  std::vector<selection::SelectionReport> selections;  // standard, survey, survey+image
  pipeline::EvalReport eval;                           // 6 rows
  std::vector<SweepPoint> sweep;
  double pc1_latent_corr = 0.0;
  std::vector<double> explained_ratio;
  std::string region_variable;
  int region_rank_survey = 0;  // 1-based position in the survey ranking
  int region_rank_image = 0;   // 0 when the probe was not run
};

BenchReport run_benchmark(const SynthWorld& world, const ProtocolConfig& protocol);

// Pre row of the evaluation table, or throws ConfigError.
const pipeline::EvalRow& eval_row(const BenchReport& report, const std::string& selection,
                                  const std::string& inputs);

std::string report_to_json(const BenchReport& report);
// Keys and types every report carries, for schema checks.
std::vector<std::string> report_schema(const std::string& json_text);

// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(int wins, int n);

}  // namespace povrate::synth
