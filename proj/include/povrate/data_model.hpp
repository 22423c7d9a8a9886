#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace povrate::data {

struct Household {
  std::string household_id;
  std::string cluster_id;
  double weight = 1.0;
  // Consumption expenditure, already adjusted to household size.
  double hce = 0.0;
  bool urban = false;
  std::vector<double> responses;
};

// Encoded variable -> parent survey question. A question is the unit a
// proxy-means questionnaire pays for; several encoded variables may share one.
class QuestionMap {
 public:
  QuestionMap() = default;

  void add(const std::string& variable, const std::string& question_id);

  bool contains(const std::string& variable) const {
    return entries_.count(variable) != 0;
  }
  const std::string& question_of(const std::string& variable) const;

  // Question ids in first-insertion order.
  const std::vector<std::string>& question_ids() const { return question_ids_; }
  const std::map<std::string, std::string>& entries() const { return entries_; }

  // Variables of `question_id`, in the order they appear in `variable_order`.
  std::vector<std::string> variables_of(
      const std::string& question_id,
      std::span<const std::string> variable_order) const;

 private:
  std::map<std::string, std::string> entries_;
  std::vector<std::string> question_ids_;
};

class SurveyDataset {
 public:
  SurveyDataset() = default;
  // Labels are assigned here from hce and the poverty line and never
  // recomputed afterwards.
  SurveyDataset(std::vector<Household> households,
                std::vector<std::string> variable_names,
                QuestionMap question_map, double poverty_line);

  std::size_t size() const { return households_.size(); }
  std::size_t variable_count() const { return variable_names_.size(); }

  const std::vector<Household>& households() const { return households_; }
  const std::vector<std::string>& variable_names() const {
    return variable_names_;
  }
  const QuestionMap& question_map() const { return question_map_; }
  double poverty_line() const { return poverty_line_; }
  const std::vector<int>& labels() const { return labels_; }

  std::vector<double> weights() const;
  std::optional<std::size_t> variable_index(const std::string& name) const;

  // n x |variables| matrix of the named columns, in the given order.
  Eigen::MatrixXd design_matrix(std::span<const std::string> variables) const;
  Eigen::MatrixXd design_matrix() const;

  // Households at the given row indices, same variables.
  SurveyDataset subset(std::span<const std::size_t> rows) const;
  SurveyDataset subset_by_ids(std::span<const std::string> household_ids) const;

 private:
  std::vector<Household> households_;
  std::vector<std::string> variable_names_;
  QuestionMap question_map_;
  double poverty_line_ = 1.0;
  std::vector<int> labels_;
};

struct SplitResult {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  double train_rate = 0.0;
  double test_rate = 0.0;
  double national_rate = 0.0;
};

// Raw, not yet encoded survey column as read from an upstream extract.
struct RawColumn {
  std::string name;
  std::string question_id;
  bool categorical = false;
  std::vector<std::optional<std::string>> cells;
};

struct EncodedColumns {
  std::vector<std::string> names;
  std::vector<std::string> question_ids;
  Eigen::MatrixXd values;  // rows x names.size()
  std::vector<std::string> dropped;
};

int assign_poverty_indicator(double hce, double poverty_line);

double poverty_rate(std::span<const int> y, std::span<const double> w);
double poverty_rate(std::span<const double> y, std::span<const double> w);

// Weighted median. When the cumulative weight lands exactly on half the
// total, the two straddling values are averaged.
double weighted_median(std::span<const double> values,
                       std::span<const double> weights);

EncodedColumns encode_and_filter(std::span<const RawColumn> columns,
                                 std::span<const double> weights,
                                 std::span<const std::string> exclusions,
                                 double max_missing_frac);

QuestionMap load_question_map(const std::filesystem::path& qmap_csv);
void save_question_map(const QuestionMap& qmap,
                       std::span<const std::string> variable_order,
                       const std::filesystem::path& qmap_csv);

SurveyDataset load_survey(const std::filesystem::path& survey_csv,
                          const std::filesystem::path& qmap_csv,
                          double poverty_line);
void save_survey(const SurveyDataset& dataset,
                 const std::filesystem::path& survey_csv);

std::size_t train_size(std::size_t n, double train_frac);

SplitResult stratified_split(const SurveyDataset& dataset, double train_frac,
                             std::uint64_t seed);

inline constexpr double kSplitTolerance = 0.005;

}  // namespace povrate::data
