#include "povrate/data_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "csv.hpp"
#include "povrate/error.hpp"
#include "povrate/random.hpp"

namespace povrate::data {

void QuestionMap::add(const std::string& variable,
                      const std::string& question_id) {
  if (!entries_.emplace(variable, question_id).second) {
    throw Error(Errc::DuplicateId,
                "variable '" + variable + "' mapped twice in question map");
  }
  if (std::find(question_ids_.begin(), question_ids_.end(), question_id) ==
      question_ids_.end()) {
    question_ids_.push_back(question_id);
  }
}

const std::string& QuestionMap::question_of(const std::string& variable) const {
  auto it = entries_.find(variable);
  if (it == entries_.end()) {
    throw Error(Errc::MissingQuestion,
                "variable '" + variable + "' has no question");
  }
  return it->second;
}

std::vector<std::string> QuestionMap::variables_of(
    const std::string& question_id,
    std::span<const std::string> variable_order) const {
  std::vector<std::string> out;
  for (const auto& v : variable_order) {
    auto it = entries_.find(v);
    if (it != entries_.end() && it->second == question_id) out.push_back(v);
  }
  return out;
}

int assign_poverty_indicator(double hce, double poverty_line) {
  if (!(hce >= 0.0)) {
    throw Error(Errc::InvalidExpenditure,
                "negative or non-finite expenditure " + csv::format_double(hce));
  }
  if (!(poverty_line > 0.0)) {
    throw Error(Errc::ConfigError, "poverty line must be positive");
  }
  return hce <= poverty_line ? 1 : 0;
}

namespace {

template <typename T>
double weighted_mean(std::span<const T> y, std::span<const double> w) {
  if (y.empty()) throw Error(Errc::EmptyGroup, "poverty rate of empty group");
  if (y.size() != w.size()) {
    throw Error(Errc::ShapeError, "labels and weights differ in length");
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(w[i] > 0.0)) {
      throw Error(Errc::InvalidWeight, "nonpositive weight at row " +
                                           std::to_string(i));
    }
    num += w[i] * static_cast<double>(y[i]);
    den += w[i];
  }
  return num / den;
}

}  // namespace

double poverty_rate(std::span<const int> y, std::span<const double> w) {
  return weighted_mean(y, w);
}

double poverty_rate(std::span<const double> y, std::span<const double> w) {
  return weighted_mean(y, w);
}

double weighted_median(std::span<const double> values,
                       std::span<const double> weights) {
  if (values.empty()) throw Error(Errc::EmptyGroup, "median of empty column");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return values[a] < values[b];
  });
  const double total =
      std::accumulate(weights.begin(), weights.end(), 0.0);
  const double half = 0.5 * total;
  double cum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    cum += weights[order[k]];
    if (cum == half && k + 1 < order.size()) {
      return 0.5 * (values[order[k]] + values[order[k + 1]]);
    }
    if (cum >= half) return values[order[k]];
  }
  return values[order.back()];
}

EncodedColumns encode_and_filter(std::span<const RawColumn> columns,
                                 std::span<const double> weights,
                                 std::span<const std::string> exclusions,
                                 double max_missing_frac) {
  const std::size_t n = weights.size();
  const std::unordered_set<std::string> excluded(exclusions.begin(),
                                                 exclusions.end());
  EncodedColumns out;
  std::vector<std::vector<double>> kept;

  for (const auto& col : columns) {
    if (col.cells.size() != n) {
      throw Error(Errc::ShapeError, "column '" + col.name + "' has " +
                                        std::to_string(col.cells.size()) +
                                        " cells, expected " + std::to_string(n));
    }
    if (excluded.count(col.name)) {
      out.dropped.push_back(col.name);
      continue;
    }
    const auto missing = static_cast<std::size_t>(
        std::count_if(col.cells.begin(), col.cells.end(),
                      [](const auto& c) { return !c.has_value(); }));
    if (n == 0 || missing == n ||
        static_cast<double>(missing) / static_cast<double>(n) >
            max_missing_frac) {
      out.dropped.push_back(col.name);
      continue;
    }

    if (col.categorical) {
      std::set<std::string> levels;
      for (const auto& c : col.cells)
        if (c) levels.insert(*c);
      for (const auto& level : levels) {
        std::vector<double> ind(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          if (col.cells[i] && *col.cells[i] == level) ind[i] = 1.0;
        out.names.push_back(col.name + "=" + level);
        out.question_ids.push_back(col.question_id);
        kept.push_back(std::move(ind));
      }
    } else {
      std::vector<double> vals(n, 0.0);
      std::vector<double> obs, obs_w;
      for (std::size_t i = 0; i < n; ++i) {
        if (col.cells[i]) {
          vals[i] = csv::parse_double(*col.cells[i]);
          obs.push_back(vals[i]);
          obs_w.push_back(weights[i]);
        }
      }
      if (obs.size() < n) {
        const double fill = weighted_median(obs, obs_w);
        for (std::size_t i = 0; i < n; ++i)
          if (!col.cells[i]) vals[i] = fill;
      }
      out.names.push_back(col.name);
      out.question_ids.push_back(col.question_id);
      kept.push_back(std::move(vals));
    }
  }

  if (kept.empty()) {
    throw Error(Errc::EmptyFeatureSet, "every survey column was dropped");
  }
  out.values.resize(static_cast<Eigen::Index>(n),
                    static_cast<Eigen::Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); ++j)
    for (std::size_t i = 0; i < n; ++i)
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          kept[j][i];
  return out;
}

SurveyDataset::SurveyDataset(std::vector<Household> households,
                             std::vector<std::string> variable_names,
                             QuestionMap question_map, double poverty_line)
    : households_(std::move(households)),
      variable_names_(std::move(variable_names)),
      question_map_(std::move(question_map)),
      poverty_line_(poverty_line) {
  if (!(poverty_line_ > 0.0)) {
    throw Error(Errc::ConfigError, "poverty line must be positive");
  }
  std::unordered_set<std::string> seen;
  labels_.reserve(households_.size());
  for (const auto& h : households_) {
    if (!seen.insert(h.household_id).second) {
      throw Error(Errc::DuplicateId,
                  "duplicate household_id '" + h.household_id + "'");
    }
    if (!(h.weight > 0.0)) {
      throw Error(Errc::InvalidWeight,
                  "household '" + h.household_id + "' has nonpositive weight");
    }
    if (h.responses.size() != variable_names_.size()) {
      throw Error(Errc::ShapeError, "household '" + h.household_id +
                                        "' response count mismatch");
    }
    labels_.push_back(assign_poverty_indicator(h.hce, poverty_line_));
  }
  for (const auto& v : variable_names_) {
    if (!question_map_.contains(v)) {
      throw Error(Errc::MissingQuestion,
                  "variable '" + v + "' is absent from the question map");
    }
  }
}

std::vector<double> SurveyDataset::weights() const {
  std::vector<double> w;
  w.reserve(households_.size());
  for (const auto& h : households_) w.push_back(h.weight);
  return w;
}

std::optional<std::size_t> SurveyDataset::variable_index(
    const std::string& name) const {
  auto it = std::find(variable_names_.begin(), variable_names_.end(), name);
  if (it == variable_names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - variable_names_.begin());
}

Eigen::MatrixXd SurveyDataset::design_matrix(
    std::span<const std::string> variables) const {
  std::vector<std::size_t> cols;
  cols.reserve(variables.size());
  for (const auto& v : variables) {
    auto idx = variable_index(v);
    if (!idx) throw Error(Errc::ShapeError, "unknown variable '" + v + "'");
    cols.push_back(*idx);
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(households_.size()),
                    static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < households_.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          households_[i].responses[cols[j]];
  return x;
}

Eigen::MatrixXd SurveyDataset::design_matrix() const {
  return design_matrix(variable_names_);
}

SurveyDataset SurveyDataset::subset(std::span<const std::size_t> rows) const {
  SurveyDataset out;
  out.variable_names_ = variable_names_;
  out.question_map_ = question_map_;
  out.poverty_line_ = poverty_line_;
  out.households_.reserve(rows.size());
  out.labels_.reserve(rows.size());
  for (auto r : rows) {
    out.households_.push_back(households_.at(r));
    out.labels_.push_back(labels_.at(r));
  }
  return out;
}

SurveyDataset SurveyDataset::subset_by_ids(
    std::span<const std::string> household_ids) const {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < households_.size(); ++i)
    index.emplace(households_[i].household_id, i);
  std::vector<std::size_t> rows;
  rows.reserve(household_ids.size());
  for (const auto& id : household_ids) {
    auto it = index.find(id);
    if (it == index.end())
      throw Error(Errc::ShapeError, "unknown household '" + id + "'");
    rows.push_back(it->second);
  }
  return subset(rows);
}

QuestionMap load_question_map(const std::filesystem::path& qmap_csv) {
  const auto table = csv::read(qmap_csv);
  if (table.header.size() < 2 || table.header[0] != "variable" ||
      table.header[1] != "question_id") {
    throw Error(Errc::IoError,
                qmap_csv.string() + ": header must be variable,question_id");
  }
  QuestionMap qmap;
  for (const auto& row : table.rows) qmap.add(row[0], row[1]);
  if (qmap.question_ids().empty()) {
    throw Error(Errc::MissingQuestion, qmap_csv.string() + " has no entries");
  }
  return qmap;
}

void save_question_map(const QuestionMap& qmap,
                       std::span<const std::string> variable_order,
                       const std::filesystem::path& qmap_csv) {
  csv::Table t;
  t.header = {"variable", "question_id"};
  for (const auto& v : variable_order) t.rows.push_back({v, qmap.question_of(v)});
  csv::write(qmap_csv, t);
}

namespace {

constexpr std::array<const char*, 5> kFixedColumns = {
    "household_id", "cluster_id", "weight", "hce", "urban"};

bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true" || s == "TRUE" || s == "True") return true;
  if (s == "0" || s == "false" || s == "FALSE" || s == "False") return false;
  throw Error(Errc::IoError, "not a boolean: '" + s + "'");
}

}  // namespace

SurveyDataset load_survey(const std::filesystem::path& survey_csv,
                          const std::filesystem::path& qmap_csv,
                          double poverty_line) {
  const auto table = csv::read(survey_csv);
  const auto qmap = load_question_map(qmap_csv);

  std::array<std::size_t, kFixedColumns.size()> fixed_idx{};
  for (std::size_t k = 0; k < kFixedColumns.size(); ++k) {
    auto it = std::find(table.header.begin(), table.header.end(),
                        kFixedColumns[k]);
    if (it == table.header.end()) {
      throw Error(Errc::IoError, survey_csv.string() + ": missing column " +
                                     kFixedColumns[k]);
    }
    fixed_idx[k] = static_cast<std::size_t>(it - table.header.begin());
  }
  std::vector<std::size_t> var_cols;
  std::vector<std::string> var_names;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (std::find(fixed_idx.begin(), fixed_idx.end(), c) != fixed_idx.end())
      continue;
    if (!qmap.contains(table.header[c])) {
      throw Error(Errc::MissingQuestion, "column '" + table.header[c] +
                                             "' is absent from the question map");
    }
    var_cols.push_back(c);
    var_names.push_back(table.header[c]);
  }

  const std::size_t n = table.rows.size();
  std::vector<Household> households(n);
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = table.rows[i];
    auto& h = households[i];
    h.household_id = row[fixed_idx[0]];
    if (!seen.insert(h.household_id).second) {
      throw Error(Errc::DuplicateId,
                  "duplicate household_id '" + h.household_id + "'");
    }
    h.cluster_id = row[fixed_idx[1]];
    h.weight = csv::parse_double(row[fixed_idx[2]]);
    if (!(h.weight > 0.0)) {
      throw Error(Errc::InvalidWeight,
                  "household '" + h.household_id + "' has nonpositive weight");
    }
    h.hce = csv::parse_double(row[fixed_idx[3]]);
    h.urban = parse_bool(row[fixed_idx[4]]);
  }

  // Empty cells are imputed with the weighted column median.
  for (std::size_t j = 0; j < var_cols.size(); ++j) {
    std::vector<double> obs, obs_w;
    std::vector<bool> missing(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& cell = table.rows[i][var_cols[j]];
      if (cell.empty()) {
        missing[i] = true;
        households[i].responses.push_back(0.0);
      } else {
        const double v = csv::parse_double(cell);
        households[i].responses.push_back(v);
        obs.push_back(v);
        obs_w.push_back(households[i].weight);
      }
    }
    if (obs.empty() && n > 0) {
      throw Error(Errc::EmptyFeatureSet,
                  "column '" + var_names[j] + "' is entirely missing");
    }
    if (obs.size() < n) {
      const double fill = weighted_median(obs, obs_w);
      for (std::size_t i = 0; i < n; ++i)
        if (missing[i]) households[i].responses[j] = fill;
    }
  }

  return SurveyDataset(std::move(households), std::move(var_names), qmap,
                       poverty_line);
}

void save_survey(const SurveyDataset& dataset,
                 const std::filesystem::path& survey_csv) {
  csv::Table t;
  t.header.assign(kFixedColumns.begin(), kFixedColumns.end());
  t.header.insert(t.header.end(), dataset.variable_names().begin(),
                  dataset.variable_names().end());
  for (const auto& h : dataset.households()) {
    std::vector<std::string> row = {h.household_id, h.cluster_id,
                                    csv::format_double(h.weight),
                                    csv::format_double(h.hce),
                                    h.urban ? "1" : "0"};
    for (double v : h.responses) row.push_back(csv::format_double(v));
    t.rows.push_back(std::move(row));
  }
  csv::write(survey_csv, t);
}

std::size_t train_size(std::size_t n, double train_frac) {
  // Round half up.
  return static_cast<std::size_t>(
      std::floor(train_frac * static_cast<double>(n) + 0.5));
}

namespace {

struct Member {
  std::size_t row;
  double weight;
};

// Weighted poor mass of the train set minus national_rate times its total
// mass; zero means the train rate equals the national rate exactly, and then
// so does the test rate.
double rate_gap(double poor_mass, double total_mass, double national) {
  return poor_mass - national * total_mass;
}

}  // namespace

SplitResult stratified_split(const SurveyDataset& dataset, double train_frac,
                             std::uint64_t seed) {
  const auto& y = dataset.labels();
  const auto w = dataset.weights();
  const std::size_t n = dataset.size();

  std::array<std::vector<Member>, 2> strata;  // [0] non-poor, [1] poor
  for (std::size_t i = 0; i < n; ++i) strata[y[i]].push_back({i, w[i]});
  if (strata[0].size() < 10 || strata[1].size() < 10) {
    throw Error(Errc::StratificationFailure,
                "need at least 10 poor and 10 non-poor households, have " +
                    std::to_string(strata[1].size()) + " poor and " +
                    std::to_string(strata[0].size()) + " non-poor");
  }

  const double national = poverty_rate(std::span<const int>(y), w);
  const std::size_t n_train = train_size(n, train_frac);
  const std::size_t n_train_poor = std::min(
      strata[1].size(),
      static_cast<std::size_t>(std::llround(static_cast<double>(n_train) *
                                            static_cast<double>(strata[1].size()) /
                                            static_cast<double>(n))));
  const std::size_t n_train_nonpoor = n_train - n_train_poor;
  if (n_train_nonpoor > strata[0].size()) {
    throw Error(Errc::StratificationFailure, "train fraction too large");
  }

  // Proportional allocation: shuffle each stratum and take a prefix.
  auto rng = make_rng(seed, 1);
  std::array<std::vector<Member>, 2> train, test;
  const std::array<std::size_t, 2> take = {n_train_nonpoor, n_train_poor};
  for (int s = 0; s < 2; ++s) {
    auto members = strata[s];
    shuffle(members.begin(), members.end(), rng);
    train[s].assign(members.begin(), members.begin() + take[s]);
    test[s].assign(members.begin() + take[s], members.end());
  }

  auto mass = [](const std::vector<Member>& v) {
    double m = 0.0;
    for (const auto& x : v) m += x.weight;
    return m;
  };
  double poor_mass = mass(train[1]);
  double total_mass = poor_mass + mass(train[0]);
  const double all_mass = std::accumulate(w.begin(), w.end(), 0.0);

  // Within-stratum swaps preserve the allocation counts while moving weight.
  // Swapping a in train for b in test changes the gap by (1-r)(w_b-w_a) in
  // the poor stratum and by -r(w_b-w_a) in the non-poor stratum.
  const double target_precision = 1e-4;
  for (int iter = 0; iter < 2000; ++iter) {
    const double gap = rate_gap(poor_mass, total_mass, national);
    const double train_dev = std::abs(gap) / total_mass;
    const double test_dev = std::abs(gap) / (all_mass - total_mass);
    if (std::max(train_dev, test_dev) <= target_precision) break;

    double best_gap = std::abs(gap);
    int best_s = -1;
    std::size_t best_a = 0, best_b = 0;
    for (int s = 0; s < 2; ++s) {
      const double slope = s == 1 ? (1.0 - national) : -national;
      if (slope == 0.0 || train[s].empty() || test[s].empty()) continue;
      // desired w_b - w_a
      const double want = -gap / slope;
      std::vector<std::size_t> order(test[s].size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](auto a, auto b) {
        return test[s][a].weight < test[s][b].weight ||
               (test[s][a].weight == test[s][b].weight && a < b);
      });
      for (std::size_t a = 0; a < train[s].size(); ++a) {
        const double target = train[s][a].weight + want;
        auto it = std::lower_bound(order.begin(), order.end(), target,
                                   [&](std::size_t idx, double t) {
                                     return test[s][idx].weight < t;
                                   });
        for (auto cand : {it, it == order.begin() ? it : std::prev(it)}) {
          if (cand == order.end()) continue;
          const double delta = test[s][*cand].weight - train[s][a].weight;
          const double g = std::abs(gap + slope * delta);
          if (g < best_gap) {
            best_gap = g;
            best_s = s;
            best_a = a;
            best_b = *cand;
          }
        }
      }
    }
    if (best_s < 0) break;
    const double delta =
        test[best_s][best_b].weight - train[best_s][best_a].weight;
    std::swap(train[best_s][best_a], test[best_s][best_b]);
    total_mass += delta;
    if (best_s == 1) poor_mass += delta;
  }

  SplitResult result;
  result.national_rate = national;
  std::vector<std::size_t> train_rows, test_rows;
  for (int s = 0; s < 2; ++s) {
    for (const auto& m : train[s]) train_rows.push_back(m.row);
    for (const auto& m : test[s]) test_rows.push_back(m.row);
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());

  auto rate_of = [&](const std::vector<std::size_t>& rows) {
    std::vector<int> yy;
    std::vector<double> ww;
    for (auto r : rows) {
      yy.push_back(y[r]);
      ww.push_back(w[r]);
    }
    return poverty_rate(std::span<const int>(yy), ww);
  };
  result.train_rate = rate_of(train_rows);
  result.test_rate = test_rows.empty() ? national : rate_of(test_rows);
  for (auto r : train_rows)
    result.train_ids.push_back(dataset.households()[r].household_id);
  for (auto r : test_rows)
    result.test_ids.push_back(dataset.households()[r].household_id);

  if (std::abs(result.train_rate - national) > kSplitTolerance ||
      std::abs(result.test_rate - national) > kSplitTolerance) {
    throw Error(Errc::StratificationFailure,
                "achieved train rate " + csv::format_double(result.train_rate) +
                    ", test rate " + csv::format_double(result.test_rate) +
                    ", national rate " + csv::format_double(national));
  }
  return result;
}

}  // namespace povrate::data
