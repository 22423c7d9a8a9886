#include "povrate/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "csv.hpp"
#include "povrate/error.hpp"
#include "povrate/kernels.hpp"
#include "povrate/selection.hpp"

namespace povrate::pipeline {

using nlohmann::json;

std::string mode_name(RateMode m) { return m == RateMode::Soft ? "soft" : "hard"; }

RateMode parse_mode(const std::string& name) {
  if (name == "soft") return RateMode::Soft;
  if (name == "hard") return RateMode::Hard;
  throw Error(Errc::ConfigError, "unknown rate mode '" + name + "'");
}

std::string stratum_name(Stratum s) {
  switch (s) {
    case Stratum::All: return "all";
    case Stratum::Rural: return "rural";
    case Stratum::Urban: return "urban";
  }
  return "all";
}

namespace {

// Image column index from its name, or -1.
long image_index(const std::string& name) {
  if (name.rfind("img_", 0) != 0) return -1;
  long v = -1;
  const auto* b = name.data() + 4;
  const auto* e = name.data() + name.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) return -1;
  return v;
}

}  // namespace

Eigen::MatrixXd design_for(std::span<const std::string> columns,
                           const data::SurveyDataset& dataset,
                           const mosaiks::FeatureMatrix* features) {
  const auto n = static_cast<Eigen::Index>(dataset.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(columns.size()));
  Eigen::MatrixXd img;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    if (const auto v = dataset.variable_index(columns[j])) {
      for (Eigen::Index i = 0; i < n; ++i)
        x(i, col) = dataset.households()[static_cast<std::size_t>(i)].responses[*v];
      continue;
    }
    const long k = image_index(columns[j]);
    if (k < 0) {
      throw Error(Errc::MissingQuestion, "column '" + columns[j] + "' not in the dataset");
    }
    if (!features) {
      throw Error(Errc::MissingClusterFeatures,
                  "model needs image features but none were supplied");
    }
    if (k >= features->values.cols()) {
      throw Error(Errc::ShapeError, "image column '" + columns[j] + "' out of range");
    }
    if (img.size() == 0) img = selection::broadcast_features(dataset, *features);
    x.col(col) = img.col(k);
  }
  return x;
}

ebm::EbmModel train_pmt(const data::SurveyDataset& train,
                        std::span<const std::string> variables,
                        const mosaiks::FeatureMatrix* features,
                        const ebm::TrainConfig& config) {
  std::vector<std::string> cols(variables.begin(), variables.end());
  if (features)
    for (Eigen::Index j = 0; j < features->values.cols(); ++j)
      cols.push_back(selection::image_column(static_cast<std::size_t>(j)));
  if (cols.empty()) {
    throw Error(Errc::EmptyFeatureSet, "PMT needs survey variables or image features");
  }
  const auto x = design_for(cols, train, features);
  return ebm::train_ebm(x, train.labels(), train.weights(), config, std::move(cols));
}

std::vector<double> predict_probs(const ebm::EbmModel& model,
                                  const data::SurveyDataset& dataset,
                                  const mosaiks::FeatureMatrix* features) {
  if (model.feature_names.size() != model.feature_count()) {
    throw Error(Errc::ShapeError, "model has no column names");
  }
  return ebm::predict_proba(model, design_for(model.feature_names, dataset, features));
}

std::vector<double> to_predictions(std::span<const double> probs, RateMode mode,
                                   double threshold) {
  std::vector<double> out(probs.begin(), probs.end());
  if (mode == RateMode::Hard)
    for (auto& p : out) p = p >= threshold ? 1.0 : 0.0;
  return out;
}

double predict_rate(std::span<const double> probs, std::span<const double> weights,
                    RateMode mode, double threshold) {
  if (probs.empty()) throw Error(Errc::EmptyGroup, "no households to predict");
  const auto yhat = to_predictions(probs, mode, threshold);
  return data::poverty_rate(std::span<const double>(yhat), weights);
}

double poverty_rate_error(double pr, double pr_hat) {
  if (!(pr >= 0.0 && pr <= 1.0) || !(pr_hat >= 0.0 && pr_hat <= 1.0)) {
    throw Error(Errc::InvalidRate, "rates must lie in [0, 1]");
  }
  return 100.0 * std::abs(pr - pr_hat);
}

PreStats bootstrap_pre(std::span<const double> probs, const data::SurveyDataset& test,
                       Stratum stratum, const BootstrapSpec& spec) {
  if (probs.size() != test.size()) {
    throw Error(Errc::ShapeError, "predictions and test set differ in length");
  }
  std::vector<double> truth, pred, w;
  const auto yhat = to_predictions(probs, spec.mode, spec.threshold);
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& h = test.households()[i];
    if (stratum == Stratum::Urban && !h.urban) continue;
    if (stratum == Stratum::Rural && h.urban) continue;
    truth.push_back(test.labels()[i]);
    pred.push_back(yhat[i]);
    w.push_back(h.weight);
  }
  if (truth.empty()) {
    throw Error(Errc::EmptyGroup, "no test households in stratum " + stratum_name(stratum));
  }
  const auto s = kernels::bootstrap_parallel({truth, pred, w}, spec.n_draw, spec.iters,
                                             spec.seed);
  return {s.mean_pre, s.std_pre, spec.n_draw, spec.iters, spec.seed};
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(Errc::ShapeError, "correlation inputs differ");
  const auto n = static_cast<double>(a.size());
  if (a.empty()) return 0.0;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double cluster_r2(std::span<const double> t, std::span<const double> p) {
  if (t.size() != p.size()) throw Error(Errc::ShapeError, "cluster rate vectors differ");
  if (t.size() < 2) throw Error(Errc::DegenerateVariance, "need at least two clusters");
  auto flat = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
  };
  if (flat(t) || flat(p)) {
    throw Error(Errc::DegenerateVariance, "cluster rates have zero variance");
  }
  const double r = pearson(t, p);
  return r * r;
}

double cluster_r2(std::span<const double> probs, const data::SurveyDataset& test,
                  RateMode mode, double threshold) {
  if (probs.size() != test.size()) {
    throw Error(Errc::ShapeError, "predictions and test set differ in length");
  }
  const auto yhat = to_predictions(probs, mode, threshold);
  std::map<std::string, std::size_t> index;
  std::vector<double> wy, wp, ws;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& h = test.households()[i];
    auto [it, fresh] = index.emplace(h.cluster_id, ws.size());
    if (fresh) {
      wy.push_back(0.0);
      wp.push_back(0.0);
      ws.push_back(0.0);
    }
    wy[it->second] += h.weight * test.labels()[i];
    wp[it->second] += h.weight * yhat[i];
    ws[it->second] += h.weight;
  }
  for (std::size_t c = 0; c < ws.size(); ++c) {
    wy[c] /= ws[c];
    wp[c] /= ws[c];
  }
  return cluster_r2(wy, wp);
}

EvalReport stratified_eval(std::span<const ScoredModel> models,
                           const data::SurveyDataset& test, const BootstrapSpec& spec) {
  EvalReport report;
  report.n_draw = spec.n_draw;
  report.iters = spec.iters;
  report.seed = spec.seed;
  report.mode = mode_name(spec.mode);
  for (const auto& m : models) {
    EvalRow row;
    row.selection = m.selection;
    row.inputs = m.inputs;
    for (std::size_t s = 0; s < 3; ++s) row.strata[s] = bootstrap_pre(m.probs, test, kStrata[s], spec);
    row.cluster_r2 = cluster_r2(m.probs, test, spec.mode, spec.threshold);
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string eval_to_json(const EvalReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json strata = json::object();
    for (std::size_t s = 0; s < 3; ++s)
      strata[stratum_name(kStrata[s])] = {{"mean_pre", row.strata[s].mean_pre},
                                          {"std_pre", row.strata[s].std_pre}};
    rows.push_back({{"selection", row.selection},
                    {"inputs", row.inputs},
                    {"pre", strata},
                    {"cluster_r2", row.cluster_r2}});
  }
  json j = {{"rows", rows},
            {"n_bootstrap", r.iters},
            {"n_draw", r.n_draw},
            {"seed", r.seed},
            {"mode", r.mode}};
  return j.dump(2);
}

EvalReport eval_from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    EvalReport r;
    r.iters = j.at("n_bootstrap").get<int>();
    r.n_draw = j.at("n_draw").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.mode = j.at("mode").get<std::string>();
    for (const auto& jr : j.at("rows")) {
      EvalRow row;
      row.selection = jr.at("selection").get<std::string>();
      row.inputs = jr.at("inputs").get<std::string>();
      for (std::size_t s = 0; s < 3; ++s) {
        const auto& js = jr.at("pre").at(stratum_name(kStrata[s]));
        row.strata[s] = {js.at("mean_pre").get<double>(), js.at("std_pre").get<double>(),
                         r.n_draw, r.iters, r.seed};
      }
      row.cluster_r2 = jr.at("cluster_r2").get<double>();
      r.rows.push_back(std::move(row));
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::IoError, std::string("bad evaluation report: ") + e.what());
  }
}

std::string eval_to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "selection,inputs";
  for (auto s : kStrata) out << ',' << stratum_name(s) << "_mean," << stratum_name(s) << "_std";
  out << ",cluster_r2\n";
  for (const auto& row : r.rows) {
    out << row.selection << ',' << row.inputs;
    for (const auto& s : row.strata)
      out << ',' << csv::format_double(s.mean_pre) << ',' << csv::format_double(s.std_pre);
    out << ',' << csv::format_double(row.cluster_r2) << '\n';
  }
  return out.str();
}

PcaReport pca_interpret(const mosaiks::FeatureMatrix& features,
                        const data::SurveyDataset& dataset, int n_components, int top_n,
                        std::span<const std::string> region_variables) {
  const auto& x = features.values;
  const auto nc = static_cast<Eigen::Index>(n_components);
  if (n_components < 1 || top_n < 0) throw Error(Errc::ConfigError, "bad PCA sizes");
  if (x.rows() < nc + 1 || x.cols() < nc) {
    throw Error(Errc::RankDeficient, "too few clusters or features for " +
                                         std::to_string(n_components) + " components");
  }
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error(Errc::NumericalError, "PCA eigensolver failed");
  const auto k = x.cols();
  const double top = eig.eigenvalues()(k - 1);
  const double trace = eig.eigenvalues().sum();
  if (!(top > 0.0) || eig.eigenvalues()(k - nc) <= 1e-12 * top) {
    throw Error(Errc::RankDeficient, "feature matrix has rank below " +
                                         std::to_string(n_components));
  }

  PcaReport r;
  r.components.resize(nc, k);
  for (Eigen::Index c = 0; c < nc; ++c) {
    Eigen::VectorXd v = eig.eigenvectors().col(k - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    r.components.row(c) = v.transpose();
    r.explained_variance.push_back(eig.eigenvalues()(k - 1 - c));
    r.explained_ratio.push_back(eig.eigenvalues()(k - 1 - c) / trace);
  }
  r.cluster_ids = features.cluster_ids;
  r.scores = centered * r.components.transpose();

  // household-level scores
  const auto n = dataset.size();
  std::vector<std::vector<double>> hs(static_cast<std::size_t>(nc), std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& cid = dataset.households()[i].cluster_id;
    const auto row = features.row_of(cid);
    if (row < 0) throw Error(Errc::MissingClusterFeatures, "no image features for cluster " + cid);
    for (Eigen::Index c = 0; c < nc; ++c) hs[static_cast<std::size_t>(c)][i] = r.scores(row, c);
  }
  r.variables = dataset.variable_names();
  const auto p = r.variables.size();
  std::vector<std::vector<double>> cols(p, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) cols[j][i] = dataset.households()[i].responses[j];
  r.correlations.resize(static_cast<Eigen::Index>(p), nc);
  std::vector<double> strength(p, 0.0);
  for (std::size_t j = 0; j < p; ++j)
    for (Eigen::Index c = 0; c < nc; ++c) {
      const double v = pearson(hs[static_cast<std::size_t>(c)], cols[j]);
      r.correlations(static_cast<Eigen::Index>(j), c) = v;
      strength[j] = std::max(strength[j], std::abs(v));
    }
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return strength[a] > strength[b]; });
  std::vector<std::size_t> top_idx(order.begin(),
                                   order.begin() + std::min<std::size_t>(p, static_cast<std::size_t>(top_n)));
  for (auto j : top_idx) r.top_variables.push_back(r.variables[j]);

  r.region_variables.assign(region_variables.begin(), region_variables.end());
  r.region_cross_correlations.resize(static_cast<Eigen::Index>(top_idx.size()),
                                     static_cast<Eigen::Index>(r.region_variables.size()));
  for (std::size_t g = 0; g < r.region_variables.size(); ++g) {
    const auto idx = dataset.variable_index(r.region_variables[g]);
    if (!idx) {
      throw Error(Errc::MissingQuestion,
                  "regional variable '" + r.region_variables[g] + "' not in the dataset");
    }
    for (std::size_t t = 0; t < top_idx.size(); ++t)
      r.region_cross_correlations(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(g)) =
          pearson(cols[top_idx[t]], cols[*idx]);
  }
  return r;
}

namespace {

json matrix_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
    out.push_back(row);
  }
  return out;
}

}  // namespace

std::string pca_to_json(const PcaReport& r) {
  json j = {{"components", matrix_json(r.components)},
            {"explained_variance", r.explained_variance},
            {"explained_ratio", r.explained_ratio},
            {"cluster_ids", r.cluster_ids},
            {"scores", matrix_json(r.scores)},
            {"variables", r.variables},
            {"correlations", matrix_json(r.correlations)},
            {"top_variables", r.top_variables},
            {"region_variables", r.region_variables},
            {"region_cross_correlations", matrix_json(r.region_cross_correlations)}};
  return j.dump(2);
}

std::string correlations_to_csv(const PcaReport& r) {
  std::ostringstream out;
  out << "variable";
  for (Eigen::Index c = 0; c < r.correlations.cols(); ++c) out << ",pc" << c + 1;
  for (const auto& g : r.region_variables) out << ",region:" << g;
  out << '\n';
  for (std::size_t j = 0; j < r.variables.size(); ++j) {
    out << r.variables[j];
    for (Eigen::Index c = 0; c < r.correlations.cols(); ++c)
      out << ',' << csv::format_double(r.correlations(static_cast<Eigen::Index>(j), c));
    const auto t = std::find(r.top_variables.begin(), r.top_variables.end(), r.variables[j]);
    for (std::size_t g = 0; g < r.region_variables.size(); ++g) {
      out << ',';
      if (t != r.top_variables.end())
        out << csv::format_double(r.region_cross_correlations(t - r.top_variables.begin(),
                                                              static_cast<Eigen::Index>(g)));
    }
    out << '\n';
  }
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace povrate::pipeline
