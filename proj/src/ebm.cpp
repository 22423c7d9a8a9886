#include "povrate/ebm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "povrate/error.hpp"
#include "povrate/random.hpp"

namespace povrate::ebm {

namespace {

double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

double softplus(double s) {
  return s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
}

}  // namespace

int BinSpec::bin(std::size_t feature, double value) const {
  const auto& c = cuts[feature];
  return static_cast<int>(std::upper_bound(c.begin(), c.end(), value) - c.begin());
}

BinSpec quantile_bin(const Eigen::MatrixXd& x, std::span<const double> w,
                     int max_bins) {
  if (max_bins < 2) throw Error(Errc::ConfigError, "max_bins must be >= 2");
  if (x.rows() < 1) throw Error(Errc::EmptyGroup, "binning needs at least one row");
  if (static_cast<Eigen::Index>(w.size()) != x.rows()) {
    throw Error(Errc::ShapeError, "weights and rows differ in length");
  }
  BinSpec spec;
  spec.cuts.resize(static_cast<std::size_t>(x.cols()));
  std::vector<std::pair<double, double>> vw(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double v = x(i, f);
      if (!std::isfinite(v)) {
        throw Error(Errc::NumericalError,
                    "non-finite value in feature " + std::to_string(f));
      }
      vw[static_cast<std::size_t>(i)] = {v, w[static_cast<std::size_t>(i)]};
    }
    std::sort(vw.begin(), vw.end());
    std::vector<double> values, mass;
    for (const auto& [v, wt] : vw) {
      if (values.empty() || v != values.back()) {
        values.push_back(v);
        mass.push_back(wt);
      } else {
        mass.back() += wt;
      }
    }
    auto& cuts = spec.cuts[static_cast<std::size_t>(f)];
    const auto u = values.size();
    if (u <= static_cast<std::size_t>(max_bins)) {
      for (std::size_t k = 0; k + 1 < u; ++k)
        cuts.push_back(0.5 * (values[k] + values[k + 1]));
      continue;
    }
    const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
    std::size_t idx = 0;
    double cum = mass[0];
    for (int q = 1; q < max_bins; ++q) {
      const double target = total * q / max_bins;
      while (cum < target && idx + 1 < u) cum += mass[++idx];
      if (idx + 1 >= u) break;
      const double cut = 0.5 * (values[idx] + values[idx + 1]);
      if (cuts.empty() || cut > cuts.back()) cuts.push_back(cut);
    }
  }
  return spec;
}

void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0)) throw Error(Errc::ConfigError, "learning_rate must be > 0");
  if (c.n_leaves < 2) throw Error(Errc::ConfigError, "n_leaves must be >= 2");
  if (c.n_interactions < 0) throw Error(Errc::ConfigError, "n_interactions must be >= 0");
  if (c.n_rounds < 0) throw Error(Errc::ConfigError, "n_rounds must be >= 0");
  if (c.max_bins < 2 || c.max_bins > 65535) throw Error(Errc::ConfigError, "max_bins out of range");
  if (c.max_pair_bins < 2 || c.max_pair_bins > 65535) {
    throw Error(Errc::ConfigError, "max_pair_bins out of range");
  }
  if (!(c.leaf_penalty >= 0.0)) throw Error(Errc::ConfigError, "leaf_penalty must be >= 0");
  if (c.min_samples_leaf < 1) throw Error(Errc::ConfigError, "min_samples_leaf must be >= 1");
  if (c.validation_fraction < 0.0 || c.validation_fraction >= 1.0) {
    throw Error(Errc::ConfigError, "validation_fraction must be in [0, 1)");
  }
}

namespace {

// Optimal split of the bins into at most `max_leaves` contiguous segments,
// maximizing sum(R_seg^2 / W_seg), which minimizes the weighted squared
// error of the residuals around their segment means. Empty bins take the
// value of the segment to their left (or right, for leading empties).
// Every leaf beyond the first costs `penalty` gain units, so splits must beat
// what noise alone would find. Returns the weighted mean residual of each
// bin's segment.
std::vector<double> fit_partition(const std::vector<double>& wsum,
                                  const std::vector<double>& rsum,
                                  const std::vector<double>& count, int max_leaves,
                                  int min_count, double penalty) {
  const auto nb = wsum.size();
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < nb; ++b)
    if (wsum[b] > 0.0) idx.push_back(b);
  std::vector<double> out(nb, 0.0);
  const auto m = idx.size();
  if (m == 0) return out;

  // segment start (in nonempty-bin positions) for each nonempty bin
  std::vector<std::size_t> seg_start(m, 0);
  const bool all_large = std::all_of(idx.begin(), idx.end(),
                                     [&](std::size_t b) { return count[b] >= min_count; });
  if (m <= static_cast<std::size_t>(max_leaves) && all_large && penalty <= 0.0) {
    std::iota(seg_start.begin(), seg_start.end(), 0);
  } else {
    std::vector<double> pw(m + 1, 0.0), pr(m + 1, 0.0), pc(m + 1, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
      pw[k + 1] = pw[k] + wsum[idx[k]];
      pr[k + 1] = pr[k] + rsum[idx[k]];
      pc[k + 1] = pc[k] + count[idx[k]];
    }
    // -1 marks a segment below the minimum row count; gains are >= 0
    auto gain = [&](std::size_t i, std::size_t j) {
      if (pc[j] - pc[i] < min_count) return -1.0;
      const double r = pr[j] - pr[i];
      return r * r / (pw[j] - pw[i]);
    };
    const auto leaves = std::min<std::size_t>(static_cast<std::size_t>(max_leaves), m);
    // best[j] for the current leaf count, covering the first j bins
    std::vector<double> prev(m + 1, -1.0), cur(m + 1, -1.0);
    std::vector<std::uint32_t> arg((leaves + 1) * (m + 1), 0);
    for (std::size_t j = 1; j <= m; ++j) prev[j] = gain(0, j);
    double best_total = prev[m];  // net of the leaf penalty
    std::size_t best_leaves = 1;
    for (std::size_t l = 2; l <= leaves; ++l) {
      std::fill(cur.begin(), cur.end(), -1.0);
      for (std::size_t j = l; j <= m; ++j) {
        double best = -1.0;
        std::size_t best_i = l - 1;
        for (std::size_t i = l - 1; i < j; ++i) {
          if (prev[i] < 0.0) continue;
          const double g = gain(i, j);
          if (g < 0.0) continue;
          if (prev[i] + g > best) {
            best = prev[i] + g;
            best_i = i;
          }
        }
        cur[j] = best;
        arg[l * (m + 1) + j] = static_cast<std::uint32_t>(best_i);
      }
      std::swap(prev, cur);
      if (prev[m] >= 0.0 && prev[m] - penalty * static_cast<double>(l - 1) > best_total) {
        best_total = prev[m] - penalty * static_cast<double>(l - 1);
        best_leaves = l;
      }
    }
    // with too few rows for any valid partition, keep a single segment
    if (best_leaves > 1) {
      std::size_t j = m;
      for (std::size_t l = best_leaves; l >= 2; --l) {
        const std::size_t i = arg[l * (m + 1) + j];
        for (std::size_t k = i; k < j; ++k) seg_start[k] = i;
        j = i;
      }
      for (std::size_t k = 0; k < j; ++k) seg_start[k] = 0;
    }
  }

  // segment means
  std::vector<double> value(m);
  for (std::size_t k = 0; k < m;) {
    std::size_t e = k;
    double ws = 0.0, rs = 0.0;
    while (e < m && seg_start[e] == seg_start[k]) {
      ws += wsum[idx[e]];
      rs += rsum[idx[e]];
      ++e;
    }
    for (std::size_t q = k; q < e; ++q) value[q] = rs / ws;
    k = e;
  }
  std::size_t k = 0;
  for (std::size_t b = 0; b < nb; ++b) {
    while (k + 1 < m && idx[k + 1] <= b) ++k;
    out[b] = value[k];
  }
  return out;
}

struct Split1D {
  double score = 0.0;
  int cut = 0;  // 0: no split
};

// Best single cut of a 1-D histogram (or none); both sides need min_count rows
// and the cut must gain more than `penalty`. The score is net of the penalty.
Split1D best_cut(const double* w, const double* r, const double* n, int m, int min_count,
                 double penalty) {
  double wt = 0.0, rt = 0.0, nt = 0.0;
  for (int j = 0; j < m; ++j) {
    wt += w[j];
    rt += r[j];
    nt += n[j];
  }
  Split1D best;
  best.score = wt > 0.0 ? rt * rt / wt : 0.0;
  double wl = 0.0, rl = 0.0, nl = 0.0;
  for (int c = 1; c < m; ++c) {
    wl += w[c - 1];
    rl += r[c - 1];
    nl += n[c - 1];
    const double wr = wt - wl;
    if (wl <= 0.0 || wr <= 0.0) continue;
    if (nl < min_count || nt - nl < min_count) continue;
    const double rr = rt - rl;
    const double s = rl * rl / wl + rr * rr / wr - penalty;
    if (s > best.score) {
      best.score = s;
      best.cut = c;
    }
  }
  return best;
}

struct PairTree {
  double gain = 0.0;
  std::vector<double> cell_value;  // rows x cols, row-major
};

// Depth-2 tree on a 2-D bin grid: one cut on either axis, then an
// independent cut on the other axis within each side.
PairTree fit_pair_tree(const std::vector<double>& wg, const std::vector<double>& rg,
                       const std::vector<double>& cg, int rows, int cols, int min_count,
                       double penalty) {
  double wt = 0.0, rt = 0.0;
  for (std::size_t q = 0; q < wg.size(); ++q) {
    wt += wg[q];
    rt += rg[q];
  }
  const double base = wt > 0.0 ? rt * rt / wt : 0.0;

  struct Choice {
    double score;
    bool rows_first;
    int cut;
    int cut_lo;
    int cut_hi;
  };
  Choice best{base, true, 0, 0, 0};

  for (int orient = 0; orient < 2; ++orient) {
    const bool rows_first = orient == 0;
    const int outer = rows_first ? rows : cols;
    const int inner = rows_first ? cols : rows;
    auto W = [&](int o, int i) {
      return rows_first ? wg[static_cast<std::size_t>(o) * cols + i]
                        : wg[static_cast<std::size_t>(i) * cols + o];
    };
    auto R = [&](int o, int i) {
      return rows_first ? rg[static_cast<std::size_t>(o) * cols + i]
                        : rg[static_cast<std::size_t>(i) * cols + o];
    };
    auto N = [&](int o, int i) {
      return rows_first ? cg[static_cast<std::size_t>(o) * cols + i]
                        : cg[static_cast<std::size_t>(i) * cols + o];
    };
    std::vector<double> tw(inner, 0.0), tr(inner, 0.0), tn(inner, 0.0);
    double total_count = 0.0;
    for (int o = 0; o < outer; ++o)
      for (int i = 0; i < inner; ++i) {
        tw[i] += W(o, i);
        tr[i] += R(o, i);
        tn[i] += N(o, i);
        total_count += N(o, i);
      }
    std::vector<double> lw(inner, 0.0), lr(inner, 0.0), ln(inner, 0.0);
    std::vector<double> uw(inner), ur(inner), un(inner);
    double lo_mass = 0.0, lo_count = 0.0;
    for (int cut = 1; cut < outer; ++cut) {
      for (int i = 0; i < inner; ++i) {
        lw[i] += W(cut - 1, i);
        lr[i] += R(cut - 1, i);
        ln[i] += N(cut - 1, i);
        lo_mass += W(cut - 1, i);
        lo_count += N(cut - 1, i);
      }
      if (lo_mass <= 0.0 || lo_mass >= wt) continue;
      if (lo_count < min_count || total_count - lo_count < min_count) continue;
      for (int i = 0; i < inner; ++i) {
        uw[i] = tw[i] - lw[i];
        ur[i] = tr[i] - lr[i];
        un[i] = tn[i] - ln[i];
      }
      const auto lo = best_cut(lw.data(), lr.data(), ln.data(), inner, min_count, penalty);
      const auto hi = best_cut(uw.data(), ur.data(), un.data(), inner, min_count, penalty);
      const double s = lo.score + hi.score - penalty;
      if (s > best.score) best = {s, rows_first, cut, lo.cut, hi.cut};
    }
  }

  PairTree tree;
  tree.gain = best.score - base;
  tree.cell_value.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  // leaf id per cell, then leaf means
  std::vector<int> leaf(static_cast<std::size_t>(rows) * cols, 0);
  for (int a = 0; a < rows; ++a)
    for (int b = 0; b < cols; ++b) {
      int id = 0;
      if (best.cut > 0) {
        const int o = best.rows_first ? a : b;
        const int i = best.rows_first ? b : a;
        const bool upper = o >= best.cut;
        const int inner_cut = upper ? best.cut_hi : best.cut_lo;
        id = (upper ? 2 : 0) + (inner_cut > 0 && i >= inner_cut ? 1 : 0);
      }
      leaf[static_cast<std::size_t>(a) * cols + b] = id;
    }
  double lw4[4] = {0, 0, 0, 0}, lr4[4] = {0, 0, 0, 0};
  for (std::size_t q = 0; q < leaf.size(); ++q) {
    lw4[leaf[q]] += wg[q];
    lr4[leaf[q]] += rg[q];
  }
  for (std::size_t q = 0; q < leaf.size(); ++q) {
    const int id = leaf[q];
    tree.cell_value[q] = lw4[id] > 0.0 ? lr4[id] / lw4[id] : 0.0;
  }
  return tree;
}

class Trainer {
 public:
  Trainer(const Eigen::MatrixXd& x, std::span<const int> y, std::span<const double> w,
          const TrainConfig& cfg)
      : cfg_(cfg), n_(static_cast<std::size_t>(x.rows())),
        p_(static_cast<std::size_t>(x.cols())) {
    split_rows(y);
    y_.resize(n_);
    w_.resize(n_);
    for (std::size_t k = 0; k < n_; ++k) {
      y_[k] = y[order_[k]];
      w_[k] = w[order_[k]];
      if (k < n_fit_) fit_weight_ += w_[k];
    }
    model_.bins = quantile_bin(x, w, cfg.max_bins);
    bins_ = encode(x, model_.bins);
  }

  EbmModel run(const Eigen::MatrixXd& x) {
    model_.config = cfg_;
    double wy = 0.0, ws = 0.0;
    for (std::size_t k = 0; k < n_; ++k) {
      wy += w_[k] * y_[k];
      ws += w_[k];
    }
    const double base = wy / ws;
    model_.intercept = std::log(base / (1.0 - base));
    model_.feature_functions.resize(p_);
    for (std::size_t f = 0; f < p_; ++f) {
      model_.feature_functions[f].feature = static_cast<int>(f);
      model_.feature_functions[f].scores.assign(
          static_cast<std::size_t>(model_.bins.bin_count(f)), 0.0);
    }
    score_.assign(n_, model_.intercept);
    prob_.assign(n_, sigmoid(model_.intercept));
    model_.train_loss.push_back(fit_loss());

    boost_main();
    if (cfg_.n_interactions > 0 && cfg_.n_rounds > 0 && p_ >= 2) {
      model_.pair_bins = quantile_bin(x, wts_original(), cfg_.max_pair_bins);
      pair_bins_ = encode(x, model_.pair_bins);
      boost_pairs();
    }
    center();
    return std::move(model_);
  }

 private:
  // Fitting rows first, then the early-stopping holdout.
  void split_rows(std::span<const int> y) {
    std::vector<std::size_t> fit, val;
    const bool holdout = cfg_.early_stopping_rounds > 0 &&
                         cfg_.validation_fraction > 0.0 && cfg_.n_rounds > 0;
    if (holdout) {
      auto rng = make_rng(cfg_.seed, 0xe5);
      for (int cls = 0; cls < 2; ++cls) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < n_; ++i)
          if (y[i] == cls) members.push_back(i);
        shuffle(members.begin(), members.end(), rng);
        auto take = static_cast<std::size_t>(
            std::llround(cfg_.validation_fraction * static_cast<double>(members.size())));
        if (take >= members.size()) take = members.size() - 1;
        val.insert(val.end(), members.begin(), members.begin() + take);
        fit.insert(fit.end(), members.begin() + take, members.end());
      }
      std::sort(fit.begin(), fit.end());
      std::sort(val.begin(), val.end());
    } else {
      fit.resize(n_);
      std::iota(fit.begin(), fit.end(), 0);
    }
    n_fit_ = fit.size();
    fit_weight_ = 0.0;
    order_ = fit;
    order_.insert(order_.end(), val.begin(), val.end());
  }

  std::vector<double> wts_original() const {
    std::vector<double> w(n_);
    for (std::size_t k = 0; k < n_; ++k) w[order_[k]] = w_[k];
    return w;
  }

  std::vector<std::uint16_t> encode(const Eigen::MatrixXd& x, const BinSpec& spec) const {
    std::vector<std::uint16_t> out(p_ * n_);
    for (std::size_t f = 0; f < p_; ++f)
      for (std::size_t k = 0; k < n_; ++k)
        out[f * n_ + k] = static_cast<std::uint16_t>(
            spec.bin(f, x(static_cast<Eigen::Index>(order_[k]), static_cast<Eigen::Index>(f))));
    return out;
  }

  double fit_loss() const {
    double l = 0.0, ws = 0.0;
    for (std::size_t k = 0; k < n_fit_; ++k) {
      l += w_[k] * (softplus(score_[k]) - y_[k] * score_[k]);
      ws += w_[k];
    }
    return l / ws;
  }

  double val_loss() const {
    double l = 0.0, ws = 0.0;
    for (std::size_t k = n_fit_; k < n_; ++k) {
      l += w_[k] * (softplus(score_[k]) - y_[k] * score_[k]);
      ws += w_[k];
    }
    return ws > 0.0 ? l / ws : 0.0;
  }

  bool early_stopping() const {
    return cfg_.early_stopping_rounds > 0 && n_fit_ < n_;
  }

  void apply(const std::uint16_t* bins, const std::vector<double>& upd) {
    for (std::size_t k = 0; k < n_; ++k) {
      score_[k] += upd[bins[k]];
      prob_[k] = sigmoid(score_[k]);
    }
  }

  void boost_main() {
    std::vector<std::vector<double>> wsum(p_), count(p_);
    for (std::size_t f = 0; f < p_; ++f) {
      wsum[f].assign(static_cast<std::size_t>(model_.bins.bin_count(f)), 0.0);
      count[f].assign(wsum[f].size(), 0.0);
      const auto* b = bins_.data() + f * n_;
      for (std::size_t k = 0; k < n_fit_; ++k) {
        wsum[f][b[k]] += w_[k];
        count[f][b[k]] += 1.0;
      }
    }

    auto best_ff = model_.feature_functions;
    double best_val = early_stopping() ? val_loss() : 0.0;
    int best_round = 0;
    std::vector<double> rsum;
    int round = 1;
    for (; round <= cfg_.n_rounds; ++round) {
      for (std::size_t f = 0; f < p_; ++f) {
        if (wsum[f].size() < 2) continue;
        const auto* b = bins_.data() + f * n_;
        rsum.assign(wsum[f].size(), 0.0);
        double noise = 0.0;
        for (std::size_t k = 0; k < n_fit_; ++k) {
          const double wr = w_[k] * (y_[k] - prob_[k]);
          rsum[b[k]] += wr;
          noise += wr * wr;
        }
        const auto nonempty = std::count_if(wsum[f].begin(), wsum[f].end(),
                                            [](double v) { return v > 0.0; });
        const double penalty = leaf_penalty(noise, nonempty);
        auto upd = fit_partition(wsum[f], rsum, count[f], cfg_.n_leaves, cfg_.min_samples_leaf,
                                 penalty);
        for (auto& u : upd) u *= cfg_.learning_rate;
        auto& scores = model_.feature_functions[f].scores;
        for (std::size_t q = 0; q < scores.size(); ++q) scores[q] += upd[q];
        apply(b, upd);
      }
      model_.train_loss.push_back(fit_loss());
      if (early_stopping()) {
        const double v = val_loss();
        if (v < best_val) {
          best_val = v;
          best_round = round;
          best_ff = model_.feature_functions;
        } else if (round - best_round >= cfg_.early_stopping_rounds) {
          break;
        }
      }
    }
    if (early_stopping()) {
      model_.feature_functions = std::move(best_ff);
      model_.main_rounds_used = best_round;
      rescore();
    } else {
      model_.main_rounds_used = cfg_.n_rounds;
    }
  }

  void rescore() {
    for (std::size_t k = 0; k < n_; ++k) {
      double s = model_.intercept;
      for (std::size_t f = 0; f < p_; ++f)
        s += model_.feature_functions[f].scores[bins_[f * n_ + k]];
      for (std::size_t q = 0; q < model_.pair_functions.size(); ++q) {
        const auto& pf = model_.pair_functions[q];
        s += pf.at(pair_bins_[static_cast<std::size_t>(pf.first) * n_ + k],
                   pair_bins_[static_cast<std::size_t>(pf.second) * n_ + k]);
      }
      score_[k] = s;
      prob_[k] = sigmoid(s);
    }
  }

  // Gain a split of pure noise would reach among `candidates` cut positions:
  // leaf_penalty x log(candidates) x the expected gain of one random group.
  double leaf_penalty(double sum_sq_wr, std::ptrdiff_t candidates) const {
    if (cfg_.leaf_penalty <= 0.0 || candidates < 2) return 0.0;
    return cfg_.leaf_penalty * std::log(static_cast<double>(candidates)) * sum_sq_wr / fit_weight_;
  }

  double pair_penalty(int rows, int cols) const {
    double noise = 0.0;
    for (std::size_t k = 0; k < n_fit_; ++k) {
      const double wr = w_[k] * (y_[k] - prob_[k]);
      noise += wr * wr;
    }
    return leaf_penalty(noise, static_cast<std::ptrdiff_t>(rows) * cols);
  }

  void pair_histogram(std::size_t a, std::size_t b, int rows, int cols, std::vector<double>& wg,
                      std::vector<double>& rg, std::vector<double>& cg) const {
    wg.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    rg.assign(wg.size(), 0.0);
    cg.assign(wg.size(), 0.0);
    const auto* ba = pair_bins_.data() + a * n_;
    const auto* bb = pair_bins_.data() + b * n_;
    for (std::size_t k = 0; k < n_fit_; ++k) {
      const auto cell = static_cast<std::size_t>(ba[k]) * cols + bb[k];
      wg[cell] += w_[k];
      rg[cell] += w_[k] * (y_[k] - prob_[k]);
      cg[cell] += 1.0;
    }
  }

  void boost_pairs() {
    const auto& pb = model_.pair_bins;
    std::vector<std::pair<std::size_t, std::size_t>> candidates;
    for (std::size_t a = 0; a < p_; ++a)
      for (std::size_t b = a + 1; b < p_; ++b)
        if (pb.bin_count(a) > 1 && pb.bin_count(b) > 1) candidates.emplace_back(a, b);
    if (candidates.empty()) return;

    // residual variance-reduction screen
    std::vector<double> gains(candidates.size());
    const auto nc = static_cast<std::ptrdiff_t>(candidates.size());
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t q = 0; q < nc; ++q) {
      const auto [a, b] = candidates[static_cast<std::size_t>(q)];
      std::vector<double> wg, rg, cg;
      pair_histogram(a, b, pb.bin_count(a), pb.bin_count(b), wg, rg, cg);
      gains[static_cast<std::size_t>(q)] =
          fit_pair_tree(wg, rg, cg, pb.bin_count(a), pb.bin_count(b), cfg_.min_samples_leaf,
                        pair_penalty(pb.bin_count(a), pb.bin_count(b)))
              .gain;
    }
    std::vector<std::size_t> rank(candidates.size());
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(),
                     [&](auto i, auto j) { return gains[i] > gains[j]; });
    const auto keep = std::min<std::size_t>(static_cast<std::size_t>(cfg_.n_interactions),
                                            rank.size());
    std::vector<std::size_t> chosen;
    for (std::size_t q = 0; q < keep; ++q)
      if (gains[rank[q]] > 0.0) chosen.push_back(rank[q]);
    if (chosen.empty()) return;
    std::sort(chosen.begin(), chosen.end());

    for (auto q : chosen) {
      PairFunction pf;
      pf.first = static_cast<int>(candidates[q].first);
      pf.second = static_cast<int>(candidates[q].second);
      pf.rows = pb.bin_count(candidates[q].first);
      pf.cols = pb.bin_count(candidates[q].second);
      pf.scores.assign(static_cast<std::size_t>(pf.rows) * pf.cols, 0.0);
      model_.pair_functions.push_back(std::move(pf));
    }

    auto best_pf = model_.pair_functions;
    double best_val = early_stopping() ? val_loss() : 0.0;
    int best_round = 0;
    std::vector<double> wg, rg, cg;
    for (int round = 1; round <= cfg_.n_rounds; ++round) {
      for (auto& pf : model_.pair_functions) {
        pair_histogram(static_cast<std::size_t>(pf.first), static_cast<std::size_t>(pf.second),
                       pf.rows, pf.cols, wg, rg, cg);
        auto tree = fit_pair_tree(wg, rg, cg, pf.rows, pf.cols, cfg_.min_samples_leaf,
                                  pair_penalty(pf.rows, pf.cols));
        const auto* ba = pair_bins_.data() + static_cast<std::size_t>(pf.first) * n_;
        const auto* bb = pair_bins_.data() + static_cast<std::size_t>(pf.second) * n_;
        for (std::size_t q = 0; q < pf.scores.size(); ++q) {
          tree.cell_value[q] *= cfg_.learning_rate;
          pf.scores[q] += tree.cell_value[q];
        }
        for (std::size_t k = 0; k < n_; ++k) {
          score_[k] += tree.cell_value[static_cast<std::size_t>(ba[k]) * pf.cols + bb[k]];
          prob_[k] = sigmoid(score_[k]);
        }
      }
      model_.train_loss.push_back(fit_loss());
      if (early_stopping()) {
        const double v = val_loss();
        if (v < best_val) {
          best_val = v;
          best_round = round;
          best_pf = model_.pair_functions;
        } else if (round - best_round >= cfg_.early_stopping_rounds) {
          break;
        }
      }
    }
    if (early_stopping()) {
      model_.pair_functions = std::move(best_pf);
      model_.pair_rounds_used = best_round;
      if (best_round == 0) model_.pair_functions.clear();
    } else {
      model_.pair_rounds_used = cfg_.n_rounds;
    }
  }

  // Shift every term to weighted mean zero over all training rows and fold
  // the offsets into the intercept. Predictions are unchanged.
  void center() {
    double ws = 0.0;
    for (std::size_t k = 0; k < n_; ++k) ws += w_[k];
    for (std::size_t f = 0; f < p_; ++f) {
      auto& scores = model_.feature_functions[f].scores;
      const auto* b = bins_.data() + f * n_;
      double m = 0.0;
      for (std::size_t k = 0; k < n_; ++k) m += w_[k] * scores[b[k]];
      m /= ws;
      for (auto& s : scores) s -= m;
      model_.intercept += m;
    }
    for (auto& pf : model_.pair_functions) {
      const auto* ba = pair_bins_.data() + static_cast<std::size_t>(pf.first) * n_;
      const auto* bb = pair_bins_.data() + static_cast<std::size_t>(pf.second) * n_;
      double m = 0.0;
      for (std::size_t k = 0; k < n_; ++k)
        m += w_[k] * pf.scores[static_cast<std::size_t>(ba[k]) * pf.cols + bb[k]];
      m /= ws;
      for (auto& s : pf.scores) s -= m;
      model_.intercept += m;
    }
  }

  TrainConfig cfg_;
  std::size_t n_, p_;
  std::size_t n_fit_ = 0;
  double fit_weight_ = 0.0;
  std::vector<std::size_t> order_;
  std::vector<double> y_, w_;
  std::vector<std::uint16_t> bins_, pair_bins_;
  std::vector<double> score_, prob_;
  EbmModel model_;
};

void check_inputs(const Eigen::MatrixXd& x, std::span<const int> y,
                  std::span<const double> w) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (y.size() != n || w.size() != n) {
    throw Error(Errc::ShapeError, "X, y and w differ in row count");
  }
  if (x.cols() < 1) throw Error(Errc::EmptyFeatureSet, "no features to train on");
  if (n < 2) throw Error(Errc::DegenerateLabels, "need at least two rows");
  bool has[2] = {false, false};
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] != 0 && y[i] != 1) throw Error(Errc::ShapeError, "labels must be 0/1");
    has[y[i]] = true;
    if (!(w[i] > 0.0)) throw Error(Errc::InvalidWeight, "nonpositive training weight");
  }
  if (!has[0] || !has[1]) throw Error(Errc::DegenerateLabels, "labels contain a single class");
}

}  // namespace

EbmModel train_ebm(const Eigen::MatrixXd& x, std::span<const int> y,
                   std::span<const double> w, const TrainConfig& config,
                   std::vector<std::string> feature_names) {
  validate(config);
  check_inputs(x, y, w);
  if (!feature_names.empty() &&
      feature_names.size() != static_cast<std::size_t>(x.cols())) {
    throw Error(Errc::ShapeError, "feature name count mismatch");
  }
  Trainer trainer(x, y, w, config);
  auto model = trainer.run(x);
  model.feature_names = std::move(feature_names);
  model.importance = feature_importance(model, x, w);
  return model;
}

double predict_logit(const EbmModel& model, std::span<const double> x) {
  if (x.size() != model.feature_count()) {
    throw Error(Errc::ShapeError, "expected " + std::to_string(model.feature_count()) +
                                      " features, got " + std::to_string(x.size()));
  }
  double s = model.intercept;
  for (std::size_t f = 0; f < x.size(); ++f) {
    if (!std::isfinite(x[f])) throw Error(Errc::NumericalError, "non-finite feature value");
    s += model.feature_functions[f].scores[static_cast<std::size_t>(model.bins.bin(f, x[f]))];
  }
  for (const auto& pf : model.pair_functions) {
    const auto a = static_cast<std::size_t>(pf.first);
    const auto b = static_cast<std::size_t>(pf.second);
    s += pf.at(model.pair_bins.bin(a, x[a]), model.pair_bins.bin(b, x[b]));
  }
  return s;
}

double predict_proba(const EbmModel& model, std::span<const double> x) {
  // keep the probability strictly inside (0, 1)
  return sigmoid(std::clamp(predict_logit(model, x), -30.0, 30.0));
}

std::vector<double> predict_proba(const EbmModel& model, const Eigen::MatrixXd& x) {
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) row[static_cast<std::size_t>(j)] = x(i, j);
    out[static_cast<std::size_t>(i)] = predict_proba(model, row);
  }
  return out;
}

std::vector<double> feature_importance(const EbmModel& model, const Eigen::MatrixXd& x,
                                       std::span<const double> w) {
  const auto p = model.feature_count();
  if (static_cast<std::size_t>(x.cols()) != p ||
      static_cast<std::size_t>(x.rows()) != w.size()) {
    throw Error(Errc::ShapeError, "importance input shape mismatch");
  }
  std::vector<double> imp(p, 0.0);
  double ws = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double wi = w[static_cast<std::size_t>(i)];
    ws += wi;
    for (std::size_t f = 0; f < p; ++f) {
      const auto b = model.bins.bin(f, x(i, static_cast<Eigen::Index>(f)));
      imp[f] += wi * std::abs(model.feature_functions[f].scores[static_cast<std::size_t>(b)]);
    }
    for (const auto& pf : model.pair_functions) {
      const auto a = static_cast<std::size_t>(pf.first);
      const auto b = static_cast<std::size_t>(pf.second);
      const double v = std::abs(pf.at(model.pair_bins.bin(a, x(i, pf.first)),
                                      model.pair_bins.bin(b, x(i, pf.second))));
      imp[a] += 0.5 * wi * v;
      imp[b] += 0.5 * wi * v;
    }
  }
  if (ws > 0.0)
    for (auto& v : imp) v /= ws;
  return imp;
}

double weighted_log_loss(std::span<const int> y, std::span<const double> prob,
                         std::span<const double> w) {
  if (y.size() != prob.size() || y.size() != w.size()) {
    throw Error(Errc::ShapeError, "log loss inputs differ in length");
  }
  if (y.empty()) throw Error(Errc::EmptyGroup, "log loss of empty set");
  double l = 0.0, ws = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = std::clamp(prob[i], 1e-15, 1.0 - 1e-15);
    l -= w[i] * (y[i] ? std::log(p) : std::log1p(-p));
    ws += w[i];
  }
  return l / ws;
}

std::vector<int> stratified_folds(std::span<const int> y, int k, std::uint64_t seed) {
  if (k < 2) throw Error(Errc::ConfigError, "k must be >= 2");
  if (y.size() < static_cast<std::size_t>(k)) {
    throw Error(Errc::DegenerateFold, "fewer rows than folds");
  }
  auto rng = make_rng(seed, 0xf01d);
  std::vector<int> fold(y.size(), 0);
  std::size_t next = 0;
  for (int cls = 1; cls >= 0; --cls) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == cls) members.push_back(i);
    shuffle(members.begin(), members.end(), rng);
    for (auto i : members) fold[i] = static_cast<int>(next++ % static_cast<std::size_t>(k));
  }
  for (int f = 0; f < k; ++f) {
    bool has[2] = {false, false};
    for (std::size_t i = 0; i < y.size(); ++i)
      if (fold[i] == f) has[y[i]] = true;
    if (!has[0] || !has[1]) {
      throw Error(Errc::DegenerateFold, "fold " + std::to_string(f) + " lacks a class");
    }
  }
  return fold;
}

CvResult cross_validate(const Eigen::MatrixXd& x, std::span<const int> y,
                        std::span<const double> w, const std::vector<TrainConfig>& grid,
                        int k, std::uint64_t seed) {
  if (grid.empty()) throw Error(Errc::ConfigError, "empty hyperparameter grid");
  check_inputs(x, y, w);
  for (const auto& c : grid) validate(c);
  const auto fold = stratified_folds(y, k, seed);

  const auto jobs = static_cast<std::ptrdiff_t>(grid.size()) * k;
  std::vector<double> loss(static_cast<std::size_t>(jobs), 0.0);
  // Independent fits; each result lands in its own slot.
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t job = 0; job < jobs; ++job) {
    const auto c = static_cast<std::size_t>(job / k);
    const int f = static_cast<int>(job % k);
    std::vector<Eigen::Index> tr, va;
    for (std::size_t i = 0; i < fold.size(); ++i)
      (fold[i] == f ? va : tr).push_back(static_cast<Eigen::Index>(i));
    Eigen::MatrixXd xt = x(tr, Eigen::all);
    Eigen::MatrixXd xv = x(va, Eigen::all);
    std::vector<int> yt, yv;
    std::vector<double> wt, wv;
    for (auto i : tr) {
      yt.push_back(y[static_cast<std::size_t>(i)]);
      wt.push_back(w[static_cast<std::size_t>(i)]);
    }
    for (auto i : va) {
      yv.push_back(y[static_cast<std::size_t>(i)]);
      wv.push_back(w[static_cast<std::size_t>(i)]);
    }
    const auto model = train_ebm(xt, yt, wt, grid[c]);
    loss[static_cast<std::size_t>(job)] = weighted_log_loss(yv, predict_proba(model, xv), wv);
  }

  CvResult result;
  result.fits = static_cast<std::size_t>(jobs);
  result.mean_loss.assign(grid.size(), 0.0);
  for (std::size_t c = 0; c < grid.size(); ++c) {
    double s = 0.0;
    for (int f = 0; f < k; ++f) s += loss[c * static_cast<std::size_t>(k) + static_cast<std::size_t>(f)];
    result.mean_loss[c] = s / k;
  }
  result.best_index = 0;
  for (std::size_t c = 1; c < grid.size(); ++c)
    if (result.mean_loss[c] < result.mean_loss[result.best_index]) result.best_index = c;
  result.best = grid[result.best_index];
  return result;
}

std::vector<TrainConfig> full_grid(const TrainConfig& base) {
  std::vector<TrainConfig> grid;
  for (double lr : {0.005, 0.0075, 0.01})
    for (int leaves : {10, 31, 50})
      for (int inter : {5, 10, 20}) {
        TrainConfig c = base;
        c.learning_rate = lr;
        c.n_leaves = leaves;
        c.n_interactions = inter;
        grid.push_back(c);
      }
  return grid;
}

namespace {

using nlohmann::json;

json config_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"n_leaves", c.n_leaves},
          {"n_interactions", c.n_interactions},
          {"n_rounds", c.n_rounds},
          {"max_bins", c.max_bins},
          {"seed", c.seed},
          {"early_stopping_rounds", c.early_stopping_rounds},
          {"validation_fraction", c.validation_fraction},
          {"max_pair_bins", c.max_pair_bins},
          {"min_samples_leaf", c.min_samples_leaf},
          {"leaf_penalty", c.leaf_penalty}};
}

TrainConfig config_from(const json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.n_leaves = j.at("n_leaves").get<int>();
  c.n_interactions = j.at("n_interactions").get<int>();
  c.n_rounds = j.at("n_rounds").get<int>();
  c.max_bins = j.at("max_bins").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.early_stopping_rounds = j.at("early_stopping_rounds").get<int>();
  c.validation_fraction = j.at("validation_fraction").get<double>();
  c.max_pair_bins = j.at("max_pair_bins").get<int>();
  c.min_samples_leaf = j.at("min_samples_leaf").get<int>();
  c.leaf_penalty = j.at("leaf_penalty").get<double>();
  return c;
}

}  // namespace

std::string config_to_json(const TrainConfig& config) { return config_json(config).dump(); }

TrainConfig config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(Errc::IoError, std::string("bad train config JSON: ") + e.what());
  }
}

std::string model_to_json(const EbmModel& m) {
  json ff = json::array();
  for (const auto& f : m.feature_functions) ff.push_back(f.scores);
  json pf = json::array();
  for (const auto& p : m.pair_functions) {
    pf.push_back({{"first", p.first},
                  {"second", p.second},
                  {"rows", p.rows},
                  {"cols", p.cols},
                  {"scores", p.scores}});
  }
  json j = {{"intercept", m.intercept},
            {"feature_names", m.feature_names},
            {"bins", m.bins.cuts},
            {"pair_bins", m.pair_bins.cuts},
            {"feature_functions", ff},
            {"pair_functions", pf},
            {"importance", m.importance},
            {"config", config_json(m.config)},
            {"main_rounds_used", m.main_rounds_used},
            {"pair_rounds_used", m.pair_rounds_used}};
  return j.dump();
}

EbmModel model_from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    EbmModel m;
    m.intercept = j.at("intercept").get<double>();
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    m.bins.cuts = j.at("bins").get<std::vector<std::vector<double>>>();
    m.pair_bins.cuts = j.at("pair_bins").get<std::vector<std::vector<double>>>();
    const auto ff = j.at("feature_functions");
    for (std::size_t f = 0; f < ff.size(); ++f) {
      FeatureFunction fn;
      fn.feature = static_cast<int>(f);
      fn.scores = ff[f].get<std::vector<double>>();
      if (f >= m.bins.cuts.size() ||
          fn.scores.size() != static_cast<std::size_t>(m.bins.bin_count(f))) {
        throw Error(Errc::ShapeError, "feature function does not match its bins");
      }
      m.feature_functions.push_back(std::move(fn));
    }
    for (const auto& p : j.at("pair_functions")) {
      PairFunction pf;
      pf.first = p.at("first").get<int>();
      pf.second = p.at("second").get<int>();
      pf.rows = p.at("rows").get<int>();
      pf.cols = p.at("cols").get<int>();
      pf.scores = p.at("scores").get<std::vector<double>>();
      if (pf.scores.size() != static_cast<std::size_t>(pf.rows) * pf.cols) {
        throw Error(Errc::ShapeError, "pair function grid size mismatch");
      }
      m.pair_functions.push_back(std::move(pf));
    }
    m.importance = j.at("importance").get<std::vector<double>>();
    m.config = config_from(j.at("config"));
    m.main_rounds_used = j.value("main_rounds_used", 0);
    m.pair_rounds_used = j.value("pair_rounds_used", 0);
    return m;
  } catch (const json::exception& e) {
    throw Error(Errc::IoError, std::string("bad model JSON: ") + e.what());
  }
}

void save_model(const EbmModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << model_to_json(model) << '\n';
}

EbmModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace povrate::ebm
