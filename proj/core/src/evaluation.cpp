#include "sard/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sard/errors.hpp"

namespace sard {

ScoredSet::ScoredSet(std::vector<double> s, std::vector<int> y)
    : scores(std::move(s)), labels(std::move(y)) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("scores and labels differ in length");
  }
  for (int v : labels) {
    if (v != 0 && v != 1) throw std::invalid_argument("labels must be 0 or 1");
  }
}

std::size_t ScoredSet::positives() const noexcept {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // Positions i..j-1 (0-based) share the mean of ranks i+1..j.
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

namespace {

void require_both_classes(const ScoredSet& s) {
  const auto pos = s.positives();
  if (pos == 0 || pos == s.size()) {
    throw std::invalid_argument("metric needs at least one positive and one negative label");
  }
}

// Indices sorted by descending score; groups of equal scores are contiguous.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

struct ThresholdCounts {
  double threshold;
  std::size_t tp;
  std::size_t fp;
};

// Cumulative (tp, fp) when predicting positive for score >= threshold, for each distinct score.
std::vector<ThresholdCounts> threshold_sweep(const ScoredSet& s) {
  const auto order = descending_order(s.scores);
  std::vector<ThresholdCounts> out;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = s.scores[order[i]];
    while (i < order.size() && s.scores[order[i]] == t) {
      (s.labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    out.push_back({t, tp, fp});
  }
  return out;
}

}  // namespace

double auc_roc(const ScoredSet& s) {
  require_both_classes(s);
  const auto ranks = average_ranks(s.scores);
  const double n_pos = static_cast<double>(s.positives());
  const double n_neg = static_cast<double>(s.size()) - n_pos;
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.labels[i] == 1) rank_sum += ranks[i];
  }
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double auc_prc(const ScoredSet& s) {
  const auto n_pos = s.positives();
  if (n_pos == 0) throw std::invalid_argument("auc_prc needs at least one positive label");
  double area = 0.0;
  double prev_recall = 0.0;
  for (const auto& c : threshold_sweep(s)) {
    const double recall = static_cast<double>(c.tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

std::vector<CurvePoint> roc_curve(const ScoredSet& s) {
  require_both_classes(s);
  const double n_pos = static_cast<double>(s.positives());
  const double n_neg = static_cast<double>(s.size()) - n_pos;
  std::vector<CurvePoint> pts{{0.0, 0.0}};
  for (const auto& c : threshold_sweep(s)) {
    pts.push_back({static_cast<double>(c.fp) / n_neg, static_cast<double>(c.tp) / n_pos});
  }
  return pts;
}

std::vector<CurvePoint> pr_curve(const ScoredSet& s) {
  const double n_pos = static_cast<double>(s.positives());
  if (n_pos == 0) throw std::invalid_argument("pr_curve needs at least one positive label");
  std::vector<CurvePoint> pts;
  for (const auto& c : threshold_sweep(s)) {
    pts.push_back({static_cast<double>(c.tp) / n_pos,
                   static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp)});
  }
  return pts;
}

double normal_two_sided_p(double z) {
  if (std::isinf(z)) return 0.0;
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

namespace {

struct Placements {
  std::vector<double> v10;  // per positive
  std::vector<double> v01;  // per negative
  double auc = 0.0;
};

// Structural components of the Mann-Whitney AUC estimator, via midranks.
Placements placements(std::span<const double> scores, std::span<const int> labels) {
  std::vector<double> pos;
  std::vector<double> neg;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    (labels[i] == 1 ? pos : neg).push_back(scores[i]);
  }
  const auto m = pos.size();
  const auto n = neg.size();
  std::vector<double> all(pos);
  all.insert(all.end(), neg.begin(), neg.end());
  const auto r_all = average_ranks(all);
  const auto r_pos = average_ranks(pos);
  const auto r_neg = average_ranks(neg);

  Placements p;
  p.v10.resize(m);
  p.v01.resize(n);
  for (std::size_t i = 0; i < m; ++i) {
    p.v10[i] = (r_all[i] - r_pos[i]) / static_cast<double>(n);
  }
  for (std::size_t j = 0; j < n; ++j) {
    p.v01[j] = 1.0 - (r_all[m + j] - r_neg[j]) / static_cast<double>(m);
  }
  p.auc = std::accumulate(p.v10.begin(), p.v10.end(), 0.0) / static_cast<double>(m);
  return p;
}

double covariance(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  if (a.size() < 2) return 0.0;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / (n - 1.0);
}

}  // namespace

DeLongResult delong_test(std::span<const double> scores_a, std::span<const double> scores_b,
                         std::span<const int> labels) {
  if (scores_a.size() != labels.size() || scores_b.size() != labels.size()) {
    throw std::invalid_argument("delong_test: score and label lengths differ");
  }
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0 || n_pos == labels.size()) {
    throw std::invalid_argument("delong_test needs both classes");
  }
  const auto pa = placements(scores_a, labels);
  const auto pb = placements(scores_b, labels);
  const double m = static_cast<double>(pa.v10.size());
  const double n = static_cast<double>(pa.v01.size());

  const double var = (covariance(pa.v10, pa.v10) + covariance(pb.v10, pb.v10) -
                      2.0 * covariance(pa.v10, pb.v10)) / m +
                     (covariance(pa.v01, pa.v01) + covariance(pb.v01, pb.v01) -
                      2.0 * covariance(pa.v01, pb.v01)) / n;

  DeLongResult r;
  r.auc_a = pa.auc;
  r.auc_b = pb.auc;
  const double diff = pa.auc - pb.auc;
  if (var <= 0.0) {
    r.z = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
  } else {
    r.z = diff / std::sqrt(var);
  }
  r.p_value = normal_two_sided_p(r.z);
  return r;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("pearson: need equal lengths >= 2");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 3) {
    throw std::invalid_argument("spearman: need equal lengths >= 3");
  }
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

MannWhitneyResult mann_whitney(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("mann_whitney: empty sample");
  std::vector<double> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  const auto ranks = average_ranks(all);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  double rank_sum_a = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) rank_sum_a += ranks[i];

  MannWhitneyResult r;
  r.u = rank_sum_a - na * (na + 1.0) / 2.0;

  // Tie correction term sum(t^3 - t) over tie groups.
  std::vector<double> sorted(all);
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double n = na + nb;
  const double var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  const double centered = r.u - na * nb / 2.0;
  if (var <= 0.0) {
    r.z = 0.0;
  } else {
    r.z = centered / std::sqrt(var);
  }
  r.p_value = normal_two_sided_p(r.z);
  return r;
}

double ppv_at_sensitivity(const ScoredSet& s, double sensitivity) {
  const auto n_pos = s.positives();
  if (n_pos == 0) throw std::invalid_argument("ppv_at_sensitivity needs a positive label");
  if (!(sensitivity >= 0.0 && sensitivity <= 1.0)) {
    throw std::invalid_argument("sensitivity must lie in [0, 1]");
  }
  for (const auto& c : threshold_sweep(s)) {
    const double recall = static_cast<double>(c.tp) / static_cast<double>(n_pos);
    if (recall >= sensitivity) {
      return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    }
  }
  throw std::invalid_argument("requested sensitivity is unreachable");
}

double mcc(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("mcc: length mismatch");
  double tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0;
    const bool y = b[i] != 0;
    if (x && y) tp += 1;
    else if (!x && !y) tn += 1;
    else if (x) fp += 1;
    else fn += 1;
  }
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(denom);
}

MetricReport summarize(const std::string& name, const ScoredSet& s) {
  MetricReport r;
  r.name = name;
  const double n = static_cast<double>(s.size());
  r.values["n"] = n;
  r.values["prevalence"] = static_cast<double>(s.positives()) / n;
  r.values["auc_roc"] = auc_roc(s);
  r.values["auc_prc"] = auc_prc(s);
  r.values["ppv_at_sensitivity_0.5"] = ppv_at_sensitivity(s, 0.5);
  return r;
}

void write_reports_csv(const std::filesystem::path& path, const std::vector<MetricReport>& reports) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "report,metric,value\n";
  for (const auto& r : reports) {
    for (const auto& [k, v] : r.values) out << r.name << ',' << k << ',' << v << '\n';
  }
}

void write_reports_json(const std::filesystem::path& path,
                        const std::vector<MetricReport>& reports) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reports) {
    j.push_back({{"name", r.name}, {"values", r.values}, {"metadata", r.metadata}});
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace sard
