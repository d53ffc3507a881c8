#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace sard {

/// Scores paired with binary labels. Rank metrics require both classes present.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;

  ScoredSet() = default;
  ScoredSet(std::vector<double> s, std::vector<int> y);

  std::size_t size() const noexcept { return scores.size(); }
  std::size_t positives() const noexcept;
};

/// Fractional (average) ranks starting at 1.
std::vector<double> average_ranks(std::span<const double> values);

/// Probability a random positive outscores a random negative, ties counted half.
double auc_roc(const ScoredSet& s);

/// Average precision: sum over distinct thresholds of (recall step) * precision.
double auc_prc(const ScoredSet& s);

struct DeLongResult {
  double auc_a = 0.0;
  double auc_b = 0.0;
  double z = 0.0;
  double p_value = 1.0;
};

/// Paired DeLong test for the difference of two correlated ROC AUCs, two-sided.
DeLongResult delong_test(std::span<const double> scores_a, std::span<const double> scores_b,
                         std::span<const int> labels);

double spearman(std::span<const double> x, std::span<const double> y);
double pearson(std::span<const double> x, std::span<const double> y);

struct MannWhitneyResult {
  /// Count of pairs with a > b plus half the ties; 0 when every a is below every b.
  double u = 0.0;
  double z = 0.0;
  double p_value = 1.0;
};

/// Rank-sum test with tie-corrected variance and normal approximation (no continuity correction).
MannWhitneyResult mann_whitney(std::span<const double> a, std::span<const double> b);

/// Precision at the highest threshold whose recall reaches `sensitivity`.
double ppv_at_sensitivity(const ScoredSet& s, double sensitivity);

/// Matthews correlation; 0 when any confusion-matrix marginal vanishes.
double mcc(std::span<const int> a, std::span<const int> b);

double normal_two_sided_p(double z);

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
};
/// (false positive rate, true positive rate) at each distinct threshold, starting at (0,0).
std::vector<CurvePoint> roc_curve(const ScoredSet& s);
/// (recall, precision) at each distinct threshold, descending.
std::vector<CurvePoint> pr_curve(const ScoredSet& s);

/// Ordered named metric values with free-form metadata.
struct MetricReport {
  std::string name;
  std::map<std::string, double> values;
  std::map<std::string, std::string> metadata;
};

/// Standard report for a scored set: n, prevalence, auc_roc, auc_prc, ppv@0.5.
MetricReport summarize(const std::string& name, const ScoredSet& s);

void write_reports_csv(const std::filesystem::path& path, const std::vector<MetricReport>& reports);
void write_reports_json(const std::filesystem::path& path, const std::vector<MetricReport>& reports);

}  // namespace sard
