#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sard/corpus.hpp"
#include "sard/matrix.hpp"

namespace sard {

/// Offset value standing for an unbounded lookback.
inline constexpr int kUnboundedOffset = std::numeric_limits<int>::max();

/// Lookback windows [T_A - offset, T_A], inclusive at both ends.
struct WindowSet {
  std::vector<int> offsets;  // strictly increasing, positive

  WindowSet() = default;
  explicit WindowSet(std::vector<int> o);

  std::size_t size() const noexcept { return offsets.size(); }
  bool contains(std::size_t window, int days_before_prediction) const noexcept {
    return days_before_prediction <= offsets[window];
  }

  friend bool operator==(const WindowSet&, const WindowSet&) = default;
};

/// Candidate offsets searched during tuning: 15..720 days plus unbounded.
std::vector<int> default_window_candidates();
/// Inverse regularization constants searched during tuning.
std::vector<double> default_lambda_grid();

std::string format_offset(int offset);
int parse_offset(const nlohmann::json& j);
nlohmann::json offset_to_json(int offset);

/// Binary multi-hot features, blocked by window: index = window * |C| + code.
struct FeatureVector {
  std::size_t dimension = 0;
  std::vector<std::size_t> active;  // sorted, unique

  std::vector<double> to_dense() const;
  bool operator[](std::size_t i) const;
};

FeatureVector featurize(const PatientRecord& patient, const WindowSet& windows,
                        const CodeVocab& vocab, int prediction_day);

std::vector<FeatureVector> featurize_cohort(const Cohort& cohort, const WindowSet& windows);

/// Design matrix for logistic regression: either dense real-valued or sparse binary rows.
class DesignMatrix {
 public:
  static DesignMatrix dense(Matrix values);
  static DesignMatrix sparse_binary(std::size_t cols, std::vector<FeatureVector> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool is_sparse() const noexcept { return sparse_; }

  /// out = X w
  void multiply(std::span<const double> w, std::span<double> out) const;
  /// out = X^T r
  void multiply_transposed(std::span<const double> r, std::span<double> out) const;
  double row_dot(std::size_t row, std::span<const double> w) const;

  /// Keeps only the listed columns (in the given order).
  DesignMatrix select_columns(std::span<const std::size_t> columns) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  bool sparse_ = false;
  Matrix dense_;
  std::vector<FeatureVector> sparse_rows_;
};

struct LinearModel {
  std::vector<double> weights;
  double intercept = 0.0;
  double lambda = 1.0;
  WindowSet window_set;

  std::vector<std::size_t> nonzero_indices() const;
  double logit(const FeatureVector& x) const;
};

struct L1Options {
  double tol = 1e-10;
  int max_iter = 20000;
};

struct L1Fit {
  LinearModel model;
  bool converged = false;
  int iterations = 0;
  std::vector<double> objective_trace;  // objective after each accepted iterate
};

/// Mean logistic loss plus (1/lambda) * ||w||_1 with an unpenalized intercept.
double l1_logreg_objective(const DesignMatrix& x, std::span<const int> y,
                           std::span<const double> w, double intercept, double lambda);

/// Proximal gradient (soft-thresholding) with backtracking; the objective is
/// non-increasing. Returns the last iterate with converged=false when max_iter is hit.
L1Fit train_l1_logreg(const DesignMatrix& x, std::span<const int> y, double lambda,
                      L1Options options = {});

double sigmoid(double z);
double logit_of(double p);

double predict_linear(const LinearModel& model, const FeatureVector& x);
double predict_linear(const LinearModel& model, std::span<const double> x);

std::vector<double> predict_cohort(const LinearModel& model, const Cohort& cohort);

/// Teacher fit on fixed windows: best validation AUC over the lambda grid
/// (earliest grid entry wins ties).
struct TeacherFit {
  LinearModel model;
  double validation_auc = 0.0;
};
TeacherFit fit_teacher(const Cohort& train, const Cohort& validation, const WindowSet& windows,
                       std::span<const double> lambda_grid, L1Options options = {});

struct WindowSubsetScore {
  WindowSet windows;
  double lambda = 0.0;
  double validation_auc = 0.0;
};

struct WindowSelection {
  WindowSet best;
  TeacherFit teacher;
  std::vector<WindowSubsetScore> scores;  // one per subset, lexicographic order
};

/// Exhaustive search over every size-n_windows subset of the candidates; ties
/// go to the lexicographically smallest offset tuple.
WindowSelection select_windows(std::span<const int> candidates, std::size_t n_windows,
                               const Cohort& train, const Cohort& validation,
                               std::span<const double> lambda_grid, L1Options options = {});

nlohmann::json linear_model_to_json(const LinearModel& model);
LinearModel linear_model_from_json(const nlohmann::json& j, std::size_t vocab_size);

}  // namespace sard
