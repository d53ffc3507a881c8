#include "sard/windowed_linear.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sard/errors.hpp"
#include "sard/evaluation.hpp"

namespace sard {

using nlohmann::json;

WindowSet::WindowSet(std::vector<int> o) : offsets(std::move(o)) {
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (offsets[i] <= 0) throw std::invalid_argument("window offsets must be positive");
    if (i > 0 && offsets[i] <= offsets[i - 1]) {
      throw std::invalid_argument("window offsets must be strictly increasing");
    }
  }
}

std::vector<int> default_window_candidates() {
  return {15, 30, 60, 90, 180, 360, 540, 720, kUnboundedOffset};
}

std::vector<double> default_lambda_grid() { return {20, 2, 0.2, 0.02, 0.002, 0.0002}; }

std::string format_offset(int offset) {
  return offset == kUnboundedOffset ? std::string("inf") : std::to_string(offset);
}

int parse_offset(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "infinity") return kUnboundedOffset;
    try {
      return std::stoi(s);
    } catch (const std::exception&) {
      throw DataError("bad window offset '" + s + "'");
    }
  }
  if (j.is_null()) return kUnboundedOffset;
  return j.get<int>();
}

json offset_to_json(int offset) {
  if (offset == kUnboundedOffset) return "inf";
  return offset;
}

std::vector<double> FeatureVector::to_dense() const {
  std::vector<double> out(dimension, 0.0);
  for (auto i : active) out[i] = 1.0;
  return out;
}

bool FeatureVector::operator[](std::size_t i) const {
  return std::binary_search(active.begin(), active.end(), i);
}

FeatureVector featurize(const PatientRecord& patient, const WindowSet& windows,
                        const CodeVocab& vocab, int prediction_day) {
  const std::size_t n_codes = vocab.size();
  FeatureVector f;
  f.dimension = windows.size() * n_codes;
  for (const auto& visit : patient.visits) {
    const int elapsed = prediction_day - visit.day;
    if (elapsed < 0) {
      throw DataError("patient '" + patient.patient_id + "' has a visit after the prediction day");
    }
    for (const auto& code : visit.codes) {
      const auto c = vocab.index(code);
      for (std::size_t w = 0; w < windows.size(); ++w) {
        if (windows.contains(w, elapsed)) f.active.push_back(w * n_codes + c);
      }
    }
  }
  std::sort(f.active.begin(), f.active.end());
  f.active.erase(std::unique(f.active.begin(), f.active.end()), f.active.end());
  return f;
}

std::vector<FeatureVector> featurize_cohort(const Cohort& cohort, const WindowSet& windows) {
  std::vector<FeatureVector> out;
  out.reserve(cohort.records.size());
  for (const auto& r : cohort.records) {
    out.push_back(featurize(r, windows, cohort.vocab, cohort.prediction_day));
  }
  return out;
}

DesignMatrix DesignMatrix::dense(Matrix values) {
  DesignMatrix m;
  m.rows_ = values.rows();
  m.cols_ = values.cols();
  m.sparse_ = false;
  m.dense_ = std::move(values);
  return m;
}

DesignMatrix DesignMatrix::sparse_binary(std::size_t cols, std::vector<FeatureVector> rows) {
  DesignMatrix m;
  m.rows_ = rows.size();
  m.cols_ = cols;
  m.sparse_ = true;
  for (const auto& r : rows) {
    if (r.dimension != cols) throw std::invalid_argument("feature dimension mismatch");
  }
  m.sparse_rows_ = std::move(rows);
  return m;
}

double DesignMatrix::row_dot(std::size_t row, std::span<const double> w) const {
  if (sparse_) {
    double s = 0.0;
    for (auto j : sparse_rows_[row].active) s += w[j];
    return s;
  }
  return dot(dense_.row(row), w);
}

void DesignMatrix::multiply(std::span<const double> w, std::span<double> out) const {
  for (std::size_t i = 0; i < rows_; ++i) out[i] = row_dot(i, w);
}

void DesignMatrix::multiply_transposed(std::span<const double> r, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < rows_; ++i) {
    if (sparse_) {
      for (auto j : sparse_rows_[i].active) out[j] += r[i];
    } else {
      axpy(r[i], dense_.row(i), out);
    }
  }
}

DesignMatrix DesignMatrix::select_columns(std::span<const std::size_t> columns) const {
  if (sparse_) {
    std::vector<std::size_t> remap(cols_, SIZE_MAX);
    for (std::size_t k = 0; k < columns.size(); ++k) remap[columns[k]] = k;
    std::vector<FeatureVector> rows;
    rows.reserve(rows_);
    for (const auto& r : sparse_rows_) {
      FeatureVector f;
      f.dimension = columns.size();
      for (auto j : r.active) {
        if (remap[j] != SIZE_MAX) f.active.push_back(remap[j]);
      }
      std::sort(f.active.begin(), f.active.end());
      rows.push_back(std::move(f));
    }
    return sparse_binary(columns.size(), std::move(rows));
  }
  Matrix m(rows_, columns.size());
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t k = 0; k < columns.size(); ++k) m(i, k) = dense_(i, columns[k]);
  }
  return dense(std::move(m));
}

std::vector<std::size_t> LinearModel::nonzero_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] != 0.0) out.push_back(i);
  }
  return out;
}

double LinearModel::logit(const FeatureVector& x) const {
  if (x.dimension != weights.size()) throw std::invalid_argument("feature dimension mismatch");
  double z = intercept;
  for (auto j : x.active) z += weights[j];
  return z;
}

double sigmoid(double z) {
  if (z >= 0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logit_of(double p) { return std::log(p) - std::log1p(-p); }

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double l1_norm(std::span<const double> w) {
  double s = 0.0;
  for (double v : w) s += std::abs(v);
  return s;
}

double mean_logloss(std::span<const double> z, std::span<const int> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += softplus(z[i]) - (y[i] == 1 ? z[i] : 0.0);
  return s / static_cast<double>(z.size());
}

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

}  // namespace

double l1_logreg_objective(const DesignMatrix& x, std::span<const int> y,
                           std::span<const double> w, double intercept, double lambda) {
  std::vector<double> z(x.rows());
  x.multiply(w, z);
  for (auto& v : z) v += intercept;
  return mean_logloss(z, y) + l1_norm(w) / lambda;
}

L1Fit train_l1_logreg(const DesignMatrix& x, std::span<const int> y, double lambda,
                      L1Options options) {
  if (x.rows() != y.size()) throw std::invalid_argument("train_l1_logreg: rows and labels differ");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw std::invalid_argument("train_l1_logreg: lambda must be positive and finite");
  }
  if (x.rows() == 0) throw std::invalid_argument("train_l1_logreg: empty design matrix");

  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double penalty = 1.0 / lambda;

  std::vector<double> w(d, 0.0);
  // Start the intercept at the empirical log-odds, clamped for all-one-class data.
  const double base = std::clamp(
      static_cast<double>(std::count(y.begin(), y.end(), 1)) * inv_n, 1e-7, 1.0 - 1e-7);
  double b = logit_of(base);

  std::vector<double> z(n);
  std::vector<double> residual(n);
  std::vector<double> grad(d);
  std::vector<double> w_new(d);
  std::vector<double> z_new(n);

  const auto smooth = [&](std::span<const double> zz) { return mean_logloss(zz, y); };

  x.multiply(w, z);
  for (auto& v : z) v += b;
  for (double v : z) {
    if (!std::isfinite(v)) throw std::invalid_argument("train_l1_logreg: non-finite inputs");
  }
  double f = smooth(z);
  double objective = f + penalty * l1_norm(w);

  L1Fit fit;
  fit.objective_trace.push_back(objective);
  double step = 1.0;

  for (int iter = 0; iter < options.max_iter; ++iter) {
    double grad_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      residual[i] = (sigmoid(z[i]) - (y[i] == 1 ? 1.0 : 0.0)) * inv_n;
      grad_b += residual[i];
    }
    x.multiply_transposed(residual, grad);

    step *= 2.0;
    double f_new = 0.0;
    double b_new = 0.0;
    for (int bt = 0; bt < 200; ++bt) {
      for (std::size_t j = 0; j < d; ++j) {
        w_new[j] = soft_threshold(w[j] - step * grad[j], step * penalty);
      }
      b_new = b - step * grad_b;
      x.multiply(w_new, z_new);
      for (auto& v : z_new) v += b_new;
      f_new = smooth(z_new);
      // Quadratic upper bound (sufficient decrease) test.
      double lin = (b_new - b) * grad_b;
      double sq = (b_new - b) * (b_new - b);
      for (std::size_t j = 0; j < d; ++j) {
        const double delta = w_new[j] - w[j];
        lin += delta * grad[j];
        sq += delta * delta;
      }
      if (f_new <= f + lin + sq / (2.0 * step) + 1e-15 * std::abs(f)) break;
      step *= 0.5;
    }

    const double objective_new = f_new + penalty * l1_norm(w_new);
    fit.iterations = iter + 1;
    if (!(objective_new <= objective)) {
      // No further decrease is representable at this step size.
      fit.converged = true;
      break;
    }
    const double decrease = objective - objective_new;
    w.swap(w_new);
    b = b_new;
    z.swap(z_new);
    f = f_new;
    objective = objective_new;
    fit.objective_trace.push_back(objective);
    if (decrease < options.tol) {
      fit.converged = true;
      break;
    }
  }

  fit.model.weights = std::move(w);
  fit.model.intercept = b;
  fit.model.lambda = lambda;
  return fit;
}

double predict_linear(const LinearModel& model, const FeatureVector& x) {
  return sigmoid(model.logit(x));
}

double predict_linear(const LinearModel& model, std::span<const double> x) {
  if (x.size() != model.weights.size()) throw std::invalid_argument("feature dimension mismatch");
  return sigmoid(dot(model.weights, x) + model.intercept);
}

std::vector<double> predict_cohort(const LinearModel& model, const Cohort& cohort) {
  std::vector<double> out;
  out.reserve(cohort.records.size());
  for (const auto& r : cohort.records) {
    out.push_back(
        predict_linear(model, featurize(r, model.window_set, cohort.vocab, cohort.prediction_day)));
  }
  return out;
}

TeacherFit fit_teacher(const Cohort& train, const Cohort& validation, const WindowSet& windows,
                       std::span<const double> lambda_grid, L1Options options) {
  if (lambda_grid.empty()) throw std::invalid_argument("fit_teacher: empty lambda grid");
  const std::size_t dim = windows.size() * train.vocab.size();
  const auto x_train = DesignMatrix::sparse_binary(dim, featurize_cohort(train, windows));
  const auto x_val = featurize_cohort(validation, windows);
  const auto y_train = train.labels();
  const auto y_val = validation.labels();

  TeacherFit best;
  bool have = false;
  for (double lambda : lambda_grid) {
    auto fit = train_l1_logreg(x_train, y_train, lambda, options);
    fit.model.window_set = windows;
    std::vector<double> scores;
    scores.reserve(x_val.size());
    for (const auto& f : x_val) scores.push_back(fit.model.logit(f));
    const double auc = auc_roc(ScoredSet(std::move(scores), y_val));
    if (!have || auc > best.validation_auc) {
      best.model = std::move(fit.model);
      best.validation_auc = auc;
      have = true;
    }
  }
  return best;
}

namespace {

// Advances `idx` to the next k-combination of 0..n-1 in lexicographic order.
bool next_combination(std::vector<std::size_t>& idx, std::size_t n) {
  const std::size_t k = idx.size();
  for (std::size_t i = k; i-- > 0;) {
    if (idx[i] < n - k + i) {
      ++idx[i];
      for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
      return true;
    }
  }
  return false;
}

}  // namespace

WindowSelection select_windows(std::span<const int> candidates, std::size_t n_windows,
                               const Cohort& train, const Cohort& validation,
                               std::span<const double> lambda_grid, L1Options options) {
  std::vector<int> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw std::invalid_argument("select_windows: duplicate candidate offsets");
  }
  if (n_windows == 0 || n_windows > sorted.size()) {
    throw std::invalid_argument("select_windows: n_windows must be in 1..|candidates|");
  }

  WindowSelection out;
  bool have = false;
  std::vector<std::size_t> idx(n_windows);
  for (std::size_t i = 0; i < n_windows; ++i) idx[i] = i;
  do {
    std::vector<int> offsets;
    for (auto i : idx) offsets.push_back(sorted[i]);
    WindowSet ws(std::move(offsets));
    auto teacher = fit_teacher(train, validation, ws, lambda_grid, options);
    out.scores.push_back({ws, teacher.model.lambda, teacher.validation_auc});
    if (!have || teacher.validation_auc > out.teacher.validation_auc) {
      out.best = ws;
      out.teacher = std::move(teacher);
      have = true;
    }
  } while (next_combination(idx, sorted.size()));
  return out;
}

json linear_model_to_json(const LinearModel& model) {
  json offsets = json::array();
  for (int o : model.window_set.offsets) offsets.push_back(offset_to_json(o));
  json nonzero = json::array();
  for (auto i : model.nonzero_indices()) nonzero.push_back(json::array({i, model.weights[i]}));
  return {{"lambda", model.lambda},
          {"intercept", model.intercept},
          {"window_offsets", offsets},
          {"nonzero", nonzero}};
}

LinearModel linear_model_from_json(const json& j, std::size_t vocab_size) {
  LinearModel m;
  try {
    m.lambda = j.at("lambda").get<double>();
    m.intercept = j.at("intercept").get<double>();
    std::vector<int> offsets;
    for (const auto& o : j.at("window_offsets")) offsets.push_back(parse_offset(o));
    m.window_set = WindowSet(std::move(offsets));
    m.weights.assign(m.window_set.size() * vocab_size, 0.0);
    for (const auto& entry : j.at("nonzero")) {
      const auto i = entry.at(0).get<std::size_t>();
      if (i >= m.weights.size()) throw DataError("linear model weight index out of range");
      m.weights[i] = entry.at(1).get<double>();
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed linear model: ") + e.what());
  }
  return m;
}

}  // namespace sard
