#include "sard/mlp.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

#include "sard/errors.hpp"
#include "sard/evaluation.hpp"
#include "sard/rng.hpp"
#include "sard/windowed_linear.hpp"

namespace sard {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;
using CVec = Eigen::Map<const Eigen::VectorXd>;
using Vec = Eigen::Map<Eigen::VectorXd>;

enum : std::size_t { W1, B1, W2, B2, W3, B3 };

CMap view(const Tensor& t, std::size_t rows, std::size_t cols) {
  return CMap(t.values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

RowMat gather(const Matrix& x, std::span<const std::size_t> rows) {
  RowMat out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(x.cols()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = x(rows[i], c);
  }
  return out;
}

}  // namespace

Mlp::Mlp(std::size_t inputs, std::size_t hidden) : inputs_(inputs), hidden_(hidden) {
  if (hidden == 0) throw std::invalid_argument("hidden width must be positive");
  params_.add("w1", {hidden, inputs});
  params_.add("b1", {hidden});
  params_.add("w2", {hidden, hidden});
  params_.add("b2", {hidden});
  params_.add("w3", {hidden});
  params_.add("b3", {1});
}

Mlp Mlp::random(std::size_t inputs, std::size_t hidden, std::uint64_t seed) {
  Mlp m(inputs, hidden);
  const double fan[] = {static_cast<double>(std::max<std::size_t>(inputs, 1)), 0.0,
                        static_cast<double>(hidden), 0.0, static_cast<double>(hidden), 0.0};
  for (std::size_t i = 0; i < m.params_.count(); ++i) {
    if (fan[i] == 0.0) continue;
    auto rng = make_rng(seed, 0x3100 + i);
    const double sd = std::sqrt((i == W3 ? 1.0 : 2.0) / fan[i]);
    for (auto& v : m.params_[i].values) v = sd * standard_normal(rng);
  }
  return m;
}

std::vector<double> Mlp::logits(const Matrix& x) const {
  if (x.cols() != inputs_) throw std::invalid_argument("mlp input width mismatch");
  const auto n = static_cast<Eigen::Index>(x.rows());
  const CMap X(x.data().data(), n, static_cast<Eigen::Index>(inputs_));
  const auto& P = params_;
  RowMat h1 = (X * view(P[W1], hidden_, inputs_).transpose()).rowwise() +
              CVec(P[B1].values.data(), static_cast<Eigen::Index>(hidden_)).transpose();
  h1 = h1.cwiseMax(0.0);
  RowMat h2 = (h1 * view(P[W2], hidden_, hidden_).transpose()).rowwise() +
              CVec(P[B2].values.data(), static_cast<Eigen::Index>(hidden_)).transpose();
  h2 = h2.cwiseMax(0.0);
  Eigen::VectorXd z = h2 * CVec(P[W3].values.data(), static_cast<Eigen::Index>(hidden_));
  std::vector<double> out(x.rows());
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = z(i) + P[B3].values[0];
  return out;
}

std::vector<double> Mlp::predict(const Matrix& x) const {
  auto z = logits(x);
  for (auto& v : z) v = sigmoid(v);
  return z;
}

double Mlp::gradient(const Matrix& x, std::span<const std::size_t> rows, std::span<const int> labels,
                     std::span<const double> teacher, const LossSpec& loss, ParameterSet& grad) const {
  if (x.cols() != inputs_) throw std::invalid_argument("mlp input width mismatch");
  if (rows.empty()) throw std::invalid_argument("empty batch");
  const auto& P = params_;
  const auto h = static_cast<Eigen::Index>(hidden_);
  const RowMat X = gather(x, rows);
  const auto w1 = view(P[W1], hidden_, inputs_);
  const auto w2 = view(P[W2], hidden_, hidden_);
  const CVec w3(P[W3].values.data(), h);

  RowMat a1 = (X * w1.transpose()).rowwise() + CVec(P[B1].values.data(), h).transpose();
  RowMat h1 = a1.cwiseMax(0.0);
  RowMat a2 = (h1 * w2.transpose()).rowwise() + CVec(P[B2].values.data(), h).transpose();
  RowMat h2 = a2.cwiseMax(0.0);
  Eigen::VectorXd z = (h2 * w3).array() + P[B3].values[0];

  const double inv = 1.0 / static_cast<double>(rows.size());
  Eigen::VectorXd dz(z.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const std::size_t r = rows[static_cast<std::size_t>(i)];
    const double p = sigmoid(z(i));
    const auto lv = evaluate_loss(loss, labels[r], teacher.empty() ? 0.5 : teacher[r], p);
    total += lv.loss * inv;
    dz(i) = lv.d_student * p * (1.0 - p) * inv;
  }

  Vec(grad[W3].values.data(), h) += h2.transpose() * dz;
  grad[B3].values[0] += dz.sum();
  RowMat d2 = (dz * w3.transpose()).cwiseProduct((a2.array() > 0.0).cast<double>().matrix());
  Map(grad[W2].values.data(), h, h) += d2.transpose() * h1;
  Vec(grad[B2].values.data(), h) += d2.colwise().sum().transpose();
  RowMat d1 = (d2 * w2).cwiseProduct((a1.array() > 0.0).cast<double>().matrix());
  Map(grad[W1].values.data(), h, static_cast<Eigen::Index>(inputs_)) += d1.transpose() * X;
  Vec(grad[B1].values.data(), h) += d1.colwise().sum().transpose();
  return total;
}

Matrix select_columns(const Matrix& x, std::span<const std::size_t> columns) {
  Matrix out(x.rows(), columns.size());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) out(r, c) = x(r, columns[c]);
  }
  return out;
}

MlpTrainResult train_mlp(Mlp model, const MlpData& train, const MlpData& validation,
                         const LossSpec& loss, const MlpTrainConfig& config, bool select_on_loss,
                         std::uint64_t seed) {
  loss.validate();
  if (config.batch_size == 0 || config.max_epochs == 0) throw std::invalid_argument("bad mlp config");
  const std::size_t n = train.x->rows();
  // (primary, validation loss); auc ties fall back to the loss
  const auto metric = [&](const Mlp& m) {
    const auto p = m.predict(*validation.x);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      s += evaluate_loss(loss, validation.labels[i],
                         validation.teacher.empty() ? 0.5 : validation.teacher[i], p[i]).loss;
    }
    s /= static_cast<double>(p.size());
    if (select_on_loss) return std::pair{s, s};
    return std::pair{auc_roc(ScoredSet(p, {validation.labels.begin(), validation.labels.end()})), s};
  };
  const auto better = [&](const std::pair<double, double>& a, const std::pair<double, double>& b) {
    if (select_on_loss) return a.first < b.first;
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  };

  auto best = metric(model);
  MlpTrainResult result{model, 0, best.first, 0};
  AdamState adam = AdamState::init(model.parameters(), config.adam);
  std::vector<std::size_t> order(n);
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_rng(seed, 0x3200 + epoch);
    shuffle(order.begin(), order.end(), rng);
    try {
      for (std::size_t lo = 0; lo < n; lo += config.batch_size) {
        const std::span<const std::size_t> rows(order.data() + lo, std::min(config.batch_size, n - lo));
        auto grad = model.parameters().zeros_like();
        model.gradient(*train.x, rows, train.labels, train.teacher, loss, grad);
        adam_update(adam, model.parameters(), grad);
      }
    } catch (const DivergenceError&) {
      break;
    }
    result.epochs_run = epoch;
    const auto m = metric(model);
    if (!std::isfinite(m.first) || !std::isfinite(m.second)) break;
    if (better(m, best)) {
      result.model = model;
      best = m;
      result.best_metric = m.first;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace sard
