#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "sard/sard_model.hpp"

namespace sard {

Matrix cooccurrence_embeddings(const Cohort& train, std::size_t embedding_dim) {
  const std::size_t v = train.vocab.size();
  if (v == 0 || embedding_dim == 0) throw std::invalid_argument("empty vocabulary or dimension");

  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(v));
  std::vector<std::size_t> idx;
  for (const auto& rec : train.records) {
    for (const auto& visit : rec.visits) {
      idx.clear();
      for (const auto& c : visit.codes) idx.push_back(train.vocab.index(c));
      for (std::size_t a = 0; a < idx.size(); ++a) {
        for (std::size_t b = a + 1; b < idx.size(); ++b) {
          counts(static_cast<Eigen::Index>(idx[a]), static_cast<Eigen::Index>(idx[b])) += 1.0;
          counts(static_cast<Eigen::Index>(idx[b]), static_cast<Eigen::Index>(idx[a])) += 1.0;
        }
      }
    }
  }

  Matrix out(v, embedding_dim);
  const double total = counts.sum();
  if (total <= 0.0) return out;  // no visit has two codes

  const Eigen::VectorXd marginal = counts.rowwise().sum() / total;
  Eigen::MatrixXd ppmi = Eigen::MatrixXd::Zero(counts.rows(), counts.cols());
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    for (Eigen::Index j = 0; j < counts.cols(); ++j) {
      if (counts(i, j) <= 0.0) continue;
      const double pmi = std::log(counts(i, j) / total / (marginal(i) * marginal(j)));
      ppmi(i, j) = std::max(0.0, pmi);
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ppmi);
  const Eigen::VectorXd& values = eig.eigenvalues();  // ascending
  const Eigen::MatrixXd& vectors = eig.eigenvectors();
  const std::size_t keep = std::min(embedding_dim, v);
  for (std::size_t k = 0; k < keep; ++k) {
    const Eigen::Index col = static_cast<Eigen::Index>(v - 1 - k);
    const double scale = std::sqrt(std::abs(values(col)));
    // Fix the sign so the largest-magnitude entry is positive.
    Eigen::Index arg = 0;
    vectors.col(col).cwiseAbs().maxCoeff(&arg);
    const double sign = vectors(arg, col) < 0.0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < v; ++r) {
      out(r, k) = sign * scale * vectors(static_cast<Eigen::Index>(r), col);
    }
  }

  // Match the Gaussian initializer, whose rows have unit expected squared norm.
  double sq = 0.0;
  for (double x : out.data()) sq += x * x;
  const double mean_sq = sq / static_cast<double>(v);
  if (mean_sq > 0.0) {
    const double s = 1.0 / std::sqrt(mean_sq);
    for (double& x : out.data()) x *= s;
  }
  return out;
}

}  // namespace sard
