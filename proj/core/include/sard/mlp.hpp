#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sard/adam.hpp"
#include "sard/losses.hpp"
#include "sard/matrix.hpp"
#include "sard/parameters.hpp"

namespace sard {

/// Two ReLU hidden layers followed by a weighted sum, bias and sigmoid.
class Mlp {
 public:
  Mlp(std::size_t inputs, std::size_t hidden);
  /// He-style Gaussian weights, zero biases.
  static Mlp random(std::size_t inputs, std::size_t hidden, std::uint64_t seed);

  std::size_t inputs() const noexcept { return inputs_; }
  std::size_t hidden() const noexcept { return hidden_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

  std::vector<double> logits(const Matrix& x) const;
  std::vector<double> predict(const Matrix& x) const;

  /// Mean loss over the listed rows and its gradient.
  double gradient(const Matrix& x, std::span<const std::size_t> rows, std::span<const int> labels,
                  std::span<const double> teacher, const LossSpec& loss, ParameterSet& grad) const;

 private:
  std::size_t inputs_;
  std::size_t hidden_;
  ParameterSet params_;
};

/// Selected columns of x, in the given order.
Matrix select_columns(const Matrix& x, std::span<const std::size_t> columns);

struct MlpTrainConfig {
  std::size_t batch_size = 100;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  AdamOptions adam{1e-3, 0.9, 0.98, 1e-9};
};

struct MlpData {
  const Matrix* x = nullptr;
  std::span<const int> labels;
  std::span<const double> teacher;  // may be empty when the loss ignores it
};

struct MlpTrainResult {
  Mlp model;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;  // validation loss (min_loss) or AUC (max_auc)
  std::size_t epochs_run = 0;
};

/// Adam on mini-batches; keeps the epoch with the best validation metric
/// (lowest loss when select_on_loss, otherwise highest AUC).
MlpTrainResult train_mlp(Mlp model, const MlpData& train, const MlpData& validation,
                         const LossSpec& loss, const MlpTrainConfig& config, bool select_on_loss,
                         std::uint64_t seed);

}  // namespace sard
