#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sard/adam.hpp"
#include "sard/corpus.hpp"
#include "sard/losses.hpp"
#include "sard/sard_model.hpp"
#include "sard/windowed_linear.hpp"

namespace sard {

struct TrainConfig {
  std::size_t batch_size = 500;  // effective, reached by accumulation
  std::size_t micro_batch = 50;
  std::size_t max_epochs = 50;
  std::size_t early_stop_patience = 5;
  std::vector<double> alpha_grid = {0.0, 0.05, 0.1, 0.15, 0.2};
  AdamOptions adam;
  bool dropout = true;  // train_mode during updates
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Packed visits, labels and teacher probabilities for a cohort.
struct PreparedSet {
  std::vector<PackedVisits> visits;
  std::vector<int> labels;
  std::vector<double> teacher;

  std::size_t size() const noexcept { return visits.size(); }
  std::vector<Example> examples() const;
};

/// teacher may be null, in which case teacher probabilities are 0.5.
PreparedSet prepare_set(const Cohort& cohort, const SardConfig& config,
                        const LinearModel* teacher);

/// Inference-mode probabilities.
std::vector<double> predict_set(const SardModel& model, const PreparedSet& set);

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the state before any update
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_auc = 0.0;
  double wall_time = 0.0;  // seconds since the phase started
};

struct TrainHistory {
  std::string phase;  // "pretrain" or "finetune"
  bool skipped = false;
  bool diverged = false;
  double alpha = 0.0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> epochs;
};

void write_history_csv(std::ostream& out, const TrainHistory& history);

struct TrainResult {
  SardModel model;
  TrainHistory history;
};

/// One optimizer step on the mean loss of `batch`, accumulated over micro-batches.
/// Returns the batch loss.
double accumulate_and_step(SardModel& model, AdamState& adam, std::span<const Example> batch,
                           const LossSpec& loss, std::size_t micro_batch, ForwardOptions options);

/// Mean gradient over `batch` computed as the size-weighted sum of micro-batch gradients.
GradientResult accumulated_gradient(const SardModel& model, std::span<const Example> batch,
                                    const LossSpec& loss, std::size_t micro_batch,
                                    ForwardOptions options);

/// Minimizes mean RD loss; early-stops on validation RD loss.
TrainResult pretrain_rd(SardModel model, const PreparedSet& train, const PreparedSet& validation,
                        double class_weight, const TrainConfig& config);

/// Minimizes CE + alpha * RD; early-stops on validation AUC.
TrainResult finetune(SardModel model, const PreparedSet& train, const PreparedSet& validation,
                     double class_weight, const TrainConfig& config, double alpha);

struct AlphaSearch {
  TrainResult best;
  std::vector<std::pair<double, double>> scores;  // (alpha, best validation AUC)
};

/// Fine-tunes once per alpha in config.alpha_grid and keeps the best validation AUC
/// (earliest grid entry wins ties).
AlphaSearch tune_alpha(const SardModel& start, const PreparedSet& train,
                       const PreparedSet& validation, double class_weight,
                       const TrainConfig& config);

}  // namespace sard
