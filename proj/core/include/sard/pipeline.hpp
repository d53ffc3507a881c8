#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sard/corpus.hpp"
#include "sard/synthgen.hpp"
#include "sard/training.hpp"
#include "sard/windowed_linear.hpp"

namespace sard {

/// End-to-end claims experiment: teacher selection, optional RD pre-training, fine-tuning.
struct PipelineConfig {
  SplitFractions split;
  std::vector<int> window_candidates = default_window_candidates();
  std::size_t n_windows = 3;
  std::vector<double> lambda_grid = default_lambda_grid();
  L1Options l1{1e-8, 5000};
  SardConfig model;
  TrainConfig train;
  EmbeddingInit init = EmbeddingInit::gaussian;
};

nlohmann::json to_json(const PipelineConfig& c);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

/// Everything shared by the RD and no-RD branches of one seed.
struct PipelineData {
  CohortSplit split;
  WindowSelection selection;
  PreparedSet train;
  PreparedSet validation;
  PreparedSet test;
  double class_weight = 1.0;

  const LinearModel& teacher() const { return selection.teacher.model; }
};

PipelineData prepare_pipeline(const Cohort& cohort, const PipelineConfig& config, std::uint64_t seed);

struct BranchResult {
  SardModel initial;
  std::optional<TrainResult> pretrain;  // empty when RD is skipped
  AlphaSearch finetune;
  std::vector<double> test_probabilities;
  double test_auc = 0.0;

  const SardModel& final_model() const { return finetune.best.model; }
};

/// Random init (seeded) then, when reverse_distill, RD pre-training before the alpha search.
BranchResult run_branch(const PipelineData& data, const PipelineConfig& config, bool reverse_distill,
                        std::uint64_t seed);

SardModel initial_model(const PipelineData& data, const PipelineConfig& config, std::uint64_t seed);

}  // namespace sard
