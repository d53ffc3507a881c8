#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sard/cluster_bench.hpp"
#include "sard/pipeline.hpp"
#include "sard/synthgen.hpp"

namespace sard::cli {

enum class DataKind { claims, cluster };

struct DataSection {
  DataKind kind = DataKind::claims;
  ClaimsGenParams claims = default_claims_params();
  ClusterParams cluster;
  /// Input file; defaults to <output_dir>/data/{cohort.jsonl,cluster.csv}.
  std::optional<std::filesystem::path> path;
};

struct LemmaSection {
  std::vector<std::size_t> n_freq = {16, 32, 64};
  std::vector<double> sharpness = {20.0};
  /// 0 picks time_clip_days + 2.
  double period = 0.0;
};

struct ReportSection {
  std::size_t subgroup_min_positives = 10;
  double sensitivity = 0.5;
  std::size_t topk = 5;
  std::size_t example_patient = 0;
};

struct SweepSection {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  bool reverse_distill = true;
  DataSection data;
  PipelineConfig pipeline;
  ClusterBenchConfig cluster_bench;
  LemmaSection lemma;
  ReportSection report;
  SweepSection sweep;
};

/// seed, output_dir and data are required; every other section has defaults.
/// Unknown keys anywhere throw DataError.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// SHA-256 of the canonical JSON dump, lowercase hex.
std::string manifest_hash(const ExperimentConfig& c);

std::filesystem::path data_path(const ExperimentConfig& c);

}  // namespace sard::cli
