#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sard/corpus.hpp"
#include "sard/matrix.hpp"
#include "sard/windowed_linear.hpp"

namespace sard {

/// Two Gaussian clusters; only the first beta*K coordinates carry signal.
struct ClusterParams {
  std::size_t features = 200;  // K
  double gamma = 0.5;          // ||c0 - c1||
  double rho = 0.05;           // P(y = 1)
  double beta = 0.02;          // informative fraction
  std::size_t samples = 2000;  // N

  std::size_t informative() const;
  void validate() const;
};

struct ClusterDataset {
  Matrix x;
  std::vector<int> y;
  /// Unit direction u in R^{beta K}; c1 = +gamma/2 u, c0 = -gamma/2 u.
  std::vector<double> direction;
  std::vector<std::size_t> informative_features;
  ClusterParams params;
  std::uint64_t seed = 0;
};

ClusterDataset gen_cluster_dataset(const ClusterParams& params, std::uint64_t seed);

void write_cluster_csv(const std::filesystem::path& path, const ClusterDataset& data);
ClusterDataset read_cluster_csv(const std::filesystem::path& path);

struct PlantedWeight {
  std::size_t window = 0;  // index into planted_windows
  std::string code;
  double weight = 0.0;
};

struct ClaimsGenParams {
  std::size_t n_patients = 2000;
  std::size_t vocab_size = 40;
  double mean_visits = 8.0;
  double mean_codes_per_visit = 3.0;
  int history_span_days = 730;
  /// Base code distribution is proportional to 1 / (rank + 1)^zipf_exponent.
  double zipf_exponent = 0.8;
  WindowSet planted_windows;
  std::vector<PlantedWeight> planted_weights;
  double intercept = 0.0;
  /// After this day codes are drawn from a mixture shifted toward the rarest codes.
  std::optional<int> drift_day;
  double drift_strength = 0.5;
  std::size_t n_subgroups = 4;

  void validate() const;
  std::string code_name(std::size_t index) const;
};

/// A small planted task: three windows and a handful of signed code weights.
ClaimsGenParams default_claims_params();

Cohort gen_claims_cohort(const ClaimsGenParams& params, std::uint64_t seed);

/// Planted log-odds for a generated (or any) patient.
double planted_logit(const ClaimsGenParams& params, const PatientRecord& patient,
                     const CodeVocab& vocab, int prediction_day);

/// The uniform draw that decided patient `index`'s label: label = u < sigmoid(planted_logit).
double planted_label_uniform(std::uint64_t seed, std::size_t index);

/// The planted model expressed as a LinearModel over the planted windows.
LinearModel planted_linear_model(const ClaimsGenParams& params);

nlohmann::json to_json(const ClusterParams& p);
nlohmann::json to_json(const ClaimsGenParams& p);
ClusterParams cluster_params_from_json(const nlohmann::json& j);
ClaimsGenParams claims_params_from_json(const nlohmann::json& j);

}  // namespace sard
