#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sard/corpus.hpp"
#include "sard/losses.hpp"
#include "sard/matrix.hpp"
#include "sard/parameters.hpp"

namespace sard {

enum class EncoderVariant { self_attention, gru, identity };
enum class HeadVariant { conv, summing };

std::string to_string(EncoderVariant v);
std::string to_string(HeadVariant v);
EncoderVariant parse_encoder_variant(std::string_view s);
HeadVariant parse_head_variant(std::string_view s);

/// `count` frequencies in geometric progression from lo to hi.
std::vector<double> geometric_frequencies(std::size_t count, double lo = 1e-5, double hi = 1.0);

struct SardConfig {
  std::size_t embedding_dim = 32;  // d_e
  std::size_t max_visits = 64;     // n_v
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t kernels = 10;
  double dropout = 0.05;
  EncoderVariant encoder = EncoderVariant::self_attention;
  HeadVariant head = HeadVariant::conv;
  /// Temporal frequencies, length d_e / 2. Empty means the geometric default.
  std::vector<double> omega;
  int time_clip_days = 365;

  void validate() const;
  std::vector<double> frequencies() const;
  std::size_t head_width() const { return embedding_dim / heads; }

  friend bool operator==(const SardConfig&, const SardConfig&) = default;
};

nlohmann::json to_json(const SardConfig& c);
SardConfig sard_config_from_json(const nlohmann::json& j);

/// One patient's visits packed most-recent-first into max_visits slots.
struct PackedVisits {
  std::vector<std::vector<std::size_t>> codes;  // per slot, empty for pads
  std::vector<int> elapsed;                     // clipped days before the prediction day
  std::vector<std::uint8_t> mask;               // 1 for real visits

  std::size_t slots() const noexcept { return mask.size(); }
  std::size_t active() const noexcept;
};

/// Keeps the max_visits most recent visits. Throws DataError when the patient has none.
PackedVisits pack_patient(const PatientRecord& patient, const CodeVocab& vocab, int prediction_day,
                          std::size_t max_visits, int time_clip_days = 365);

/// Sum of code embeddings (rows of the |C| x d_e matrix phi).
std::vector<double> embed_visit(std::span<const std::size_t> codes, std::span<const double> phi,
                                std::size_t embedding_dim);
std::vector<double> embed_visit(const Visit& visit, const CodeVocab& vocab,
                                std::span<const double> phi, std::size_t embedding_dim);

/// sin(t omega) || cos(t omega) with t = min(clip, prediction_day - visit_day).
std::vector<double> temporal_embed(int visit_day, int prediction_day, std::span<const double> omega,
                                   int clip_days = 365);

enum class EmbeddingInit { gaussian, cooccurrence };

class SardModel {
 public:
  /// All parameters zero.
  SardModel(SardConfig config, std::size_t vocab_size);

  /// Gaussian initialization of every parameter block; biases zero.
  static SardModel random(SardConfig config, std::size_t vocab_size, std::uint64_t seed);

  const SardConfig& config() const noexcept { return config_; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }
  const std::vector<double>& omega() const noexcept { return omega_; }

  Tensor& phi() { return params_[phi_]; }
  const Tensor& phi() const { return params_[phi_]; }

  /// Index helpers into parameters().
  struct AttentionBlock {
    std::size_t wq, bq, wk, bk, wv, bv;
  };
  struct GruBlock {
    std::size_t wz, uz, bz, wr, ur, br, wc, uc, bc;
  };
  const AttentionBlock& attention(std::size_t layer, std::size_t head) const {
    return attention_[layer * config_.heads + head];
  }
  const GruBlock& gru() const { return gru_; }
  std::size_t kernels_index() const { return kernels_; }
  std::size_t head_weight_index() const { return head_w_; }
  std::size_t head_bias_index() const { return head_b_; }

  /// psi + tau per slot (pad rows zero).
  Matrix input_embeddings(const PackedVisits& visits) const;

  void save(const std::filesystem::path& path) const;
  static SardModel load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  static SardModel from_json(const nlohmann::json& j);

  friend bool operator==(const SardModel& a, const SardModel& b) {
    return a.config_ == b.config_ && a.vocab_size_ == b.vocab_size_ && a.params_ == b.params_;
  }

 private:
  void build_layout();

  SardConfig config_;
  std::size_t vocab_size_ = 0;
  std::vector<double> omega_;
  ParameterSet params_;
  std::size_t phi_ = 0;
  std::vector<AttentionBlock> attention_;
  GruBlock gru_{};
  std::size_t kernels_ = 0;
  std::size_t head_w_ = 0;
  std::size_t head_b_ = 0;
};

struct ForwardOptions {
  bool train_mode = false;
  std::uint64_t seed = 0;
};

/// Post-softmax attention weights, one n_v x n_v matrix per (layer, head), layer-major.
using AttentionMaps = std::vector<Matrix>;

/// Contextualized embeddings (n_v x d_e, pad rows zero).
Matrix encode(const Matrix& inputs, std::span<const std::uint8_t> mask, const SardModel& model,
              ForwardOptions options = {}, AttentionMaps* attention = nullptr);

struct HeadOutput {
  double probability = 0.0;
  double logit = 0.0;  // pre-sigmoid output of the final linear layer
  /// Conv head only: per kernel max-pooled response, its sigmoid, and the winning slot.
  std::vector<double> pooled;
  std::vector<double> activations;
  std::vector<std::size_t> argmax;
};

/// Max-pool ties go to the lowest slot index. Throws when no slot is active.
HeadOutput head_forward_detailed(const Matrix& contextualized, std::span<const std::uint8_t> mask,
                                 const SardModel& model);
double head_forward(const Matrix& contextualized, std::span<const std::uint8_t> mask,
                    const SardModel& model);

HeadOutput forward_packed(const SardModel& model, const PackedVisits& visits,
                          ForwardOptions options = {});
double model_forward(const SardModel& model, const PatientRecord& patient, const Cohort& cohort,
                     ForwardOptions options = {});

struct Example {
  const PackedVisits* visits = nullptr;
  int label = 0;
  double teacher = 0.5;
};

struct GradientResult {
  double loss = 0.0;  // mean over the batch
  ParameterSet gradient;
};

/// Exact reverse-mode gradient of the mean batch loss. Dropout masks are drawn
/// from (options.seed, example position) when options.train_mode is set.
GradientResult model_gradient(const SardModel& model, std::span<const Example> batch,
                              const LossSpec& loss, ForwardOptions options = {});

/// Mean loss only (no gradient).
double model_loss(const SardModel& model, std::span<const Example> batch, const LossSpec& loss,
                  ForwardOptions options = {});

/// Co-occurrence initializer: truncated eigendecomposition of the positive PMI
/// matrix of codes sharing a visit, scaled to the Gaussian initializer's norm.
Matrix cooccurrence_embeddings(const Cohort& train, std::size_t embedding_dim);

}  // namespace sard
