#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sard/corpus.hpp"
#include "sard/sard_model.hpp"
#include "sard/windowed_linear.hpp"

namespace sard {

struct KernelAttribution {
  std::size_t kernel = 0;
  std::size_t visit = 0;  // winning slot
  double chi = 0.0;       // max-pooled response
  double weight = 0.0;    // final-layer weight
  double contribution = 0.0;  // weight * sigmoid(chi)
};

struct VisitImportance {
  std::vector<double> scores;  // per slot; pads are 0
  std::vector<KernelAttribution> kernels;
  double bias = 0.0;
  double logit = 0.0;

  double total() const;
};

/// Credits each kernel's contribution to the visit that won its max-pool. Conv head only.
VisitImportance visit_importance(const SardModel& model, const PackedVisits& visits);
VisitImportance visit_importance(const SardModel& model, const PatientRecord& patient,
                                 const Cohort& cohort);

/// Post-softmax attention weights, layer-major then head. Self-attention encoder only.
AttentionMaps attention_maps(const SardModel& model, const PackedVisits& visits);

enum class Binarization { half, median };

struct DissectOptions {
  Binarization threshold = Binarization::half;
  /// Neurons whose best correlation does not exceed this stay unmatched.
  double min_mcc = 0.0;
};

struct NeuronMatch {
  std::size_t neuron = 0;
  std::optional<std::size_t> feature;  // teacher feature index
  std::string feature_name;
  int window_offset = 0;
  double mcc = 0.0;
};

struct DissectionReport {
  std::vector<NeuronMatch> neurons;
  std::vector<std::size_t> features;          // the teacher's non-zero feature indices
  std::vector<std::vector<double>> mcc;       // neuron x features
  std::size_t unique_matched = 0;
  double percentage = 0.0;                    // of the non-zero features
};

std::string feature_name(std::size_t index, const WindowSet& windows, const CodeVocab& vocab);

/// Binary neuron activations (rows = patients, cols = kernels) used by dissect.
std::vector<std::vector<int>> binarized_activations(const SardModel& model, const Cohort& cohort,
                                                    Binarization threshold);

DissectionReport dissect(const SardModel& model, const LinearModel& teacher, const Cohort& cohort,
                         DissectOptions options = {});

void write_dissection_csv(std::ostream& out, const DissectionReport& report);
/// Per neuron, the k features with the highest MCC.
void write_topk_csv(std::ostream& out, const DissectionReport& report, const LinearModel& teacher,
                    const CodeVocab& vocab, std::size_t k);
void write_visit_importance_csv(std::ostream& out, const VisitImportance& vi,
                                const PackedVisits& visits);

}  // namespace sard
