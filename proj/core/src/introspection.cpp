#include "sard/introspection.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "sard/evaluation.hpp"

namespace sard {

double VisitImportance::total() const {
  return std::accumulate(scores.begin(), scores.end(), 0.0);
}

VisitImportance visit_importance(const SardModel& model, const PackedVisits& visits) {
  if (model.config().head != HeadVariant::conv) {
    throw std::invalid_argument("visit importance needs the convolutional head");
  }
  const auto out = forward_packed(model, visits);
  const auto& w = model.parameters()[model.head_weight_index()].values;
  VisitImportance vi;
  vi.scores.assign(visits.slots(), 0.0);
  vi.bias = model.parameters()[model.head_bias_index()].values[0];
  vi.logit = out.logit;
  for (std::size_t k = 0; k < out.pooled.size(); ++k) {
    KernelAttribution a{k, out.argmax[k], out.pooled[k], w[k], w[k] * out.activations[k]};
    vi.scores[a.visit] += a.contribution;
    vi.kernels.push_back(a);
  }
  return vi;
}

VisitImportance visit_importance(const SardModel& model, const PatientRecord& patient,
                                 const Cohort& cohort) {
  return visit_importance(model, pack_patient(patient, cohort.vocab, cohort.prediction_day,
                                              model.config().max_visits,
                                              model.config().time_clip_days));
}

AttentionMaps attention_maps(const SardModel& model, const PackedVisits& visits) {
  if (model.config().encoder != EncoderVariant::self_attention) {
    throw std::invalid_argument("attention maps need the self-attention encoder");
  }
  AttentionMaps maps;
  encode(model.input_embeddings(visits), visits.mask, model, {}, &maps);
  return maps;
}

std::string feature_name(std::size_t index, const WindowSet& windows, const CodeVocab& vocab) {
  const std::size_t v = vocab.size();
  if (index >= windows.size() * v) throw std::out_of_range("feature index out of range");
  return vocab.code(index % v) + "@" + format_offset(windows.offsets[index / v]);
}

std::vector<std::vector<int>> binarized_activations(const SardModel& model, const Cohort& cohort,
                                                    Binarization threshold) {
  if (model.config().head != HeadVariant::conv) {
    throw std::invalid_argument("dissection needs the convolutional head");
  }
  const std::size_t k = model.config().kernels;
  std::vector<std::vector<double>> act;
  act.reserve(cohort.records.size());
  for (const auto& r : cohort.records) {
    const auto p = pack_patient(r, cohort.vocab, cohort.prediction_day, model.config().max_visits,
                                model.config().time_clip_days);
    act.push_back(forward_packed(model, p).activations);
  }
  std::vector<double> cut(k, 0.5);
  if (threshold == Binarization::median && !act.empty()) {
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<double> col;
      for (const auto& a : act) col.push_back(a[j]);
      std::sort(col.begin(), col.end());
      const std::size_t m = col.size();
      cut[j] = m % 2 ? col[m / 2] : 0.5 * (col[m / 2 - 1] + col[m / 2]);
    }
  }
  std::vector<std::vector<int>> out(act.size(), std::vector<int>(k));
  for (std::size_t i = 0; i < act.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) out[i][j] = act[i][j] > cut[j] ? 1 : 0;
  }
  return out;
}

DissectionReport dissect(const SardModel& model, const LinearModel& teacher, const Cohort& cohort,
                         DissectOptions options) {
  DissectionReport rep;
  rep.features = teacher.nonzero_indices();
  if (rep.features.empty()) throw std::invalid_argument("teacher has no non-zero weights");
  const auto neurons = binarized_activations(model, cohort, options.threshold);
  const auto feats = featurize_cohort(cohort, teacher.window_set);
  const std::size_t n = cohort.records.size();
  const std::size_t k = model.config().kernels;

  std::vector<std::vector<int>> fcols(rep.features.size(), std::vector<int>(n));
  for (std::size_t f = 0; f < rep.features.size(); ++f) {
    for (std::size_t i = 0; i < n; ++i) fcols[f][i] = feats[i][rep.features[f]] ? 1 : 0;
  }
  std::vector<int> ncol(n);
  std::vector<std::size_t> matched;
  rep.mcc.assign(k, std::vector<double>(rep.features.size()));
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < n; ++i) ncol[i] = neurons[i][j];
    NeuronMatch m;
    m.neuron = j;
    std::size_t best = 0;
    for (std::size_t f = 0; f < rep.features.size(); ++f) {
      rep.mcc[j][f] = mcc(ncol, fcols[f]);
      if (rep.mcc[j][f] > rep.mcc[j][best]) best = f;
    }
    m.mcc = rep.mcc[j][best];
    if (m.mcc > options.min_mcc) {
      m.feature = rep.features[best];
      m.feature_name = feature_name(*m.feature, teacher.window_set, cohort.vocab);
      m.window_offset = teacher.window_set.offsets[*m.feature / cohort.vocab.size()];
      matched.push_back(*m.feature);
    }
    rep.neurons.push_back(std::move(m));
  }
  std::sort(matched.begin(), matched.end());
  rep.unique_matched = static_cast<std::size_t>(std::unique(matched.begin(), matched.end()) - matched.begin());
  rep.percentage = 100.0 * static_cast<double>(rep.unique_matched) / static_cast<double>(rep.features.size());
  return rep;
}

void write_dissection_csv(std::ostream& out, const DissectionReport& report) {
  out << "neuron,feature_index,feature_name,window_offset,mcc\n";
  out.precision(10);
  for (const auto& m : report.neurons) {
    out << m.neuron << ',';
    if (m.feature) {
      out << *m.feature << ',' << m.feature_name << ',' << format_offset(m.window_offset);
    } else {
      out << ",,";
    }
    out << ',' << m.mcc << '\n';
  }
}

void write_topk_csv(std::ostream& out, const DissectionReport& report, const LinearModel& teacher,
                    const CodeVocab& vocab, std::size_t k) {
  out << "neuron,rank,feature_index,feature_name,weight,mcc\n";
  out.precision(10);
  for (std::size_t j = 0; j < report.mcc.size(); ++j) {
    std::vector<std::size_t> idx(report.features.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return report.mcc[j][a] > report.mcc[j][b]; });
    for (std::size_t r = 0; r < std::min(k, idx.size()); ++r) {
      const std::size_t f = report.features[idx[r]];
      out << j << ',' << r + 1 << ',' << f << ',' << feature_name(f, teacher.window_set, vocab) << ','
          << teacher.weights[f] << ',' << report.mcc[j][idx[r]] << '\n';
    }
  }
}

void write_visit_importance_csv(std::ostream& out, const VisitImportance& vi,
                                const PackedVisits& visits) {
  out << "slot,days_before,active,score\n";
  out.precision(17);
  for (std::size_t s = 0; s < vi.scores.size(); ++s) {
    out << s << ',' << visits.elapsed[s] << ',' << int(visits.mask[s]) << ',' << vi.scores[s] << '\n';
  }
}

}  // namespace sard
