#include "sard/lemma_check.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "sard/evaluation.hpp"

namespace sard {

FourierWindow fourier_interval_coeffs(double lo, double hi, double P, std::size_t n_max) {
  if (!(P > 0.0) || !std::isfinite(P)) throw std::invalid_argument("period must be positive");
  if (!(hi > lo) || hi - lo > P) throw std::invalid_argument("interval must be non-empty and fit in a period");
  if (n_max == 0) throw std::invalid_argument("need at least one harmonic");
  FourierWindow fw;
  fw.lo = lo;
  fw.hi = hi;
  fw.period = P;
  fw.a0 = (hi - lo) / P;
  fw.a.assign(n_max, 0.0);
  fw.b.assign(n_max, 0.0);
  if (hi - lo == P) {
    fw.a0 = 1.0;
    return fw;
  }
  // Projections (2/P) * integral over [lo, hi] of cos / sin (2 pi n t / P).
  for (std::size_t n = 1; n <= n_max; ++n) {
    const double k = 2.0 * std::numbers::pi * static_cast<double>(n) / P;
    const double c = 1.0 / (std::numbers::pi * static_cast<double>(n));
    fw.a[n - 1] = c * (std::sin(k * hi) - std::sin(k * lo));
    fw.b[n - 1] = c * (std::cos(k * lo) - std::cos(k * hi));
  }
  return fw;
}

FourierWindow fourier_window_coeffs(double T, double P, std::size_t n_max) {
  if (!(T > 0.0) || !(T <= P)) throw std::invalid_argument("window length must lie in (0, P]");
  auto fw = fourier_interval_coeffs(0.0, T, P, n_max);
  // Closed form for the [0, T] case: b_n = (2 / (n pi)) sin^2(n pi T / P).
  if (T != P) {
    for (std::size_t n = 1; n <= n_max; ++n) {
      const double s = std::sin(std::numbers::pi * static_cast<double>(n) * T / P);
      fw.b[n - 1] = 2.0 / (std::numbers::pi * static_cast<double>(n)) * s * s;
    }
  }
  return fw;
}

double indicator_approx(double t, const FourierWindow& fw) {
  double v = fw.a0;
  for (std::size_t n = 1; n <= fw.harmonics(); ++n) {
    const double x = 2.0 * std::numbers::pi * static_cast<double>(n) * t / fw.period;
    v += fw.a[n - 1] * std::cos(x) + fw.b[n - 1] * std::sin(x);
  }
  return v;
}

SardModel construct_replicating_sard(const LinearModel& teacher, const CodeVocab& vocab,
                                     double period, std::size_t n_freq,
                                     ConstructionOptions options) {
  const std::size_t V = vocab.size();
  const auto& offsets = teacher.window_set.offsets;
  const std::size_t n_w = offsets.size();
  if (V == 0 || n_w == 0) throw std::invalid_argument("teacher needs a vocabulary and windows");
  if (teacher.weights.size() != n_w * V) throw std::invalid_argument("teacher weights do not match the vocabulary");
  for (int o : offsets) {
    if (o != kUnboundedOffset && o >= options.time_clip_days) {
      throw std::invalid_argument("window offset " + format_offset(o) +
                                  " cannot be resolved after clipping elapsed days");
    }
  }
  if (!(period > options.time_clip_days + 1.0)) {
    throw std::invalid_argument("period must exceed the time clip by more than a day");
  }
  if (n_freq == 0) throw std::invalid_argument("n_freq must be positive");
  const auto features = teacher.nonzero_indices();
  if (features.empty()) throw std::invalid_argument("teacher has no non-zero weights");

  const double s = options.sharpness;
  const double gain = options.gain > 0.0 ? options.gain : s * s / 4.0;

  // Sin half, in blocks of width B: [codes][frequencies][one write block per window].
  // The cos half mirrors it; its code block carries constant ones (zero frequency).
  const std::size_t B = std::max(V, n_freq);
  const std::size_t blocks = 2 + n_w;
  const std::size_t half = blocks * B;
  const std::size_t d = 2 * half;

  SardConfig cfg;
  cfg.embedding_dim = d;
  cfg.max_visits = options.max_visits;
  cfg.layers = 1;
  cfg.heads = 2 * blocks;
  cfg.kernels = features.size();
  cfg.dropout = 0.0;
  cfg.encoder = EncoderVariant::self_attention;
  cfg.head = HeadVariant::conv;
  cfg.time_clip_days = options.time_clip_days;
  cfg.omega.assign(half, 0.0);
  for (std::size_t n = 1; n <= n_freq; ++n) {
    cfg.omega[B + n - 1] = 2.0 * std::numbers::pi * static_cast<double>(n) / period;
  }
  SardModel model(cfg, V);
  auto& P = model.parameters();

  const std::size_t dc = half;  // cos(0 * t) == 1
  for (std::size_t c = 0; c < V; ++c) model.phi().values[c * d + c] = 1.0;

  // Weights reading the approximated indicator of a window from the temporal channels.
  const auto indicator_row = [&](std::size_t window, std::span<double> row, double scale) {
    if (offsets[window] == kUnboundedOffset) {
      row[dc] += scale;
      return;
    }
    const auto fw = fourier_interval_coeffs(-0.5, offsets[window] + 0.5, period, n_freq);
    row[dc] += scale * fw.a0;
    for (std::size_t n = 1; n <= n_freq; ++n) {
      row[B + n - 1] += scale * fw.b[n - 1];          // sin channel
      row[half + B + n - 1] += scale * fw.a[n - 1];   // cos channel
    }
  };

  // Attention: head (2 + w) scores visits by s^2 * indicator_w and averages their multi-hot
  // codes into write block w. Raw scores are divided by sqrt(d), so the key is scaled up.
  for (std::size_t w = 0; w < n_w; ++w) {
    const auto& blk = model.attention(0, 2 + w);
    P[blk.bq].values[0] = s;
    indicator_row(w, std::span(P[blk.wk].values).subspan(0, d), s * std::sqrt(static_cast<double>(d)));
    for (std::size_t c = 0; c < V; ++c) P[blk.wv].values[c * d + c] = 1.0;
  }

  // Head: kernel k fires when its code is present in a visit inside its window:
  // gain * (code + indicator - 1.5) is about +gain/2 then and at most -gain/2 otherwise.
  auto& kern = P[model.kernels_index()].values;
  auto& w_out = P[model.head_weight_index()].values;
  for (std::size_t k = 0; k < features.size(); ++k) {
    const std::size_t window = features[k] / V;
    const std::size_t code = features[k] % V;
    auto row = std::span(kern).subspan(k * d, d);
    row[code] = gain;
    row[dc] -= 1.5 * gain;
    indicator_row(window, row, gain);
    w_out[k] = teacher.weights[features[k]];
  }
  P[model.head_bias_index()].values[0] = teacher.intercept;
  return model;
}

ReplicationError replication_error(std::span<const double> logits_a, std::span<const double> logits_b) {
  if (logits_a.size() != logits_b.size() || logits_a.empty()) {
    throw std::invalid_argument("logit vectors must be non-empty and equally long");
  }
  ReplicationError e;
  for (std::size_t i = 0; i < logits_a.size(); ++i) {
    const double d = std::abs(sigmoid(logits_a[i]) - sigmoid(logits_b[i]));
    e.max_abs = std::max(e.max_abs, d);
    e.mean_abs += d;
  }
  e.mean_abs /= static_cast<double>(logits_a.size());
  e.spearman = spearman(logits_a, logits_b);
  return e;
}

ReplicationError replication_error(const SardModel& sard, const LinearModel& teacher,
                                   const Cohort& cohort) {
  std::vector<double> a, b;
  const auto feats = featurize_cohort(cohort, teacher.window_set);
  for (std::size_t i = 0; i < cohort.records.size(); ++i) {
    const auto& r = cohort.records[i];
    if (r.visits.size() > sard.config().max_visits) {
      throw std::invalid_argument("patient '" + r.patient_id + "' has more visits than max_visits");
    }
    const auto p = pack_patient(r, cohort.vocab, cohort.prediction_day, sard.config().max_visits,
                                sard.config().time_clip_days);
    a.push_back(forward_packed(sard, p).logit);
    b.push_back(teacher.logit(feats[i]));
  }
  return replication_error(a, b);
}

std::vector<SweepRow> replication_sweep(const LinearModel& teacher, const Cohort& cohort,
                                        double period, std::span<const std::size_t> n_freqs,
                                        std::span<const double> sharpnesses,
                                        ConstructionOptions base) {
  std::vector<SweepRow> rows;
  for (double s : sharpnesses) {
    for (std::size_t n : n_freqs) {
      auto opts = base;
      opts.sharpness = s;
      const auto model = construct_replicating_sard(teacher, cohort.vocab, period, n, opts);
      rows.push_back({n, s, replication_error(model, teacher, cohort)});
    }
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "n_freq,sharpness,max_err,mean_err,spearman\n";
  out.precision(12);
  for (const auto& r : rows) {
    out << r.n_freq << ',' << r.sharpness << ',' << r.error.max_abs << ',' << r.error.mean_abs
        << ',' << r.error.spearman << '\n';
  }
}

}  // namespace sard
