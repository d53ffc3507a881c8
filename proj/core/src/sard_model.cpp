#include "sard/sard_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sard/errors.hpp"
#include "sard/rng.hpp"
#include "sard/windowed_linear.hpp"

namespace sard {

using nlohmann::json;

std::string to_string(EncoderVariant v) {
  switch (v) {
    case EncoderVariant::self_attention: return "self_attention";
    case EncoderVariant::gru: return "gru";
    case EncoderVariant::identity: return "identity";
  }
  return "?";
}

std::string to_string(HeadVariant v) { return v == HeadVariant::conv ? "conv" : "summing"; }

EncoderVariant parse_encoder_variant(std::string_view s) {
  if (s == "self_attention" || s == "sa") return EncoderVariant::self_attention;
  if (s == "gru") return EncoderVariant::gru;
  if (s == "identity") return EncoderVariant::identity;
  throw std::invalid_argument("unknown encoder variant '" + std::string(s) + "'");
}

HeadVariant parse_head_variant(std::string_view s) {
  if (s == "conv") return HeadVariant::conv;
  if (s == "summing" || s == "sum") return HeadVariant::summing;
  throw std::invalid_argument("unknown head variant '" + std::string(s) + "'");
}

std::vector<double> geometric_frequencies(std::size_t count, double lo, double hi) {
  std::vector<double> out(count);
  if (count == 1) {
    out[0] = lo;
    return out;
  }
  const double ratio = std::log(hi / lo) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) out[i] = lo * std::exp(ratio * static_cast<double>(i));
  out.back() = hi;
  return out;
}

void SardConfig::validate() const {
  if (embedding_dim == 0 || embedding_dim % 2 != 0) {
    throw std::invalid_argument("embedding_dim must be positive and even");
  }
  if (max_visits == 0) throw std::invalid_argument("max_visits must be positive");
  if (encoder == EncoderVariant::self_attention) {
    if (layers == 0 || heads == 0) throw std::invalid_argument("attention needs layers and heads");
    if (embedding_dim % heads != 0) {
      throw std::invalid_argument("embedding_dim must be divisible by heads");
    }
  }
  if (head == HeadVariant::conv && kernels == 0) throw std::invalid_argument("conv head needs kernels");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (!omega.empty()) {
    if (omega.size() != embedding_dim / 2) throw std::invalid_argument("omega must have d_e/2 entries");
    for (double w : omega) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("omega entries must be >= 0");
    }
  }
  if (time_clip_days <= 0) throw std::invalid_argument("time_clip_days must be positive");
}

std::vector<double> SardConfig::frequencies() const {
  if (!omega.empty()) return omega;
  return geometric_frequencies(embedding_dim / 2);
}

json to_json(const SardConfig& c) {
  return {{"embedding_dim", c.embedding_dim},
          {"max_visits", c.max_visits},
          {"layers", c.layers},
          {"heads", c.heads},
          {"kernels", c.kernels},
          {"dropout", c.dropout},
          {"encoder", to_string(c.encoder)},
          {"head", to_string(c.head)},
          {"omega", c.omega},
          {"time_clip_days", c.time_clip_days}};
}

SardConfig sard_config_from_json(const json& j) {
  SardConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "embedding_dim") c.embedding_dim = value.get<std::size_t>();
      else if (key == "max_visits") c.max_visits = value.get<std::size_t>();
      else if (key == "layers") c.layers = value.get<std::size_t>();
      else if (key == "heads") c.heads = value.get<std::size_t>();
      else if (key == "kernels") c.kernels = value.get<std::size_t>();
      else if (key == "dropout") c.dropout = value.get<double>();
      else if (key == "encoder") c.encoder = parse_encoder_variant(value.get<std::string>());
      else if (key == "head") c.head = parse_head_variant(value.get<std::string>());
      else if (key == "omega") c.omega = value.get<std::vector<double>>();
      else if (key == "time_clip_days") c.time_clip_days = value.get<int>();
      else throw DataError("unknown model config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::size_t PackedVisits::active() const noexcept {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

PackedVisits pack_patient(const PatientRecord& patient, const CodeVocab& vocab, int prediction_day,
                          std::size_t max_visits, int time_clip_days) {
  if (patient.visits.empty()) {
    throw DataError("patient '" + patient.patient_id + "' has no visits");
  }
  PackedVisits p;
  p.codes.assign(max_visits, {});
  p.elapsed.assign(max_visits, 0);
  p.mask.assign(max_visits, 0);
  std::size_t slot = 0;
  for (auto it = patient.visits.rbegin(); it != patient.visits.rend() && slot < max_visits; ++it) {
    const int elapsed = prediction_day - it->day;
    if (elapsed < 0) {
      throw DataError("patient '" + patient.patient_id + "' has a visit after the prediction day");
    }
    for (const auto& c : it->codes) p.codes[slot].push_back(vocab.index(c));
    p.elapsed[slot] = std::min(elapsed, time_clip_days);
    p.mask[slot] = 1;
    ++slot;
  }
  return p;
}

std::vector<double> embed_visit(std::span<const std::size_t> codes, std::span<const double> phi,
                                std::size_t embedding_dim) {
  std::vector<double> out(embedding_dim, 0.0);
  const std::size_t vocab = phi.size() / embedding_dim;
  // Summed in index order so the result is bit-identical under any code permutation.
  std::vector<std::size_t> sorted(codes.begin(), codes.end());
  std::sort(sorted.begin(), sorted.end());
  for (auto c : sorted) {
    if (c >= vocab) throw std::out_of_range("code index outside the embedding table");
    axpy(1.0, phi.subspan(c * embedding_dim, embedding_dim), out);
  }
  return out;
}

std::vector<double> embed_visit(const Visit& visit, const CodeVocab& vocab,
                                std::span<const double> phi, std::size_t embedding_dim) {
  std::vector<std::size_t> idx;
  for (const auto& c : visit.codes) idx.push_back(vocab.index(c));
  return embed_visit(idx, phi, embedding_dim);
}

std::vector<double> temporal_embed(int visit_day, int prediction_day, std::span<const double> omega,
                                   int clip_days) {
  if (visit_day > prediction_day) throw std::invalid_argument("visit after the prediction day");
  const double t = static_cast<double>(std::min(prediction_day - visit_day, clip_days));
  const std::size_t half = omega.size();
  std::vector<double> out(2 * half);
  for (std::size_t i = 0; i < half; ++i) {
    out[i] = std::sin(t * omega[i]);
    out[half + i] = std::cos(t * omega[i]);
  }
  return out;
}

SardModel::SardModel(SardConfig config, std::size_t vocab_size)
    : config_(std::move(config)), vocab_size_(vocab_size) {
  config_.validate();
  if (vocab_size_ == 0) throw std::invalid_argument("vocabulary must be non-empty");
  omega_ = config_.frequencies();
  build_layout();
}

void SardModel::build_layout() {
  const std::size_t d = config_.embedding_dim;
  phi_ = params_.add("phi", {vocab_size_, d});
  attention_.clear();
  if (config_.encoder == EncoderVariant::self_attention) {
    const std::size_t dh = config_.head_width();
    for (std::size_t l = 0; l < config_.layers; ++l) {
      for (std::size_t h = 0; h < config_.heads; ++h) {
        const std::string p = "attn." + std::to_string(l) + "." + std::to_string(h) + ".";
        AttentionBlock b{};
        b.wq = params_.add(p + "wq", {dh, d});
        b.bq = params_.add(p + "bq", {dh});
        b.wk = params_.add(p + "wk", {dh, d});
        b.bk = params_.add(p + "bk", {dh});
        b.wv = params_.add(p + "wv", {dh, d});
        b.bv = params_.add(p + "bv", {dh});
        attention_.push_back(b);
      }
    }
  } else if (config_.encoder == EncoderVariant::gru) {
    gru_.wz = params_.add("gru.wz", {d, d});
    gru_.uz = params_.add("gru.uz", {d, d});
    gru_.bz = params_.add("gru.bz", {d});
    gru_.wr = params_.add("gru.wr", {d, d});
    gru_.ur = params_.add("gru.ur", {d, d});
    gru_.br = params_.add("gru.br", {d});
    gru_.wc = params_.add("gru.wc", {d, d});
    gru_.uc = params_.add("gru.uc", {d, d});
    gru_.bc = params_.add("gru.bc", {d});
  }
  if (config_.head == HeadVariant::conv) {
    kernels_ = params_.add("head.kernels", {config_.kernels, d});
    head_w_ = params_.add("head.w", {config_.kernels});
  } else {
    head_w_ = params_.add("head.w", {d});
  }
  head_b_ = params_.add("head.b", {1});
}

SardModel SardModel::random(SardConfig config, std::size_t vocab_size, std::uint64_t seed) {
  SardModel m(std::move(config), vocab_size);
  const double d = static_cast<double>(m.config_.embedding_dim);
  for (std::size_t i = 0; i < m.params_.count(); ++i) {
    auto& t = m.params_[i];
    auto rng = make_rng(seed, 0x1000 + i);
    double scale = 0.0;
    if (t.shape.size() == 2) {
      // Matrices mapping d_e-dimensional inputs (and the embedding table) use 1/sqrt(d_e).
      scale = 1.0 / std::sqrt(d);
    } else if (i == m.head_w_) {
      scale = 1.0 / std::sqrt(static_cast<double>(t.size()));
    }
    for (auto& v : t.values) v = scale * standard_normal(rng);
  }
  return m;
}

Matrix SardModel::input_embeddings(const PackedVisits& visits) const {
  const std::size_t d = config_.embedding_dim;
  Matrix x(visits.slots(), d);
  const auto& phi_values = phi().values;
  for (std::size_t s = 0; s < visits.slots(); ++s) {
    if (!visits.mask[s]) continue;
    auto row = x.row(s);
    std::vector<std::size_t> sorted = visits.codes[s];
    std::sort(sorted.begin(), sorted.end());
    for (auto c : sorted) {
      if (c >= vocab_size_) throw std::out_of_range("code index outside the embedding table");
      axpy(1.0, std::span<const double>(phi_values).subspan(c * d, d), row);
    }
    const double t = static_cast<double>(std::min(visits.elapsed[s], config_.time_clip_days));
    const std::size_t half = d / 2;
    for (std::size_t i = 0; i < half; ++i) {
      row[i] += std::sin(t * omega_[i]);
      row[half + i] += std::cos(t * omega_[i]);
    }
  }
  return x;
}

json SardModel::to_json() const {
  return {{"format", "sard-checkpoint-v1"},
          {"config", sard::to_json(config_)},
          {"vocab_size", vocab_size_},
          {"parameters", parameters_to_json(params_)}};
}

SardModel SardModel::from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "sard-checkpoint-v1") {
      throw DataError("unsupported checkpoint format");
    }
    SardModel m(sard_config_from_json(j.at("config")), j.at("vocab_size").get<std::size_t>());
    auto loaded = parameters_from_json(j.at("parameters"));
    if (!loaded.same_layout(m.params_)) throw DataError("checkpoint tensors do not match the config");
    m.params_ = std::move(loaded);
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void SardModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << to_json().dump() << '\n';
}

SardModel SardModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Forward pass with cached intermediates, and its reverse-mode counterpart.
// Internally only active slots are materialized ("compact" rows, slot order).

namespace {

// Y = X W^T + b, with W stored row-major as (out x in).
void affine(const Matrix& x, std::span<const double> w, std::span<const double> b, Matrix& y) {
  const std::size_t n = x.rows();
  const std::size_t in = x.cols();
  const std::size_t out = b.size();
  y.resize(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = x.row(i);
    auto yi = y.row(i);
    for (std::size_t o = 0; o < out; ++o) yi[o] = b[o] + dot(w.subspan(o * in, in), xi);
  }
}

// Accumulates gradients of Y = X W^T + b.
void affine_backward(const Matrix& x, std::span<const double> w, const Matrix& dy,
                     std::span<double> dw, std::span<double> db, Matrix* dx) {
  const std::size_t n = x.rows();
  const std::size_t in = x.cols();
  const std::size_t out = dy.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = x.row(i);
    const auto dyi = dy.row(i);
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dyi[o];
      if (g == 0.0) continue;
      db[o] += g;
      axpy(g, xi, dw.subspan(o * in, in));
      if (dx) axpy(g, w.subspan(o * in, in), dx->row(i));
    }
  }
}

double logistic(double z) { return sigmoid(z); }

std::vector<double> dropout_keep(std::size_t count, double p, std::uint64_t seed,
                                 std::uint64_t stream) {
  std::vector<double> keep(count);
  auto rng = make_rng(seed, stream);
  const double scale = 1.0 / (1.0 - p);
  for (auto& k : keep) k = uniform01(rng) < p ? 0.0 : scale;
  return keep;
}

struct AttentionTrace {
  Matrix input;
  std::vector<Matrix> q, k, v, weights;
  Matrix concat;
  std::vector<double> keep;
};

struct GruTrace {
  Matrix input;  // chronological order
  Matrix h;      // (n + 1) x d, row 0 is the zero initial state
  Matrix z, r, c;
  std::vector<double> keep;
};

struct Trace {
  std::vector<std::size_t> active;
  Matrix x0;
  std::vector<AttentionTrace> layers;
  GruTrace gru;
  Matrix out;
  HeadOutput head;  // argmax holds compact rows
};

bool use_dropout(const SardModel& m, const ForwardOptions& o) {
  return o.train_mode && m.config().dropout > 0.0;
}

void attention_forward(const SardModel& model, const ForwardOptions& options, Trace& tr) {
  const auto& cfg = model.config();
  const auto& P = model.parameters();
  const std::size_t n = tr.x0.rows();
  const std::size_t d = cfg.embedding_dim;
  const std::size_t dh = cfg.head_width();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));

  Matrix x = tr.x0;
  tr.layers.resize(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    auto& L = tr.layers[l];
    L.input = x;
    L.q.resize(cfg.heads);
    L.k.resize(cfg.heads);
    L.v.resize(cfg.heads);
    L.weights.resize(cfg.heads);
    L.concat.resize(n, d);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const auto& b = model.attention(l, h);
      affine(x, P[b.wq].values, P[b.bq].values, L.q[h]);
      affine(x, P[b.wk].values, P[b.bk].values, L.k[h]);
      affine(x, P[b.wv].values, P[b.bv].values, L.v[h]);
      auto& A = L.weights[h];
      A.resize(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        auto ai = A.row(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          ai[j] = dot(L.q[h].row(i), L.k[h].row(j)) * inv_scale;
          mx = std::max(mx, ai[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) total += (ai[j] = std::exp(ai[j] - mx));
        for (std::size_t j = 0; j < n; ++j) ai[j] /= total;
        auto out = L.concat.row(i).subspan(h * dh, dh);
        for (std::size_t j = 0; j < n; ++j) axpy(ai[j], L.v[h].row(j), out);
      }
    }
    if (use_dropout(model, options)) {
      L.keep = dropout_keep(n * d, cfg.dropout, options.seed, 0xa0 + l);
    } else {
      L.keep.clear();
    }
    for (std::size_t k = 0; k < n * d; ++k) {
      const double c = L.concat.data()[k];
      x.data()[k] += L.keep.empty() ? c : c * L.keep[k];
    }
  }
  tr.out = std::move(x);
}

void gru_forward(const SardModel& model, const ForwardOptions& options, Trace& tr) {
  const auto& P = model.parameters();
  const auto& g = model.gru();
  const std::size_t n = tr.x0.rows();
  const std::size_t d = model.config().embedding_dim;
  auto& G = tr.gru;
  G.input.resize(n, d);
  for (std::size_t t = 0; t < n; ++t) {
    std::copy_n(tr.x0.row(n - 1 - t).begin(), d, G.input.row(t).begin());
  }
  G.h.resize(n + 1, d);
  G.z.resize(n, d);
  G.r.resize(n, d);
  G.c.resize(n, d);
  std::vector<double> rh(d);
  for (std::size_t t = 0; t < n; ++t) {
    const auto x = G.input.row(t);
    const auto hp = G.h.row(t);
    for (std::size_t o = 0; o < d; ++o) {
      G.z(t, o) = logistic(P[g.bz].values[o] + dot(std::span(P[g.wz].values).subspan(o * d, d), x) +
                           dot(std::span(P[g.uz].values).subspan(o * d, d), hp));
      G.r(t, o) = logistic(P[g.br].values[o] + dot(std::span(P[g.wr].values).subspan(o * d, d), x) +
                           dot(std::span(P[g.ur].values).subspan(o * d, d), hp));
    }
    for (std::size_t o = 0; o < d; ++o) rh[o] = G.r(t, o) * hp[o];
    for (std::size_t o = 0; o < d; ++o) {
      G.c(t, o) = std::tanh(P[g.bc].values[o] + dot(std::span(P[g.wc].values).subspan(o * d, d), x) +
                            dot(std::span(P[g.uc].values).subspan(o * d, d), rh));
      G.h(t + 1, o) = (1.0 - G.z(t, o)) * hp[o] + G.z(t, o) * G.c(t, o);
    }
  }
  G.keep = use_dropout(model, options)
               ? dropout_keep(n * d, model.config().dropout, options.seed, 0xb0)
               : std::vector<double>{};
  tr.out.resize(n, d);
  for (std::size_t t = 0; t < n; ++t) {
    auto dst = tr.out.row(n - 1 - t);
    for (std::size_t o = 0; o < d; ++o) {
      const double v = G.h(t + 1, o);
      dst[o] = G.keep.empty() ? v : v * G.keep[(n - 1 - t) * d + o];
    }
  }
}

HeadOutput head_compact(const Matrix& out, const SardModel& model) {
  const auto& cfg = model.config();
  const auto& P = model.parameters();
  const std::size_t n = out.rows();
  const std::size_t d = cfg.embedding_dim;
  if (n == 0) throw std::invalid_argument("prediction head needs at least one non-pad visit");
  HeadOutput h;
  const double bias = P[model.head_bias_index()].values[0];
  const auto& w = P[model.head_weight_index()].values;
  if (cfg.head == HeadVariant::conv) {
    const auto& kern = P[model.kernels_index()].values;
    h.pooled.assign(cfg.kernels, 0.0);
    h.activations.assign(cfg.kernels, 0.0);
    h.argmax.assign(cfg.kernels, 0);
    double z = bias;
    for (std::size_t k = 0; k < cfg.kernels; ++k) {
      const auto kv = std::span(kern).subspan(k * d, d);
      double best = dot(kv, out.row(0));
      std::size_t arg = 0;
      for (std::size_t j = 1; j < n; ++j) {
        const double v = dot(kv, out.row(j));
        if (v > best) {
          best = v;
          arg = j;
        }
      }
      h.pooled[k] = best;
      h.argmax[k] = arg;
      h.activations[k] = logistic(best);
      z += w[k] * h.activations[k];
    }
    h.logit = z;
  } else {
    std::vector<double> total(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) axpy(1.0, out.row(j), total);
    h.logit = bias + dot(w, total);
  }
  h.probability = logistic(h.logit);
  return h;
}

void run_encoder(const SardModel& model, const ForwardOptions& options, Trace& tr) {
  switch (model.config().encoder) {
    case EncoderVariant::self_attention: attention_forward(model, options, tr); break;
    case EncoderVariant::gru: gru_forward(model, options, tr); break;
    case EncoderVariant::identity: tr.out = tr.x0; break;
  }
}

Trace compact_trace(const Matrix& inputs, std::span<const std::uint8_t> mask, std::size_t d) {
  if (inputs.cols() != d || inputs.rows() != mask.size()) {
    throw std::invalid_argument("input shape does not match the model config");
  }
  Trace tr;
  for (std::size_t s = 0; s < mask.size(); ++s) {
    if (mask[s]) tr.active.push_back(s);
  }
  tr.x0.resize(tr.active.size(), d);
  for (std::size_t r = 0; r < tr.active.size(); ++r) {
    std::copy_n(inputs.row(tr.active[r]).begin(), d, tr.x0.row(r).begin());
  }
  return tr;
}

Trace forward_trace(const SardModel& model, const PackedVisits& visits, const ForwardOptions& options) {
  if (visits.slots() != model.config().max_visits) {
    throw std::invalid_argument("packed visits do not match max_visits");
  }
  auto tr = compact_trace(model.input_embeddings(visits), visits.mask, model.config().embedding_dim);
  if (tr.active.empty()) throw std::invalid_argument("patient has no non-pad visits");
  run_encoder(model, options, tr);
  tr.head = head_compact(tr.out, model);
  return tr;
}

void attention_backward(const SardModel& model, const Trace& tr, Matrix& dx, ParameterSet& grad) {
  const auto& cfg = model.config();
  const auto& P = model.parameters();
  const std::size_t n = tr.x0.rows();
  const std::size_t d = cfg.embedding_dim;
  const std::size_t dh = cfg.head_width();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));

  Matrix dconcat(n, d);
  Matrix dq, dk, dv, dA(n, n);
  for (std::size_t l = cfg.layers; l-- > 0;) {
    const auto& L = tr.layers[l];
    // x_out = x_in + keep * concat
    for (std::size_t k = 0; k < n * d; ++k) {
      dconcat.data()[k] = L.keep.empty() ? dx.data()[k] : dx.data()[k] * L.keep[k];
    }
    Matrix dinput = dx;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const auto& b = model.attention(l, h);
      const auto& A = L.weights[h];
      dq.resize(n, dh);
      dk.resize(n, dh);
      dv.resize(n, dh);
      for (std::size_t i = 0; i < n; ++i) {
        const auto dout = dconcat.row(i).subspan(h * dh, dh);
        double row_dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          dA(i, j) = dot(dout, L.v[h].row(j));
          axpy(A(i, j), dout, dv.row(j));
          row_dot += dA(i, j) * A(i, j);
        }
        for (std::size_t j = 0; j < n; ++j) {
          const double ds = A(i, j) * (dA(i, j) - row_dot) * inv_scale;
          if (ds == 0.0) continue;
          axpy(ds, L.k[h].row(j), dq.row(i));
          axpy(ds, L.q[h].row(i), dk.row(j));
        }
      }
      affine_backward(L.input, P[b.wq].values, dq, grad[b.wq].values, grad[b.bq].values, &dinput);
      affine_backward(L.input, P[b.wk].values, dk, grad[b.wk].values, grad[b.bk].values, &dinput);
      affine_backward(L.input, P[b.wv].values, dv, grad[b.wv].values, grad[b.bv].values, &dinput);
    }
    dx = std::move(dinput);
  }
}

void gru_backward(const SardModel& model, const Trace& tr, Matrix& dx, ParameterSet& grad) {
  const auto& P = model.parameters();
  const auto& g = model.gru();
  const auto& G = tr.gru;
  const std::size_t n = tr.x0.rows();
  const std::size_t d = model.config().embedding_dim;

  // Gradient w.r.t. each hidden state output, chronological order.
  Matrix dh_out(n, d);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t row = n - 1 - t;
    for (std::size_t o = 0; o < d; ++o) {
      const double v = dx(row, o);
      dh_out(t, o) = G.keep.empty() ? v : v * G.keep[row * d + o];
    }
  }
  Matrix dinput(n, d);
  std::vector<double> dh(d, 0.0), dh_prev(d), dz(d), dr(d), dc(d), drh(d), rh(d);
  const auto mat = [&](std::size_t idx) { return std::span<const double>(P[idx].values); };
  const auto gmat = [&](std::size_t idx) { return std::span<double>(grad[idx].values); };

  for (std::size_t t = n; t-- > 0;) {
    for (std::size_t o = 0; o < d; ++o) dh[o] += dh_out(t, o);
    const auto x = G.input.row(t);
    const auto hp = G.h.row(t);
    for (std::size_t o = 0; o < d; ++o) rh[o] = G.r(t, o) * hp[o];
    std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
    std::fill(drh.begin(), drh.end(), 0.0);
    auto dxt = dinput.row(t);
    for (std::size_t o = 0; o < d; ++o) {
      const double z = G.z(t, o);
      const double c = G.c(t, o);
      dz[o] = dh[o] * (c - hp[o]) * z * (1.0 - z);
      dc[o] = dh[o] * z * (1.0 - c * c);
      dh_prev[o] += dh[o] * (1.0 - z);
    }
    for (std::size_t o = 0; o < d; ++o) {
      gmat(g.bc)[o] += dc[o];
      axpy(dc[o], x, gmat(g.wc).subspan(o * d, d));
      axpy(dc[o], rh, gmat(g.uc).subspan(o * d, d));
      axpy(dc[o], mat(g.wc).subspan(o * d, d), dxt);
      axpy(dc[o], mat(g.uc).subspan(o * d, d), drh);
    }
    for (std::size_t o = 0; o < d; ++o) {
      const double r = G.r(t, o);
      dr[o] = drh[o] * hp[o] * r * (1.0 - r);
      dh_prev[o] += drh[o] * r;
    }
    for (std::size_t o = 0; o < d; ++o) {
      gmat(g.bz)[o] += dz[o];
      axpy(dz[o], x, gmat(g.wz).subspan(o * d, d));
      axpy(dz[o], hp, gmat(g.uz).subspan(o * d, d));
      axpy(dz[o], mat(g.wz).subspan(o * d, d), dxt);
      axpy(dz[o], mat(g.uz).subspan(o * d, d), dh_prev);

      gmat(g.br)[o] += dr[o];
      axpy(dr[o], x, gmat(g.wr).subspan(o * d, d));
      axpy(dr[o], hp, gmat(g.ur).subspan(o * d, d));
      axpy(dr[o], mat(g.wr).subspan(o * d, d), dxt);
      axpy(dr[o], mat(g.ur).subspan(o * d, d), dh_prev);
    }
    dh.swap(dh_prev);
  }
  // Back to slot order.
  dx.resize(n, d);
  for (std::size_t t = 0; t < n; ++t) {
    std::copy_n(dinput.row(t).begin(), d, dx.row(n - 1 - t).begin());
  }
}

// Accumulates d(loss)/d(params) given d(loss)/d(logit).
void backward(const SardModel& model, const PackedVisits& visits, const Trace& tr, double dlogit,
              ParameterSet& grad) {
  const auto& cfg = model.config();
  const auto& P = model.parameters();
  const std::size_t n = tr.out.rows();
  const std::size_t d = cfg.embedding_dim;

  grad[model.head_bias_index()].values[0] += dlogit;
  Matrix dx(n, d);
  auto& gw = grad[model.head_weight_index()].values;
  const auto& w = P[model.head_weight_index()].values;
  if (cfg.head == HeadVariant::conv) {
    const auto& kern = P[model.kernels_index()].values;
    auto& gk = grad[model.kernels_index()].values;
    for (std::size_t k = 0; k < cfg.kernels; ++k) {
      const double a = tr.head.activations[k];
      gw[k] += dlogit * a;
      const double dchi = dlogit * w[k] * a * (1.0 - a);
      if (dchi == 0.0) continue;
      const std::size_t j = tr.head.argmax[k];
      axpy(dchi, tr.out.row(j), std::span(gk).subspan(k * d, d));
      axpy(dchi, std::span(kern).subspan(k * d, d), dx.row(j));
    }
  } else {
    std::vector<double> total(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) axpy(1.0, tr.out.row(j), total);
    axpy(dlogit, total, gw);
    for (std::size_t j = 0; j < n; ++j) axpy(dlogit, w, dx.row(j));
  }

  switch (cfg.encoder) {
    case EncoderVariant::self_attention: attention_backward(model, tr, dx, grad); break;
    case EncoderVariant::gru: gru_backward(model, tr, dx, grad); break;
    case EncoderVariant::identity: break;
  }

  auto& gphi = grad[0].values;
  for (std::size_t r = 0; r < n; ++r) {
    for (auto c : visits.codes[tr.active[r]]) {
      axpy(1.0, dx.row(r), std::span(gphi).subspan(c * d, d));
    }
  }
}

Matrix expand(const Matrix& compact, const std::vector<std::size_t>& active, std::size_t slots) {
  Matrix out(slots, compact.cols());
  for (std::size_t r = 0; r < active.size(); ++r) {
    std::copy_n(compact.row(r).begin(), compact.cols(), out.row(active[r]).begin());
  }
  return out;
}

ForwardOptions example_options(const ForwardOptions& o, std::size_t position) {
  return {o.train_mode, substream_seed(o.seed, position)};
}

}  // namespace

Matrix encode(const Matrix& inputs, std::span<const std::uint8_t> mask, const SardModel& model,
              ForwardOptions options, AttentionMaps* attention) {
  auto tr = compact_trace(inputs, mask, model.config().embedding_dim);
  if (attention) attention->clear();
  if (tr.active.empty()) return Matrix(mask.size(), model.config().embedding_dim);
  run_encoder(model, options, tr);
  if (attention && model.config().encoder == EncoderVariant::self_attention) {
    for (const auto& L : tr.layers) {
      for (const auto& A : L.weights) {
        Matrix full(mask.size(), mask.size());
        for (std::size_t i = 0; i < tr.active.size(); ++i) {
          for (std::size_t j = 0; j < tr.active.size(); ++j) {
            full(tr.active[i], tr.active[j]) = A(i, j);
          }
        }
        attention->push_back(std::move(full));
      }
    }
  }
  return expand(tr.out, tr.active, mask.size());
}

HeadOutput head_forward_detailed(const Matrix& contextualized, std::span<const std::uint8_t> mask,
                                 const SardModel& model) {
  auto tr = compact_trace(contextualized, mask, model.config().embedding_dim);
  auto h = head_compact(tr.x0, model);
  for (auto& a : h.argmax) a = tr.active[a];
  return h;
}

double head_forward(const Matrix& contextualized, std::span<const std::uint8_t> mask,
                    const SardModel& model) {
  return head_forward_detailed(contextualized, mask, model).probability;
}

HeadOutput forward_packed(const SardModel& model, const PackedVisits& visits,
                          ForwardOptions options) {
  auto tr = forward_trace(model, visits, options);
  auto h = std::move(tr.head);
  for (auto& a : h.argmax) a = tr.active[a];
  return h;
}

double model_forward(const SardModel& model, const PatientRecord& patient, const Cohort& cohort,
                     ForwardOptions options) {
  const auto packed = pack_patient(patient, cohort.vocab, cohort.prediction_day,
                                   model.config().max_visits, model.config().time_clip_days);
  return forward_packed(model, packed, options).probability;
}

GradientResult model_gradient(const SardModel& model, std::span<const Example> batch,
                              const LossSpec& loss, ForwardOptions options) {
  loss.validate();
  if (batch.empty()) throw std::invalid_argument("model_gradient: empty batch");
  GradientResult result;
  result.gradient = model.parameters().zeros_like();
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    const auto tr = forward_trace(model, *ex.visits, example_options(options, i));
    const double p = tr.head.probability;
    const auto lv = evaluate_loss(loss, ex.label, ex.teacher, p);
    if (!std::isfinite(lv.loss)) throw DivergenceError("non-finite loss");
    result.loss += lv.loss * inv;
    const double dlogit = lv.d_student * p * (1.0 - p) * inv;
    if (dlogit != 0.0) backward(model, *ex.visits, tr, dlogit, result.gradient);
  }
  if (!result.gradient.all_finite()) throw DivergenceError("non-finite gradient");
  return result;
}

double model_loss(const SardModel& model, std::span<const Example> batch, const LossSpec& loss,
                  ForwardOptions options) {
  if (batch.empty()) throw std::invalid_argument("model_loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    const double p = forward_packed(model, *ex.visits, example_options(options, i)).probability;
    total += evaluate_loss(loss, ex.label, ex.teacher, p).loss;
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace sard
