#include "sard/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sard/errors.hpp"
#include "sard/rng.hpp"

namespace sard {

using nlohmann::json;

namespace {

enum Stream : std::uint64_t {
  kDirectionStream = 1,
  kSampleStream = 2,
  kPatientStream = 3,
  kLabelStream = 4,
};

std::uint64_t sample_stream(Stream kind, std::size_t index) {
  return (static_cast<std::uint64_t>(kind) << 56) ^ static_cast<std::uint64_t>(index);
}

}  // namespace

std::size_t ClusterParams::informative() const {
  return static_cast<std::size_t>(std::llround(beta * static_cast<double>(features)));
}

void ClusterParams::validate() const {
  if (features == 0) throw std::invalid_argument("cluster: K must be positive");
  if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("cluster: beta must lie in (0, 1]");
  const double bk = beta * static_cast<double>(features);
  if (std::abs(bk - std::round(bk)) > 1e-9 || std::round(bk) < 1.0) {
    throw std::invalid_argument("cluster: beta*K must be an integer >= 1");
  }
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("cluster: gamma must be >= 0");
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("cluster: rho must lie in (0, 1)");
  if (samples == 0) throw std::invalid_argument("cluster: N must be positive");
}

ClusterDataset gen_cluster_dataset(const ClusterParams& params, std::uint64_t seed) {
  params.validate();
  const std::size_t k_inf = params.informative();

  ClusterDataset out;
  out.params = params;
  out.seed = seed;
  out.direction.resize(k_inf);
  {
    auto rng = make_rng(seed, sample_stream(kDirectionStream, 0));
    double norm = 0.0;
    while (norm == 0.0) {
      for (auto& v : out.direction) v = standard_normal(rng);
      norm = std::sqrt(dot(out.direction, out.direction));
    }
    for (auto& v : out.direction) v /= norm;
  }
  for (std::size_t i = 0; i < k_inf; ++i) out.informative_features.push_back(i);

  out.x = Matrix(params.samples, params.features);
  out.y.resize(params.samples);
  const double half = params.gamma / 2.0;
  for (std::size_t n = 0; n < params.samples; ++n) {
    auto rng = make_rng(seed, sample_stream(kSampleStream, n));
    const int label = bernoulli(rng, params.rho) ? 1 : 0;
    out.y[n] = label;
    const double sign = label == 1 ? 1.0 : -1.0;
    auto row = out.x.row(n);
    for (std::size_t j = 0; j < params.features; ++j) {
      const double mean = j < k_inf ? sign * half * out.direction[j] : 0.0;
      row[j] = mean + standard_normal(rng);
    }
  }
  return out;
}

void write_cluster_csv(const std::filesystem::path& path, const ClusterDataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t j = 0; j < data.x.cols(); ++j) out << 'x' << j << ',';
  out << "label\n";
  char buf[32];
  for (std::size_t i = 0; i < data.x.rows(); ++i) {
    for (std::size_t j = 0; j < data.x.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", data.x(i, j));
      out << buf << ',';
    }
    out << data.y[i] << '\n';
  }
}

ClusterDataset read_cluster_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty cluster csv");
  const auto cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        if (c < cols) values.push_back(std::stod(cell));
        else labels.push_back(std::stoi(cell));
      } catch (const std::exception&) {
        throw DataError("line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
      ++c;
    }
    if (c != cols + 1) throw DataError("line " + std::to_string(line_no) + ": wrong column count");
  }
  ClusterDataset d;
  d.x = Matrix(labels.size(), cols);
  d.x.data() = std::move(values);
  d.y = std::move(labels);
  d.params.features = cols;
  d.params.samples = d.y.size();
  return d;
}

void ClaimsGenParams::validate() const {
  if (n_patients == 0) throw std::invalid_argument("claims: n_patients must be positive");
  if (vocab_size == 0) throw std::invalid_argument("claims: vocab_size must be positive");
  if (!(mean_visits >= 1.0)) throw std::invalid_argument("claims: mean_visits must be >= 1");
  if (!(mean_codes_per_visit >= 1.0)) {
    throw std::invalid_argument("claims: mean_codes_per_visit must be >= 1");
  }
  if (history_span_days <= 0) throw std::invalid_argument("claims: history span must be positive");
  if (!(drift_strength >= 0.0 && drift_strength <= 1.0)) {
    throw std::invalid_argument("claims: drift_strength must lie in [0, 1]");
  }
  if (n_subgroups > vocab_size) throw std::invalid_argument("claims: more subgroups than codes");
  for (const auto& w : planted_weights) {
    if (w.window >= planted_windows.size()) {
      throw std::invalid_argument("claims: planted weight references an unknown window");
    }
    bool found = false;
    for (std::size_t i = 0; i < vocab_size && !found; ++i) found = code_name(i) == w.code;
    if (!found) throw std::invalid_argument("claims: planted weight references unknown code " + w.code);
    if (!std::isfinite(w.weight)) throw std::invalid_argument("claims: non-finite planted weight");
  }
}

std::string ClaimsGenParams::code_name(std::size_t index) const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "C%03zu", index);
  return buf;
}

ClaimsGenParams default_claims_params() {
  ClaimsGenParams p;
  p.planted_windows = WindowSet({30, 180, kUnboundedOffset});
  p.planted_weights = {
      {0, "C004", 2.0},  {0, "C011", 1.5}, {1, "C002", 1.0},
      {1, "C017", 1.2},  {2, "C006", 0.8}, {2, "C023", -1.0},
  };
  p.intercept = -3.0;
  return p;
}

namespace {

std::vector<double> cumulative(const std::vector<double>& weights) {
  std::vector<double> c(weights.size());
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) c[i] = (s += weights[i]);
  for (auto& v : c) v /= s;
  return c;
}

std::size_t draw_categorical(Rng& rng, const std::vector<double>& cdf) {
  const double u = uniform01(rng);
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) --it;
  return static_cast<std::size_t>(it - cdf.begin());
}

}  // namespace

double planted_logit(const ClaimsGenParams& params, const PatientRecord& patient,
                     const CodeVocab& vocab, int prediction_day) {
  const auto f = featurize(patient, params.planted_windows, vocab, prediction_day);
  double z = params.intercept;
  for (const auto& w : params.planted_weights) {
    if (f[w.window * vocab.size() + vocab.index(w.code)]) z += w.weight;
  }
  return z;
}

double planted_label_uniform(std::uint64_t seed, std::size_t index) {
  auto rng = make_rng(seed, sample_stream(kLabelStream, index));
  return uniform01(rng);
}

LinearModel planted_linear_model(const ClaimsGenParams& params) {
  LinearModel m;
  m.window_set = params.planted_windows;
  m.intercept = params.intercept;
  m.weights.assign(params.planted_windows.size() * params.vocab_size, 0.0);
  for (const auto& w : params.planted_weights) {
    std::size_t c = 0;
    while (params.code_name(c) != w.code) ++c;
    m.weights[w.window * params.vocab_size + c] += w.weight;
  }
  return m;
}

Cohort gen_claims_cohort(const ClaimsGenParams& params, std::uint64_t seed) {
  params.validate();
  Cohort cohort;
  cohort.prediction_day = params.history_span_days;
  std::vector<std::string> codes;
  for (std::size_t i = 0; i < params.vocab_size; ++i) codes.push_back(params.code_name(i));
  cohort.vocab = CodeVocab(codes);

  std::vector<double> base(params.vocab_size);
  for (std::size_t i = 0; i < base.size(); ++i) {
    base[i] = 1.0 / std::pow(static_cast<double>(i + 1), params.zipf_exponent);
  }
  std::vector<double> shifted(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    shifted[i] = (1.0 - params.drift_strength) * base[i] +
                 params.drift_strength * base[base.size() - 1 - i];
  }
  const auto base_cdf = cumulative(base);
  const auto shifted_cdf = cumulative(shifted);
  const std::size_t group_size = (params.vocab_size + params.n_subgroups - 1) /
                                 std::max<std::size_t>(params.n_subgroups, 1);

  cohort.records.reserve(params.n_patients);
  char id[32];
  for (std::size_t i = 0; i < params.n_patients; ++i) {
    auto rng = make_rng(seed, sample_stream(kPatientStream, i));
    PatientRecord r;
    std::snprintf(id, sizeof id, "P%06zu", i);
    r.patient_id = id;

    const int n_visits = 1 + poisson(rng, params.mean_visits - 1.0);
    std::map<int, std::vector<std::string>> by_day;
    for (int v = 0; v < n_visits; ++v) {
      const int day = static_cast<int>(
          uniform_index(rng, static_cast<std::uint64_t>(params.history_span_days) + 1));
      const bool drifted = params.drift_day && day > *params.drift_day;
      const auto& cdf = drifted ? shifted_cdf : base_cdf;
      const int n_codes = 1 + poisson(rng, params.mean_codes_per_visit - 1.0);
      auto& day_codes = by_day[day];
      for (int c = 0; c < n_codes; ++c) day_codes.push_back(codes[draw_categorical(rng, cdf)]);
    }
    for (auto& [day, day_codes] : by_day) {
      normalize_codes(day_codes);
      r.visits.push_back({day, std::move(day_codes)});
    }

    if (params.n_subgroups > 0) {
      std::vector<bool> tagged(params.n_subgroups, false);
      for (const auto& v : r.visits) {
        for (const auto& c : v.codes) tagged[cohort.vocab.index(c) / group_size] = true;
      }
      for (std::size_t g = 0; g < params.n_subgroups; ++g) {
        if (tagged[g]) r.subgroups.push_back("G" + std::to_string(g));
      }
    }

    const double p = sigmoid(planted_logit(params, r, cohort.vocab, cohort.prediction_day));
    r.label = planted_label_uniform(seed, i) < p ? 1 : 0;
    cohort.records.push_back(std::move(r));
  }
  return cohort;
}

json to_json(const ClusterParams& p) {
  return {{"K", p.features}, {"gamma", p.gamma}, {"rho", p.rho}, {"beta", p.beta}, {"N", p.samples}};
}

ClusterParams cluster_params_from_json(const json& j) {
  ClusterParams p;
  for (const auto& [key, value] : j.items()) {
    if (key == "K") p.features = value.get<std::size_t>();
    else if (key == "gamma") p.gamma = value.get<double>();
    else if (key == "rho") p.rho = value.get<double>();
    else if (key == "beta") p.beta = value.get<double>();
    else if (key == "N") p.samples = value.get<std::size_t>();
    else throw DataError("unknown cluster parameter '" + key + "'");
  }
  return p;
}

json to_json(const ClaimsGenParams& p) {
  json windows = json::array();
  for (int o : p.planted_windows.offsets) windows.push_back(offset_to_json(o));
  json weights = json::array();
  for (const auto& w : p.planted_weights) {
    weights.push_back({{"window", w.window}, {"code", w.code}, {"weight", w.weight}});
  }
  json j = {{"n_patients", p.n_patients},
            {"vocab_size", p.vocab_size},
            {"mean_visits", p.mean_visits},
            {"mean_codes_per_visit", p.mean_codes_per_visit},
            {"history_span_days", p.history_span_days},
            {"zipf_exponent", p.zipf_exponent},
            {"planted_windows", windows},
            {"planted_weights", weights},
            {"intercept", p.intercept},
            {"drift_day", p.drift_day ? json(*p.drift_day) : json(nullptr)},
            {"drift_strength", p.drift_strength},
            {"n_subgroups", p.n_subgroups}};
  return j;
}

ClaimsGenParams claims_params_from_json(const json& j) {
  ClaimsGenParams p = default_claims_params();
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "n_patients") p.n_patients = value.get<std::size_t>();
      else if (key == "vocab_size") p.vocab_size = value.get<std::size_t>();
      else if (key == "mean_visits") p.mean_visits = value.get<double>();
      else if (key == "mean_codes_per_visit") p.mean_codes_per_visit = value.get<double>();
      else if (key == "history_span_days") p.history_span_days = value.get<int>();
      else if (key == "zipf_exponent") p.zipf_exponent = value.get<double>();
      else if (key == "planted_windows") {
        std::vector<int> offsets;
        for (const auto& o : value) offsets.push_back(parse_offset(o));
        p.planted_windows = WindowSet(std::move(offsets));
      } else if (key == "planted_weights") {
        p.planted_weights.clear();
        for (const auto& w : value) {
          p.planted_weights.push_back({w.at("window").get<std::size_t>(),
                                       w.at("code").get<std::string>(),
                                       w.at("weight").get<double>()});
        }
      } else if (key == "intercept") p.intercept = value.get<double>();
      else if (key == "drift_day") {
        if (value.is_null()) p.drift_day.reset();
        else p.drift_day = value.get<int>();
      } else if (key == "drift_strength") p.drift_strength = value.get<double>();
      else if (key == "n_subgroups") p.n_subgroups = value.get<std::size_t>();
      else throw DataError("unknown claims generator parameter '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed claims generator parameters: ") + e.what());
  }
  return p;
}

}  // namespace sard
