#include "experiment.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include <openssl/evp.h>

#include "sard/errors.hpp"

namespace sard::cli {

using nlohmann::json;

namespace {

std::string kind_name(DataKind k) { return k == DataKind::claims ? "claims" : "cluster"; }

DataKind parse_kind(const std::string& s) {
  if (s == "claims") return DataKind::claims;
  if (s == "cluster") return DataKind::cluster;
  throw DataError("data.kind must be claims or cluster, got '" + s + "'");
}

template <typename F>
void each_key(const json& j, const std::string& where, F&& f) {
  if (!j.is_object()) throw DataError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!f(key, value)) throw DataError("unknown key '" + key + "' in " + where);
  }
}

DataSection data_from_json(const json& j) {
  DataSection d;
  bool have_kind = false;
  each_key(j, "data", [&](const std::string& key, const json& v) {
    if (key == "kind") {
      d.kind = parse_kind(v.get<std::string>());
      have_kind = true;
    } else if (key == "claims") {
      d.claims = claims_params_from_json(v);
    } else if (key == "cluster") {
      d.cluster = cluster_params_from_json(v);
    } else if (key == "path") {
      d.path = v.get<std::string>();
    } else {
      return false;
    }
    return true;
  });
  if (!have_kind) throw DataError("data.kind is required");
  d.claims.validate();
  d.cluster.validate();
  return d;
}

LemmaSection lemma_from_json(const json& j) {
  LemmaSection l;
  each_key(j, "lemma", [&](const std::string& key, const json& v) {
    if (key == "n_freq") l.n_freq = v.get<std::vector<std::size_t>>();
    else if (key == "sharpness") l.sharpness = v.get<std::vector<double>>();
    else if (key == "period") l.period = v.get<double>();
    else return false;
    return true;
  });
  if (l.n_freq.empty() || l.sharpness.empty()) throw DataError("lemma grids must be non-empty");
  return l;
}

ReportSection report_from_json(const json& j) {
  ReportSection r;
  each_key(j, "report", [&](const std::string& key, const json& v) {
    if (key == "subgroup_min_positives") r.subgroup_min_positives = v.get<std::size_t>();
    else if (key == "sensitivity") r.sensitivity = v.get<double>();
    else if (key == "topk") r.topk = v.get<std::size_t>();
    else if (key == "example_patient") r.example_patient = v.get<std::size_t>();
    else return false;
    return true;
  });
  return r;
}

SweepSection sweep_from_json(const json& j) {
  SweepSection s;
  each_key(j, "sweep", [&](const std::string& key, const json& v) {
    if (key == "seeds") s.seeds = v.get<std::vector<std::uint64_t>>();
    else return false;
    return true;
  });
  if (s.seeds.empty()) throw DataError("sweep.seeds is empty");
  return s;
}

}  // namespace

ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig c;
  bool seed = false, out = false, data = false;
  try {
    each_key(j, "config", [&](const std::string& key, const json& v) {
      if (key == "seed") {
        c.seed = v.get<std::uint64_t>();
        seed = true;
      } else if (key == "output_dir") {
        c.output_dir = v.get<std::string>();
        out = true;
      } else if (key == "reverse_distill") {
        c.reverse_distill = v.get<bool>();
      } else if (key == "data") {
        c.data = data_from_json(v);
        data = true;
      } else if (key == "pipeline") {
        c.pipeline = pipeline_config_from_json(v);
      } else if (key == "cluster_bench") {
        c.cluster_bench = cluster_bench_config_from_json(v);
      } else if (key == "lemma") {
        c.lemma = lemma_from_json(v);
      } else if (key == "report") {
        c.report = report_from_json(v);
      } else if (key == "sweep") {
        c.sweep = sweep_from_json(v);
      } else {
        return false;
      }
      return true;
    });
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed config: ") + e.what());
  }
  if (!seed) throw DataError("config is missing 'seed'");
  if (!out) throw DataError("config is missing 'output_dir'");
  if (!data) throw DataError("config is missing 'data'");
  return c;
}

json to_json(const ExperimentConfig& c) {
  json data = {{"kind", kind_name(c.data.kind)},
               {"claims", to_json(c.data.claims)},
               {"cluster", to_json(c.data.cluster)}};
  if (c.data.path) data["path"] = c.data.path->string();
  return {{"seed", c.seed},
          {"output_dir", c.output_dir.string()},
          {"reverse_distill", c.reverse_distill},
          {"data", data},
          {"pipeline", to_json(c.pipeline)},
          {"cluster_bench", to_json(c.cluster_bench)},
          {"lemma", {{"n_freq", c.lemma.n_freq}, {"sharpness", c.lemma.sharpness}, {"period", c.lemma.period}}},
          {"report",
           {{"subgroup_min_positives", c.report.subgroup_min_positives},
            {"sensitivity", c.report.sensitivity},
            {"topk", c.report.topk},
            {"example_patient", c.report.example_patient}}},
          {"sweep", {{"seeds", c.sweep.seeds}}}};
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_from_json(j);
}

std::string manifest_hash(const ExperimentConfig& c) {
  const std::string text = to_json(c).dump();
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

std::filesystem::path data_path(const ExperimentConfig& c) {
  if (c.data.path) return *c.data.path;
  return c.output_dir / "data" / (c.data.kind == DataKind::claims ? "cohort.jsonl" : "cluster.csv");
}

}  // namespace sard::cli
