#include "sard/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sard/errors.hpp"
#include "sard/rng.hpp"

namespace sard {

using nlohmann::json;

CodeVocab::CodeVocab(std::vector<std::string> codes) : codes_(std::move(codes)) {
  index_.reserve(codes_.size());
  for (std::size_t i = 0; i < codes_.size(); ++i) {
    if (!index_.emplace(codes_[i], i).second) {
      throw DataError("duplicate vocabulary code '" + codes_[i] + "'");
    }
  }
}

std::optional<std::size_t> CodeVocab::find(const std::string& code) const {
  auto it = index_.find(code);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t CodeVocab::index(const std::string& code) const {
  auto found = find(code);
  if (!found) throw DataError("code '" + code + "' is not in the vocabulary");
  return *found;
}

std::vector<int> Cohort::labels() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

void normalize_codes(std::vector<std::string>& codes) {
  std::sort(codes.begin(), codes.end());
  codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
}

namespace {

void validate_record(const PatientRecord& r, const Cohort& cohort) {
  const auto fail = [&](const std::string& what) {
    throw DataError("patient '" + r.patient_id + "': " + what);
  };
  if (r.label != 0 && r.label != 1) fail("label must be 0 or 1");
  int previous = std::numeric_limits<int>::min();
  for (const auto& v : r.visits) {
    if (v.day < previous) fail("visits are not sorted by day");
    previous = v.day;
    if (v.day > cohort.prediction_day) {
      fail("visit on day " + std::to_string(v.day) + " is after the prediction day " +
           std::to_string(cohort.prediction_day));
    }
    if (v.codes.empty()) fail("visit on day " + std::to_string(v.day) + " has no codes");
    for (std::size_t i = 0; i < v.codes.size(); ++i) {
      if (i > 0 && !(v.codes[i - 1] < v.codes[i])) {
        fail("visit on day " + std::to_string(v.day) + " repeats or misorders codes");
      }
      if (!cohort.vocab.find(v.codes[i])) fail("unknown code '" + v.codes[i] + "'");
    }
  }
}

PatientRecord parse_record(const json& j) {
  PatientRecord r;
  r.patient_id = j.at("patient_id").get<std::string>();
  r.label = j.at("label").get<int>();
  r.subgroups = j.at("subgroups").get<std::vector<std::string>>();
  for (const auto& jv : j.at("visits")) {
    Visit v;
    v.day = jv.at("day").get<int>();
    v.codes = jv.at("codes").get<std::vector<std::string>>();
    const auto raw_size = v.codes.size();
    normalize_codes(v.codes);
    if (v.codes.size() != raw_size) {
      throw DataError("patient '" + r.patient_id + "': visit on day " + std::to_string(v.day) +
                      " lists a code twice");
    }
    r.visits.push_back(std::move(v));
  }
  return r;
}

}  // namespace

void validate_cohort(const Cohort& cohort) {
  for (const auto& r : cohort.records) validate_record(r, cohort);
}

Cohort read_cohort(std::istream& in) {
  Cohort cohort;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!have_header) {
        cohort.prediction_day = j.at("prediction_day").get<int>();
        cohort.vocab = CodeVocab(j.at("vocab").get<std::vector<std::string>>());
        have_header = true;
        continue;
      }
      auto record = parse_record(j);
      validate_record(record, cohort);
      cohort.records.push_back(std::move(record));
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw DataError("cohort file has no header line");
  return cohort;
}

void write_cohort(std::ostream& out, const Cohort& cohort) {
  json header = {{"prediction_day", cohort.prediction_day}, {"vocab", cohort.vocab.codes()}};
  out << header.dump() << '\n';
  for (const auto& r : cohort.records) {
    json visits = json::array();
    for (const auto& v : r.visits) visits.push_back({{"day", v.day}, {"codes", v.codes}});
    json j = {{"patient_id", r.patient_id},
              {"label", r.label},
              {"subgroups", r.subgroups},
              {"visits", std::move(visits)}};
    out << j.dump() << '\n';
  }
}

Cohort load_cohort(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open cohort file " + path.string());
  return read_cohort(in);
}

void save_cohort(const std::filesystem::path& path, const Cohort& cohort) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write cohort file " + path.string());
  write_cohort(out, cohort);
}

CohortSplit split_cohort(const Cohort& cohort, SplitFractions f, std::uint64_t seed) {
  if (!(f.train > 0 && f.validation > 0 && f.test > 0) ||
      std::abs(f.train + f.validation + f.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must be positive and sum to 1");
  }
  const std::size_t n = cohort.records.size();
  const auto n_val = static_cast<std::size_t>(std::llround(f.validation * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(f.test * static_cast<double>(n)));
  if (n_val + n_test > n) throw std::invalid_argument("cohort too small for the requested split");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  auto rng = make_rng(seed, 0x5b117);
  shuffle(order.begin(), order.end(), rng);

  CohortSplit out;
  for (Cohort* part : {&out.train, &out.validation, &out.test}) {
    part->prediction_day = cohort.prediction_day;
    part->vocab = cohort.vocab;
  }
  // Keep the original record order inside each part.
  std::vector<int> assignment(n, 0);
  for (std::size_t i = 0; i < n_val; ++i) assignment[order[i]] = 1;
  for (std::size_t i = n_val; i < n_val + n_test; ++i) assignment[order[i]] = 2;
  for (std::size_t i = 0; i < n; ++i) {
    Cohort* part = assignment[i] == 0 ? &out.train : assignment[i] == 1 ? &out.validation : &out.test;
    part->records.push_back(cohort.records[i]);
  }
  return out;
}

double class_weight(std::span<const int> labels) {
  long long positives = 0;
  long long negatives = 0;
  for (int y : labels) (y == 1 ? positives : negatives) += 1;
  if (positives == 0 || negatives == 0) {
    throw std::invalid_argument("class_weight needs at least one positive and one negative label");
  }
  return static_cast<double>(negatives) / static_cast<double>(positives);
}

}  // namespace sard
