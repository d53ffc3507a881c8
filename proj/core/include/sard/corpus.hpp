#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

namespace sard {

/// Closed, ordered code vocabulary. Positions are a bijection onto 0..size()-1.
class CodeVocab {
 public:
  CodeVocab() = default;
  explicit CodeVocab(std::vector<std::string> codes);

  std::size_t size() const noexcept { return codes_.size(); }
  const std::string& code(std::size_t index) const { return codes_.at(index); }
  const std::vector<std::string>& codes() const noexcept { return codes_; }

  std::optional<std::size_t> find(const std::string& code) const;
  /// Throws DataError for codes outside the vocabulary.
  std::size_t index(const std::string& code) const;

  friend bool operator==(const CodeVocab& a, const CodeVocab& b) { return a.codes_ == b.codes_; }

 private:
  std::vector<std::string> codes_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Visit {
  int day = 0;
  /// Set semantics: sorted, unique.
  std::vector<std::string> codes;

  friend bool operator==(const Visit&, const Visit&) = default;
};

struct PatientRecord {
  std::string patient_id;
  std::vector<Visit> visits;  // ascending by day
  int label = 0;
  std::vector<std::string> subgroups;

  friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

struct Cohort {
  int prediction_day = 0;
  std::vector<PatientRecord> records;
  CodeVocab vocab;

  std::vector<int> labels() const;

  friend bool operator==(const Cohort&, const Cohort&) = default;
};

/// Checks every Cohort invariant; throws DataError naming the offending patient.
void validate_cohort(const Cohort& cohort);

/// Canonicalizes a visit's code list into set form (sorted, deduplicated).
void normalize_codes(std::vector<std::string>& codes);

Cohort read_cohort(std::istream& in);
void write_cohort(std::ostream& out, const Cohort& cohort);

Cohort load_cohort(const std::filesystem::path& path);
void save_cohort(const std::filesystem::path& path, const Cohort& cohort);

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct CohortSplit {
  Cohort train;
  Cohort validation;
  Cohort test;
};

/// Seeded partition of the records. Validation and test sizes are the rounded
/// fractions; the remainder goes to train.
CohortSplit split_cohort(const Cohort& cohort, SplitFractions fractions, std::uint64_t seed);

/// Ratio of negatives to positives. Throws std::invalid_argument when all labels agree.
double class_weight(std::span<const int> labels);

}  // namespace sard
