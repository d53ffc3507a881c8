#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "experiment.hpp"

namespace sard::cli {

/// Directory name for a trained branch, e.g. "sard", "sard_no_rd", "sard_gru_sum".
std::string branch_name(const SardConfig& model, bool reverse_distill);

void cmd_gen(const ExperimentConfig& c, const std::filesystem::path& out, std::ostream& log);
void cmd_train(const ExperimentConfig& c, std::ostream& log);
void cmd_report(const ExperimentConfig& c, std::ostream& log);
void cmd_dissect(const ExperimentConfig& c, std::ostream& log);
void cmd_lemma(const ExperimentConfig& c, std::ostream& log);
/// param is gamma, beta or n (cluster sample count).
void cmd_sweep(const ExperimentConfig& c, const std::string& param, const std::vector<double>& values,
               std::ostream& log);

}  // namespace sard::cli
