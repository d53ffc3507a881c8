#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "sard/errors.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> variant;
  std::optional<std::string> head;
  bool no_rd = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "overrides seed");
  cmd->add_option("--out", o.out, "overrides output_dir (gen: data directory)");
}

sard::cli::ExperimentConfig resolve(const Overrides& o, bool out_is_output_dir) {
  auto c = sard::cli::load_experiment(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out && out_is_output_dir) c.output_dir = *o.out;
  if (o.variant) c.pipeline.model.encoder = sard::parse_encoder_variant(*o.variant);
  if (o.head) c.pipeline.model.head = sard::parse_head_variant(*o.head);
  if (o.no_rd) c.reverse_distill = false;
  c.pipeline.model.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SARD experiments: synthetic claims, reverse distillation, replication checks"};
  app.require_subcommand(1);
  Overrides o;

  auto* gen = app.add_subcommand("gen", "generate a cohort or cluster dataset");
  add_common(gen, o);

  auto* train = app.add_subcommand("train", "fit the teacher, pre-train and fine-tune");
  add_common(train, o);
  train->add_flag("--no-rd", o.no_rd, "skip reverse-distillation pre-training");
  train->add_option("--variant", o.variant, "encoder")->check(CLI::IsMember({"sa", "gru", "identity"}));
  train->add_option("--head", o.head, "prediction head")->check(CLI::IsMember({"conv", "sum"}));

  auto* report = app.add_subcommand("report", "evaluate trained models on the test split");
  add_common(report, o);
  auto* dissect = app.add_subcommand("dissect", "match hidden units to teacher features");
  add_common(dissect, o);
  auto* lemma = app.add_subcommand("lemma", "build the replicating construction and sweep its error");
  add_common(lemma, o);

  std::string param;
  std::vector<double> values;
  auto* sweep = app.add_subcommand("sweep", "cluster-benchmark sweep over one generator parameter");
  add_common(sweep, o);
  sweep->add_option("--param", param, "gamma, beta or n")->required()->check(
      CLI::IsMember({"gamma", "beta", "n"}));
  sweep->add_option("--values", values, "values to sweep")->required()->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto c = resolve(o, false);
      const auto dir = o.out ? std::filesystem::path(*o.out) : sard::cli::data_path(c).parent_path();
      sard::cli::cmd_gen(c, dir, std::cout);
    } else if (train->parsed()) {
      sard::cli::cmd_train(resolve(o, true), std::cout);
    } else if (report->parsed()) {
      sard::cli::cmd_report(resolve(o, true), std::cout);
    } else if (dissect->parsed()) {
      sard::cli::cmd_dissect(resolve(o, true), std::cout);
    } else if (lemma->parsed()) {
      sard::cli::cmd_lemma(resolve(o, true), std::cout);
    } else if (sweep->parsed()) {
      sard::cli::cmd_sweep(resolve(o, true), param, values, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "sard: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
