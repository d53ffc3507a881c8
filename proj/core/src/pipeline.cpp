#include "sard/pipeline.hpp"

#include <nlohmann/json.hpp>

#include "sard/errors.hpp"
#include "sard/evaluation.hpp"
#include "sard/rng.hpp"

namespace sard {

using nlohmann::json;

json to_json(const PipelineConfig& c) {
  json windows = json::array();
  for (int o : c.window_candidates) windows.push_back(offset_to_json(o));
  return {{"split", {c.split.train, c.split.validation, c.split.test}},
          {"window_candidates", windows},
          {"n_windows", c.n_windows},
          {"lambda_grid", c.lambda_grid},
          {"l1_tol", c.l1.tol},
          {"l1_max_iter", c.l1.max_iter},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"init", c.init == EmbeddingInit::gaussian ? "gaussian" : "cooccurrence"}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "split") {
        const auto v = value.get<std::vector<double>>();
        if (v.size() != 3) throw DataError("split needs three fractions");
        c.split = {v[0], v[1], v[2]};
      } else if (key == "window_candidates") {
        c.window_candidates.clear();
        for (const auto& o : value) c.window_candidates.push_back(parse_offset(o));
      } else if (key == "n_windows") c.n_windows = value.get<std::size_t>();
      else if (key == "lambda_grid") c.lambda_grid = value.get<std::vector<double>>();
      else if (key == "l1_tol") c.l1.tol = value.get<double>();
      else if (key == "l1_max_iter") c.l1.max_iter = value.get<int>();
      else if (key == "model") c.model = sard_config_from_json(value);
      else if (key == "train") c.train = train_config_from_json(value);
      else if (key == "init") {
        const auto s = value.get<std::string>();
        if (s == "gaussian") c.init = EmbeddingInit::gaussian;
        else if (s == "cooccurrence") c.init = EmbeddingInit::cooccurrence;
        else throw DataError("unknown init '" + s + "'");
      } else throw DataError("unknown pipeline config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed pipeline config: ") + e.what());
  }
  return c;
}

PipelineData prepare_pipeline(const Cohort& cohort, const PipelineConfig& config, std::uint64_t seed) {
  PipelineData d;
  d.split = split_cohort(cohort, config.split, seed);
  d.selection = select_windows(config.window_candidates, config.n_windows, d.split.train,
                               d.split.validation, config.lambda_grid, config.l1);
  const auto* teacher = &d.selection.teacher.model;
  d.train = prepare_set(d.split.train, config.model, teacher);
  d.validation = prepare_set(d.split.validation, config.model, teacher);
  d.test = prepare_set(d.split.test, config.model, teacher);
  d.class_weight = class_weight(d.train.labels);
  return d;
}

SardModel initial_model(const PipelineData& data, const PipelineConfig& config, std::uint64_t seed) {
  auto m = SardModel::random(config.model, data.split.train.vocab.size(), substream_seed(seed, 0x1a1));
  if (config.init == EmbeddingInit::cooccurrence) {
    m.phi().values = cooccurrence_embeddings(data.split.train, config.model.embedding_dim).data();
  }
  return m;
}

BranchResult run_branch(const PipelineData& data, const PipelineConfig& config, bool reverse_distill,
                        std::uint64_t seed) {
  BranchResult r{initial_model(data, config, seed), std::nullopt, {TrainResult{SardModel(config.model, 1), {}}, {}}, {}, 0.0};
  TrainConfig tc = config.train;
  tc.seed = substream_seed(seed, 0x1a2);
  SardModel start = r.initial;
  if (reverse_distill) {
    r.pretrain = pretrain_rd(start, data.train, data.validation, data.class_weight, tc);
    start = r.pretrain->model;
  }
  r.finetune = tune_alpha(start, data.train, data.validation, data.class_weight, tc);
  r.test_probabilities = predict_set(r.final_model(), data.test);
  r.test_auc = auc_roc(ScoredSet(r.test_probabilities, data.test.labels));
  return r;
}

}  // namespace sard
