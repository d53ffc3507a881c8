#include "sard/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sard/errors.hpp"
#include "sard/evaluation.hpp"
#include "sard/rng.hpp"

namespace sard {

using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size == 0 || micro_batch == 0) throw std::invalid_argument("batch sizes must be positive");
  if (micro_batch > batch_size || batch_size % micro_batch != 0) {
    throw std::invalid_argument("batch_size must be a multiple of micro_batch");
  }
  if (max_epochs == 0) throw std::invalid_argument("max_epochs must be positive");
  if (alpha_grid.empty()) throw std::invalid_argument("alpha grid is empty");
  for (double a : alpha_grid) {
    if (!(a >= 0.0)) throw std::invalid_argument("alpha values must be >= 0");
  }
  adam.validate();
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"micro_batch", c.micro_batch},
          {"max_epochs", c.max_epochs},
          {"early_stop_patience", c.early_stop_patience},
          {"alpha_grid", c.alpha_grid},
          {"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"epsilon", c.adam.epsilon},
          {"dropout", c.dropout},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "micro_batch") c.micro_batch = value.get<std::size_t>();
      else if (key == "max_epochs") c.max_epochs = value.get<std::size_t>();
      else if (key == "early_stop_patience") c.early_stop_patience = value.get<std::size_t>();
      else if (key == "alpha_grid") c.alpha_grid = value.get<std::vector<double>>();
      else if (key == "learning_rate") c.adam.learning_rate = value.get<double>();
      else if (key == "beta1") c.adam.beta1 = value.get<double>();
      else if (key == "beta2") c.adam.beta2 = value.get<double>();
      else if (key == "epsilon") c.adam.epsilon = value.get<double>();
      else if (key == "dropout") c.dropout = value.get<bool>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw DataError("unknown training config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<Example> PreparedSet::examples() const {
  std::vector<Example> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = {&visits[i], labels[i], teacher[i]};
  return out;
}

PreparedSet prepare_set(const Cohort& cohort, const SardConfig& config, const LinearModel* teacher) {
  PreparedSet s;
  s.visits.reserve(cohort.records.size());
  for (const auto& r : cohort.records) {
    s.visits.push_back(pack_patient(r, cohort.vocab, cohort.prediction_day, config.max_visits,
                                    config.time_clip_days));
    s.labels.push_back(r.label);
  }
  if (teacher) {
    s.teacher = predict_cohort(*teacher, cohort);
  } else {
    s.teacher.assign(s.size(), 0.5);
  }
  return s;
}

std::vector<double> predict_set(const SardModel& model, const PreparedSet& set) {
  std::vector<double> out(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) out[i] = forward_packed(model, set.visits[i]).probability;
  return out;
}

void write_history_csv(std::ostream& out, const TrainHistory& h) {
  out << "epoch,train_loss,val_loss,val_auc,wall_time\n";
  out.precision(17);
  for (const auto& e : h.epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_auc << ','
        << e.wall_time << '\n';
  }
}

GradientResult accumulated_gradient(const SardModel& model, std::span<const Example> batch,
                                    const LossSpec& loss, std::size_t micro_batch,
                                    ForwardOptions options) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  if (micro_batch == 0) throw std::invalid_argument("micro_batch must be positive");
  GradientResult total;
  total.gradient = model.parameters().zeros_like();
  const double n = static_cast<double>(batch.size());
  for (std::size_t start = 0; start < batch.size(); start += micro_batch) {
    const auto part = batch.subspan(start, std::min(micro_batch, batch.size() - start));
    const double w = static_cast<double>(part.size()) / n;
    ForwardOptions o = options;
    o.seed = substream_seed(options.seed, start);
    auto g = model_gradient(model, part, loss, o);
    total.loss += w * g.loss;
    total.gradient.add_scaled(g.gradient, w);
  }
  return total;
}

double accumulate_and_step(SardModel& model, AdamState& adam, std::span<const Example> batch,
                           const LossSpec& loss, std::size_t micro_batch, ForwardOptions options) {
  auto g = accumulated_gradient(model, batch, loss, micro_batch, options);
  adam_update(adam, model.parameters(), g.gradient);
  if (!model.parameters().all_finite()) throw DivergenceError("non-finite parameters");
  return g.loss;
}

namespace {

double safe_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || pos == static_cast<long>(labels.size())) return 0.5;
  return auc_roc(ScoredSet(scores, labels));
}

double mean_loss(const SardModel& model, const PreparedSet& set, const LossSpec& loss) {
  const auto ex = set.examples();
  return model_loss(model, ex, loss);
}

enum class Criterion { min_loss, max_auc };

TrainResult run_phase(SardModel model, const PreparedSet& train, const PreparedSet& validation,
                      const LossSpec& loss, const TrainConfig& config, Criterion criterion,
                      std::string phase) {
  config.validate();
  loss.validate();
  if (train.size() == 0 || validation.size() == 0) throw std::invalid_argument("empty training data");
  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  TrainResult result{model, {}};
  result.history.phase = std::move(phase);
  result.history.alpha = loss.alpha;

  const auto evaluate = [&](const SardModel& m, std::size_t epoch, double train_loss) {
    EpochRecord r;
    r.epoch = epoch;
    r.train_loss = train_loss;
    r.val_loss = mean_loss(m, validation, loss);
    r.val_auc = safe_auc(predict_set(m, validation), validation.labels);
    r.wall_time = elapsed();
    return r;
  };
  const auto better = [&](const EpochRecord& a, const EpochRecord& b) {
    return criterion == Criterion::min_loss ? a.val_loss < b.val_loss : a.val_auc > b.val_auc;
  };

  result.history.epochs.push_back(evaluate(model, 0, mean_loss(model, train, loss)));
  EpochRecord best = result.history.epochs.back();
  std::size_t since_best = 0;

  const auto all = train.examples();
  std::vector<std::size_t> order(train.size());
  std::vector<Example> batch;
  batch.reserve(config.batch_size);
  AdamState adam = AdamState::init(model.parameters(), config.adam);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_rng(config.seed, 0x7000 + epoch);
    shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    try {
      for (std::size_t b = 0; b * config.batch_size < order.size(); ++b) {
        batch.clear();
        const std::size_t lo = b * config.batch_size;
        const std::size_t hi = std::min(order.size(), lo + config.batch_size);
        for (std::size_t i = lo; i < hi; ++i) batch.push_back(all[order[i]]);
        ForwardOptions opts{config.dropout, substream_seed(config.seed, (epoch << 32) + b)};
        loss_sum += accumulate_and_step(model, adam, batch, loss, config.micro_batch, opts) *
                    static_cast<double>(batch.size());
      }
    } catch (const DivergenceError&) {
      result.history.diverged = true;
      break;
    }
    auto rec = evaluate(model, epoch, loss_sum / static_cast<double>(order.size()));
    if (!std::isfinite(rec.val_loss)) {
      result.history.diverged = true;
      break;
    }
    result.history.epochs.push_back(rec);
    if (better(rec, best)) {
      best = rec;
      result.model = model;
      result.history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.early_stop_patience) {
      break;
    }
  }
  return result;
}

}  // namespace

TrainResult pretrain_rd(SardModel model, const PreparedSet& train, const PreparedSet& validation,
                        double class_weight, const TrainConfig& config) {
  LossSpec loss{LossKind::rd, class_weight, 0.0};
  return run_phase(std::move(model), train, validation, loss, config, Criterion::min_loss,
                   "pretrain");
}

TrainResult finetune(SardModel model, const PreparedSet& train, const PreparedSet& validation,
                     double class_weight, const TrainConfig& config, double alpha) {
  LossSpec loss{LossKind::tune, class_weight, alpha};
  return run_phase(std::move(model), train, validation, loss, config, Criterion::max_auc,
                   "finetune");
}

AlphaSearch tune_alpha(const SardModel& start, const PreparedSet& train,
                       const PreparedSet& validation, double class_weight,
                       const TrainConfig& config) {
  config.validate();
  std::optional<TrainResult> best;
  double best_auc = -1.0;
  AlphaSearch out{TrainResult{start, {}}, {}};
  for (double alpha : config.alpha_grid) {
    auto r = finetune(start, train, validation, class_weight, config, alpha);
    const double auc = r.history.epochs.at(r.history.best_epoch).val_auc;
    out.scores.emplace_back(alpha, auc);
    if (auc > best_auc) {
      best_auc = auc;
      best = std::move(r);
    }
  }
  out.best = std::move(*best);
  return out;
}

}  // namespace sard
