#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include "sard/errors.hpp"
#include "sard/evaluation.hpp"
#include "sard/introspection.hpp"
#include "sard/lemma_check.hpp"
#include "sard/report.hpp"

namespace sard::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out.precision(17);
  return out;
}

void write_json(const fs::path& p, const json& j) { open_out(p) << j.dump(2) << '\n'; }

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("missing " + p.string());
  return json::parse(in);
}

void write_manifest(const ExperimentConfig& c, const fs::path& dir, const std::string& command) {
  write_json(dir / ("manifest_" + command + ".json"),
             {{"command", command}, {"manifest", manifest_hash(c)}, {"config", to_json(c)}});
}

fs::path models_dir(const ExperimentConfig& c) { return c.output_dir / "models"; }
fs::path teacher_path(const ExperimentConfig& c) { return c.output_dir / "teacher" / "teacher.json"; }

Cohort load_claims(const ExperimentConfig& c) {
  if (c.data.kind != DataKind::claims) throw DataError("this command needs a claims experiment");
  const auto p = data_path(c);
  if (!fs::exists(p)) throw DataError("cohort file " + p.string() + " not found; run gen first");
  return load_cohort(p);
}

LinearModel load_teacher(const ExperimentConfig& c, std::size_t vocab_size) {
  const auto p = teacher_path(c);
  if (!fs::exists(p)) throw DataError("teacher " + p.string() + " not found; run train first");
  return linear_model_from_json(read_json(p).at("model"), vocab_size);
}

struct TrainedModel {
  std::string name;
  SardModel model;
};

std::vector<TrainedModel> load_models(const ExperimentConfig& c) {
  std::vector<TrainedModel> out;
  if (!fs::exists(models_dir(c))) return out;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(models_dir(c))) {
    if (e.is_directory() && fs::exists(e.path() / "final.json")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) out.push_back({d.filename().string(), SardModel::load(d / "final.json")});
  return out;
}

std::vector<double> predict_cohort_sard(const SardModel& m, const Cohort& cohort) {
  return predict_set(m, prepare_set(cohort, m.config(), nullptr));
}

double safe_logit(double p) {
  const double q = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return std::log(q / (1.0 - q));
}

void write_history(const fs::path& p, const TrainHistory& h) {
  auto out = open_out(p);
  write_history_csv(out, h);
}

json history_summary(const TrainHistory& h) {
  return {{"phase", h.phase},
          {"skipped", h.skipped},
          {"diverged", h.diverged},
          {"alpha", h.alpha},
          {"best_epoch", h.best_epoch},
          {"epochs_recorded", h.epochs.size()}};
}

void dissect_models(const ExperimentConfig& c, const Cohort& test, const LinearModel& teacher,
                    const std::vector<TrainedModel>& models, std::ostream& log) {
  json summary = json::object();
  for (const auto& m : models) {
    if (m.model.config().head != HeadVariant::conv) continue;
    const auto dir = models_dir(c) / m.name;
    const auto rep = dissect(m.model, teacher, test);
    const auto med = dissect(m.model, teacher, test, {Binarization::median, 0.0});
    {
      auto out = open_out(dir / "dissection.csv");
      write_dissection_csv(out, rep);
    }
    {
      auto out = open_out(dir / "dissection_median.csv");
      write_dissection_csv(out, med);
    }
    {
      auto out = open_out(dir / "dissection_topk.csv");
      write_topk_csv(out, rep, teacher, test.vocab, c.report.topk);
    }
    summary[m.name] = {{"unique_matched", rep.unique_matched},
                       {"percentage", rep.percentage},
                       {"nonzero_features", rep.features.size()},
                       {"unique_matched_median", med.unique_matched}};
    log << "dissect " << m.name << ": " << rep.unique_matched << " of " << rep.features.size()
        << " features matched\n";

    if (test.records.empty()) continue;
    const auto& patient = test.records[std::min(c.report.example_patient, test.records.size() - 1)];
    const auto packed = pack_patient(patient, test.vocab, test.prediction_day,
                                     m.model.config().max_visits, m.model.config().time_clip_days);
    {
      auto out = open_out(dir / "visit_importance.csv");
      write_visit_importance_csv(out, visit_importance(m.model, packed), packed);
    }
    if (m.model.config().encoder == EncoderVariant::self_attention) {
      const auto maps = attention_maps(m.model, packed);
      const std::size_t active = packed.active();
      for (std::size_t i = 0; i < maps.size(); ++i) {
        Matrix a(active, active);
        for (std::size_t r = 0; r < active; ++r) {
          for (std::size_t k = 0; k < active; ++k) a(r, k) = maps[i](r, k);
        }
        const auto layer = i / m.model.config().heads;
        const auto head = i % m.model.config().heads;
        const std::string stem = "attention_l" + std::to_string(layer) + "_h" + std::to_string(head);
        write_matrix_csv(dir / (stem + ".csv"), a);
        write_text(dir / (stem + ".svg"),
                   svg_heatmap(a, {"attention " + patient.patient_id, "key slot", "query slot", false}));
      }
    }
  }
  write_json(c.output_dir / "report" / "dissection_summary.json", summary);
}

}  // namespace

std::string branch_name(const SardConfig& model, bool reverse_distill) {
  std::string name = "sard";
  if (model.encoder != EncoderVariant::self_attention) name += "_" + to_string(model.encoder);
  if (model.head == HeadVariant::summing) name += "_sum";
  if (!reverse_distill) name += "_no_rd";
  return name;
}

void cmd_gen(const ExperimentConfig& c, const fs::path& out, std::ostream& log) {
  fs::create_directories(out);
  json meta = {{"seed", c.seed}, {"manifest", manifest_hash(c)}, {"config", to_json(c)}};
  if (c.data.kind == DataKind::claims) {
    const auto cohort = gen_claims_cohort(c.data.claims, c.seed);
    save_cohort(out / "cohort.jsonl", cohort);
    meta["kind"] = "claims";
    meta["params"] = to_json(c.data.claims);
    meta["planted_model"] = linear_model_to_json(planted_linear_model(c.data.claims));
    meta["patients"] = cohort.records.size();
    std::size_t pos = 0;
    for (const auto& r : cohort.records) pos += r.label;
    meta["positives"] = pos;
    log << "gen: " << cohort.records.size() << " patients, " << pos << " positive -> "
        << (out / "cohort.jsonl").string() << '\n';
  } else {
    const auto data = gen_cluster_dataset(c.data.cluster, c.seed);
    write_cluster_csv(out / "cluster.csv", data);
    meta["kind"] = "cluster";
    meta["params"] = to_json(c.data.cluster);
    meta["direction"] = data.direction;
    meta["informative_features"] = data.informative_features;
    log << "gen: " << data.x.rows() << " x " << data.x.cols() << " cluster dataset -> "
        << (out / "cluster.csv").string() << '\n';
  }
  write_json(out / "metadata.json", meta);
}

void cmd_train(const ExperimentConfig& c, std::ostream& log) {
  const bool reverse_distill = c.reverse_distill;
  fs::create_directories(c.output_dir);
  write_manifest(c, c.output_dir, "train");
  if (c.data.kind == DataKind::cluster) {
    const auto p = data_path(c);
    if (!fs::exists(p)) throw DataError("dataset " + p.string() + " not found; run gen first");
    const auto data = read_cluster_csv(p);
    const auto r = run_cluster_bench(data, c.cluster_bench, c.seed);
    write_json(c.output_dir / "cluster_bench" / "result.json",
               {{"reverse_distill", r.reverse_distill},
                {"standard_nn", r.standard_nn},
                {"feature_select", r.feature_select},
                {"oracle", r.oracle},
                {"teacher", r.teacher},
                {"teacher_lambda", r.teacher_lambda},
                {"chosen_alpha", r.chosen_alpha},
                {"selected_features", r.selected_features},
                {"manifest", manifest_hash(c)}});
    log << "train: reverse_distill " << r.reverse_distill << " standard_nn " << r.standard_nn
        << " feature_select " << r.feature_select << " oracle " << r.oracle << '\n';
    return;
  }

  const auto cohort = load_claims(c);
  log << "train: selecting windows over " << c.pipeline.window_candidates.size() << " candidates\n";
  const auto data = prepare_pipeline(cohort, c.pipeline, c.seed);
  const auto& teacher = data.teacher();
  json windows = json::array();
  for (int o : data.selection.best.offsets) windows.push_back(offset_to_json(o));
  write_json(teacher_path(c), {{"model", linear_model_to_json(teacher)},
                               {"windows", windows},
                               {"validation_auc", data.selection.teacher.validation_auc},
                               {"class_weight", data.class_weight},
                               {"manifest", manifest_hash(c)}});
  {
    auto out = open_out(c.output_dir / "teacher" / "window_scores.csv");
    out << "windows,lambda,validation_auc\n";
    for (const auto& s : data.selection.scores) {
      std::string w;
      for (int o : s.windows.offsets) w += (w.empty() ? "" : ";") + format_offset(o);
      out << w << ',' << s.lambda << ',' << s.validation_auc << '\n';
    }
  }
  log << "train: teacher validation auc " << data.selection.teacher.validation_auc << '\n';

  const auto name = branch_name(c.pipeline.model, reverse_distill);
  const auto dir = models_dir(c) / name;
  const auto r = run_branch(data, c.pipeline, reverse_distill, c.seed);
  fs::create_directories(dir);
  r.initial.save(dir / "initial.json");
  TrainHistory pre;
  pre.phase = "pretrain";
  pre.skipped = true;
  if (r.pretrain) {
    pre = r.pretrain->history;
    r.pretrain->model.save(dir / "pretrained.json");
  }
  write_history(dir / "history_pretrain.csv", pre);
  write_history(dir / "history_finetune.csv", r.finetune.best.history);
  r.final_model().save(dir / "final.json");
  {
    auto out = open_out(dir / "alpha_scores.csv");
    out << "alpha,validation_auc\n";
    for (const auto& [a, auc] : r.finetune.scores) out << a << ',' << auc << '\n';
  }
  const auto& ft = r.finetune.best.history;
  write_json(dir / "summary.json",
             {{"name", name},
              {"reverse_distill", reverse_distill},
              {"encoder", to_string(c.pipeline.model.encoder)},
              {"head", to_string(c.pipeline.model.head)},
              {"pretrain", history_summary(pre)},
              {"finetune", history_summary(ft)},
              {"validation_auc", ft.epochs.at(ft.best_epoch).val_auc},
              {"test_auc", r.test_auc},
              {"manifest", manifest_hash(c)}});
  log << "train: " << name << " alpha " << ft.alpha << " validation auc "
      << ft.epochs.at(ft.best_epoch).val_auc << " test auc " << r.test_auc << '\n';
}

void cmd_report(const ExperimentConfig& c, std::ostream& log) {
  const auto dir = c.output_dir / "report";
  fs::create_directories(dir);
  write_manifest(c, dir, "report");
  if (c.data.kind == DataKind::cluster) {
    const auto r = read_json(c.output_dir / "cluster_bench" / "result.json");
    auto out = open_out(dir / "comparison.csv");
    out << "model,test_auc_roc\n";
    for (const char* k : {"teacher", "reverse_distill", "standard_nn", "feature_select", "oracle"}) {
      out << k << ',' << r.at(k).get<double>() << '\n';
    }
    log << "report: " << (dir / "comparison.csv").string() << '\n';
    return;
  }

  const auto cohort = load_claims(c);
  const auto split = split_cohort(cohort, c.pipeline.split, c.seed);
  const auto& test = split.test;
  const auto teacher = load_teacher(c, cohort.vocab.size());
  const auto models = load_models(c);

  std::vector<std::string> names{"teacher"};
  std::vector<std::vector<double>> probs{predict_cohort(teacher, test)};
  for (const auto& m : models) {
    names.push_back(m.name);
    probs.push_back(predict_cohort_sard(m.model, test));
  }
  std::vector<int> labels;
  for (const auto& r : test.records) labels.push_back(r.label);

  std::vector<MetricReport> reports;
  {
    auto out = open_out(dir / "comparison.csv");
    out << "model,task,n,auc_roc,auc_prc\n";
    for (std::size_t i = 0; i < names.size(); ++i) {
      auto rep = summarize(names[i], ScoredSet(probs[i], labels));
      rep.metadata["manifest"] = manifest_hash(c);
      out << names[i] << ",claims," << test.records.size() << ',' << rep.values.at("auc_roc") << ','
          << rep.values.at("auc_prc") << '\n';
      reports.push_back(std::move(rep));
    }
  }
  write_reports_csv(dir / "metrics.csv", reports);
  write_reports_json(dir / "metrics.json", reports);

  {
    auto out = open_out(dir / "delong.csv");
    out << "model_a,model_b,auc_a,auc_b,z,p_value\n";
    for (std::size_t i = 0; i < names.size(); ++i) {
      for (std::size_t k = i; k < names.size(); ++k) {
        const auto d = delong_test(probs[i], probs[k], labels);
        out << names[i] << ',' << names[k] << ',' << d.auc_a << ',' << d.auc_b << ',' << d.z << ','
            << d.p_value << '\n';
      }
    }
  }

  {
    std::set<std::string> tags;
    for (const auto& r : test.records) tags.insert(r.subgroups.begin(), r.subgroups.end());
    auto out = open_out(dir / "subgroup_ppv.csv");
    out << "model,subgroup,n,positives,ppv\n";
    for (const auto& tag : tags) {
      std::vector<std::size_t> rows;
      std::size_t pos = 0;
      for (std::size_t i = 0; i < test.records.size(); ++i) {
        const auto& sg = test.records[i].subgroups;
        if (std::find(sg.begin(), sg.end(), tag) == sg.end()) continue;
        rows.push_back(i);
        pos += labels[i];
      }
      if (pos < c.report.subgroup_min_positives) continue;
      for (std::size_t m = 0; m < names.size(); ++m) {
        ScoredSet s;
        for (auto i : rows) {
          s.scores.push_back(probs[m][i]);
          s.labels.push_back(labels[i]);
        }
        out << names[m] << ',' << tag << ',' << rows.size() << ',' << pos << ','
            << ppv_at_sensitivity(s, c.report.sensitivity) << '\n';
      }
    }
  }

  {
    auto out = open_out(dir / "logits.csv");
    out << "patient_id,label";
    for (const auto& n : names) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < test.records.size(); ++i) {
      out << test.records[i].patient_id << ',' << labels[i];
      for (const auto& p : probs) out << ',' << safe_logit(p[i]);
      out << '\n';
    }
  }
  json spear = json::object();
  std::vector<double> teacher_logits;
  for (double p : probs[0]) teacher_logits.push_back(safe_logit(p));
  for (std::size_t m = 1; m < names.size(); ++m) {
    Series s{names[m], teacher_logits, {}};
    for (double p : probs[m]) s.y.push_back(safe_logit(p));
    spear[names[m]] = spearman(s.x, s.y);
    write_text(dir / ("scatter_" + names[m] + ".svg"),
               svg_scatter(s, {names[m] + " vs teacher logits", "teacher logit", "model logit", false}));
  }
  write_json(dir / "logit_spearman.json", spear);

  std::vector<Series> roc;
  {
    auto out = open_out(dir / "roc.csv");
    out << "model,fpr,tpr\n";
    for (std::size_t m = 0; m < names.size(); ++m) {
      Series s{names[m], {}, {}};
      for (const auto& p : roc_curve(ScoredSet(probs[m], labels))) {
        out << names[m] << ',' << p.x << ',' << p.y << '\n';
        s.x.push_back(p.x);
        s.y.push_back(p.y);
      }
      roc.push_back(std::move(s));
    }
  }
  write_text(dir / "roc.svg", svg_line_chart(roc, {"ROC on the test split", "false positive rate",
                                                   "true positive rate", false}));
  log << "report: " << names.size() << " models on " << test.records.size() << " test patients -> "
      << dir.string() << '\n';

  dissect_models(c, test, teacher, models, log);
}

void cmd_dissect(const ExperimentConfig& c, std::ostream& log) {
  const auto cohort = load_claims(c);
  const auto split = split_cohort(cohort, c.pipeline.split, c.seed);
  const auto teacher = load_teacher(c, cohort.vocab.size());
  const auto models = load_models(c);
  if (models.empty()) throw DataError("no trained models under " + models_dir(c).string());
  write_manifest(c, c.output_dir / "report", "dissect");
  dissect_models(c, split.test, teacher, models, log);
}

void cmd_lemma(const ExperimentConfig& c, std::ostream& log) {
  if (c.data.kind != DataKind::claims) throw DataError("lemma needs a claims generator section");
  const auto dir = c.output_dir / "lemma";
  fs::create_directories(dir);
  write_manifest(c, dir, "lemma");
  const auto p = data_path(c);
  const Cohort cohort = fs::exists(p) ? load_cohort(p) : gen_claims_cohort(c.data.claims, c.seed);
  const auto teacher = planted_linear_model(c.data.claims);
  ConstructionOptions base;
  base.time_clip_days = c.pipeline.model.time_clip_days;
  std::size_t longest = 1;
  for (const auto& r : cohort.records) longest = std::max(longest, r.visits.size());
  base.max_visits = longest;
  const double period = c.lemma.period > 0 ? c.lemma.period : base.time_clip_days + 2.0;

  const auto rows = replication_sweep(teacher, cohort, period, c.lemma.n_freq, c.lemma.sharpness, base);
  {
    auto out = open_out(dir / "sweep.csv");
    write_sweep_csv(out, rows);
  }
  std::map<double, Series> by_s;
  for (const auto& r : rows) {
    auto& s = by_s[r.sharpness];
    s.label = "s=" + std::to_string(r.sharpness).substr(0, 5);
    s.x.push_back(static_cast<double>(r.n_freq));
    s.y.push_back(std::max(r.error.max_abs, 1e-12));
  }
  std::vector<Series> series;
  for (auto& [k, s] : by_s) series.push_back(std::move(s));
  write_text(dir / "sweep.svg",
             svg_line_chart(series, {"replication error", "frequencies", "max |dp|", true}));

  const auto n_best = *std::max_element(c.lemma.n_freq.begin(), c.lemma.n_freq.end());
  auto opts = base;
  opts.sharpness = c.lemma.sharpness.front();
  const auto model = construct_replicating_sard(teacher, cohort.vocab, period, n_best, opts);
  const auto err = replication_error(model, teacher, cohort);
  const auto rep = dissect(model, teacher, cohort);
  double min_mcc = 1.0;
  for (const auto& n : rep.neurons) {
    if (n.feature) min_mcc = std::min(min_mcc, n.mcc);
  }
  write_json(dir / "summary.json", {{"n_freq", n_best},
                                    {"sharpness", opts.sharpness},
                                    {"period", period},
                                    {"max_abs", err.max_abs},
                                    {"mean_abs", err.mean_abs},
                                    {"spearman", err.spearman},
                                    {"dissection_matched", rep.unique_matched},
                                    {"dissection_features", rep.features.size()},
                                    {"dissection_min_mcc", min_mcc},
                                    {"manifest", manifest_hash(c)}});
  log << "lemma: n_freq " << n_best << " max |dp| " << err.max_abs << " spearman " << err.spearman
      << '\n';
}

void cmd_sweep(const ExperimentConfig& c, const std::string& param, const std::vector<double>& values,
               std::ostream& log) {
  if (param != "gamma" && param != "beta" && param != "n") {
    throw std::invalid_argument("sweep --param must be gamma, beta or n");
  }
  if (values.empty()) throw std::invalid_argument("sweep needs --values");
  const auto dir = c.output_dir / "sweep";
  fs::create_directories(dir);
  write_manifest(c, dir, "sweep_" + param);

  const char* procs[] = {"reverse_distill", "standard_nn", "feature_select", "oracle", "teacher"};
  auto raw = open_out(dir / (param + ".csv"));
  raw << param << ",seed,reverse_distill,standard_nn,feature_select,oracle,teacher\n";
  std::vector<Series> medians(5);
  for (int k = 0; k < 5; ++k) medians[k].label = procs[k];
  auto med = open_out(dir / (param + "_median.csv"));
  med << param << ",reverse_distill,standard_nn,feature_select,oracle,teacher\n";

  for (double v : values) {
    ClusterParams p = c.data.cluster;
    if (param == "gamma") p.gamma = v;
    else if (param == "beta") p.beta = v;
    else p.samples = static_cast<std::size_t>(std::llround(v));
    p.validate();
    std::vector<std::vector<double>> aucs(5);
    for (auto seed : c.sweep.seeds) {
      const auto data = gen_cluster_dataset(p, seed);
      const auto r = run_cluster_bench(data, c.cluster_bench, seed);
      const double row[5] = {r.reverse_distill, r.standard_nn, r.feature_select, r.oracle, r.teacher};
      raw << v << ',' << seed;
      for (int k = 0; k < 5; ++k) {
        raw << ',' << row[k];
        aucs[k].push_back(row[k]);
      }
      raw << '\n';
    }
    med << v;
    for (int k = 0; k < 5; ++k) {
      auto& a = aucs[k];
      std::sort(a.begin(), a.end());
      const double m = a.size() % 2 ? a[a.size() / 2] : 0.5 * (a[a.size() / 2 - 1] + a[a.size() / 2]);
      med << ',' << m;
      medians[k].x.push_back(v);
      medians[k].y.push_back(m);
    }
    med << '\n';
    log << "sweep: " << param << "=" << v << " median rd " << medians[0].y.back() << " nn "
        << medians[1].y.back() << '\n';
  }
  write_text(dir / (param + ".svg"),
             svg_line_chart(medians, {"median test AUC", param, "AUC", false}));
}

}  // namespace sard::cli
