#include <benchmark/benchmark.h>

#include <vector>

#include "sard/evaluation.hpp"
#include "sard/rng.hpp"
#include "sard/sard_model.hpp"
#include "sard/synthgen.hpp"
#include "sard/training.hpp"
#include "sard/windowed_linear.hpp"

namespace {

struct Fixture {
  sard::Cohort cohort;
  sard::PreparedSet set;
  sard::SardModel model;
};

Fixture make_fixture(std::size_t d, std::size_t nv, sard::EncoderVariant enc) {
  auto params = sard::default_claims_params();
  params.n_patients = 200;
  auto cohort = sard::gen_claims_cohort(params, 1);
  sard::SardConfig c;
  c.embedding_dim = d;
  c.max_visits = nv;
  c.layers = 2;
  c.heads = 2;
  c.kernels = 10;
  c.encoder = enc;
  auto set = sard::prepare_set(cohort, c, nullptr);
  auto model = sard::SardModel::random(c, cohort.vocab.size(), 2);
  return {std::move(cohort), std::move(set), std::move(model)};
}

void BM_Forward(benchmark::State& state) {
  const auto f = make_fixture(state.range(0), state.range(1), sard::EncoderVariant::self_attention);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(sard::forward_packed(f.model, f.set.visits[i++ % f.set.size()]));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Forward)->Args({16, 16})->Args({32, 32})->Args({32, 64});

void BM_GradientBatch(benchmark::State& state) {
  const auto enc = static_cast<sard::EncoderVariant>(state.range(0));
  const auto f = make_fixture(32, 32, enc);
  auto ex = f.set.examples();
  ex.resize(50);
  const sard::LossSpec loss{sard::LossKind::tune, 3.0, 0.1};
  for (auto _ : state) {
    benchmark::DoNotOptimize(sard::model_gradient(f.model, ex, loss, {true, 7}));
  }
  state.SetItemsProcessed(state.iterations() * ex.size());
}
BENCHMARK(BM_GradientBatch)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_AucRoc(benchmark::State& state) {
  auto rng = sard::make_rng(3, 0);
  sard::ScoredSet s;
  for (int64_t i = 0; i < state.range(0); ++i) {
    s.labels.push_back(sard::bernoulli(rng, 0.1));
    s.scores.push_back(sard::standard_normal(rng) + s.labels.back());
  }
  s.labels[0] = 1;
  s.labels[1] = 0;
  for (auto _ : state) benchmark::DoNotOptimize(sard::auc_roc(s));
}
BENCHMARK(BM_AucRoc)->Arg(1000)->Arg(100000);

void BM_DeLong(benchmark::State& state) {
  auto rng = sard::make_rng(4, 0);
  std::vector<double> a, b;
  std::vector<int> y;
  for (int64_t i = 0; i < state.range(0); ++i) {
    y.push_back(sard::bernoulli(rng, 0.2));
    a.push_back(sard::standard_normal(rng) + y.back());
    b.push_back(a.back() + sard::standard_normal(rng));
  }
  y[0] = 1;
  y[1] = 0;
  for (auto _ : state) benchmark::DoNotOptimize(sard::delong_test(a, b, y));
}
BENCHMARK(BM_DeLong)->Arg(1000)->Arg(20000);

void BM_L1Fit(benchmark::State& state) {
  auto params = sard::default_claims_params();
  params.n_patients = static_cast<std::size_t>(state.range(0));
  const auto cohort = sard::gen_claims_cohort(params, 5);
  const sard::WindowSet w({30, 180, sard::kUnboundedOffset});
  const auto x = sard::DesignMatrix::sparse_binary(w.size() * cohort.vocab.size(),
                                                   sard::featurize_cohort(cohort, w));
  std::vector<int> y;
  for (const auto& r : cohort.records) y.push_back(r.label);
  for (auto _ : state) benchmark::DoNotOptimize(sard::train_l1_logreg(x, y, 200.0, {1e-8, 5000}));
}
BENCHMARK(BM_L1Fit)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
