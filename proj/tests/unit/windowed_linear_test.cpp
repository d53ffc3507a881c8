#include <doctest.h>

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "sard/evaluation.hpp"
#include "sard/rng.hpp"
#include "sard/windowed_linear.hpp"

using namespace sard;

namespace {

Cohort ab_cohort() {
  Cohort c;
  c.prediction_day = 1000;
  c.vocab = CodeVocab({"A", "B"});
  c.records.push_back({"p", {{900, {"B"}}, {990, {"A"}}}, 1, {}});
  return c;
}

}  // namespace

TEST_CASE("featurize blocks by window") {
  const auto c = ab_cohort();
  const WindowSet w({15, kUnboundedOffset});
  const auto f = featurize(c.records[0], w, c.vocab, c.prediction_day);
  CHECK(f.to_dense() == std::vector<double>{1, 0, 1, 1});
  const WindowSet early({5});
  CHECK(featurize(c.records[0], early, c.vocab, c.prediction_day).active.empty());
}

TEST_CASE("windows are inclusive and multi-hot") {
  Cohort c = ab_cohort();
  c.records[0].visits = {{970, {"A"}}, {980, {"A"}}, {990, {"A"}}};
  const WindowSet w({30});
  CHECK(featurize(c.records[0], w, c.vocab, c.prediction_day).to_dense() == std::vector<double>{1, 0});
  CHECK_THROWS(WindowSet({30, 15}));
  CHECK_THROWS(WindowSet({0}));
}

TEST_CASE("featurize ignores visit order") {
  const auto c = fixtures::small_cohort(30, 6, 6.0);
  const WindowSet w({30, 180, kUnboundedOffset});
  for (const auto& r : c.records) {
    auto shuffled = r;
    std::reverse(shuffled.visits.begin(), shuffled.visits.end());
    CHECK(featurize(r, w, c.vocab, c.prediction_day).active ==
          featurize(shuffled, w, c.vocab, c.prediction_day).active);
  }
}

TEST_CASE("predict_linear") {
  LinearModel m;
  m.weights = {0.0, 0.0};
  m.window_set = WindowSet({kUnboundedOffset});
  FeatureVector x{2, {0}};
  CHECK(predict_linear(m, x) == 0.5);
  m.weights = {std::log(3.0), 0.0};
  CHECK(predict_linear(m, x) == doctest::Approx(0.75).epsilon(1e-15));
  auto rng = make_rng(1, 0);
  for (int t = 0; t < 50; ++t) {
    m.weights = {standard_normal(rng), standard_normal(rng)};
    m.intercept = standard_normal(rng);
    const std::vector<double> dense{1.0, 1.0};
    const double z = m.weights[0] + m.weights[1] + m.intercept;
    CHECK(predict_linear(m, dense) == doctest::Approx(oracle::sigmoid(z)).epsilon(1e-14));
    CHECK(logit_of(predict_linear(m, dense)) == doctest::Approx(z).epsilon(1e-9));
    CHECK(m.logit(FeatureVector{2, {0, 1}}) == doctest::Approx(z).epsilon(1e-12));
  }
  FeatureVector wrong{3, {0}};
  CHECK_THROWS(predict_linear(m, wrong));
}

TEST_CASE("l1 logistic regression on separable data") {
  Matrix x(20, 1);
  std::vector<int> y(20);
  for (int i = 0; i < 20; ++i) {
    x(i, 0) = i % 2 ? 1.0 : -1.0;
    y[i] = i % 2;
  }
  const auto fit = train_l1_logreg(DesignMatrix::dense(x), y, 1e4);
  std::vector<double> p(20);
  for (int i = 0; i < 20; ++i) p[i] = predict_linear(fit.model, x.row(i));
  CHECK(auc_roc(ScoredSet(p, y)) == 1.0);
  for (std::size_t k = 1; k < fit.objective_trace.size(); ++k) {
    CHECK(fit.objective_trace[k] <= fit.objective_trace[k - 1]);
  }
}

TEST_CASE("strong penalty shrinks to the base rate") {
  const auto c = fixtures::small_cohort(200, 8);
  const WindowSet w({30, kUnboundedOffset});
  const auto x = DesignMatrix::sparse_binary(w.size() * c.vocab.size(), featurize_cohort(c, w));
  const auto y = c.labels();
  const auto fit = train_l1_logreg(x, y, 1e-4);
  CHECK(fit.model.nonzero_indices().empty());
  double rate = 0;
  for (int v : y) rate += v;
  rate /= static_cast<double>(y.size());
  CHECK(oracle::sigmoid(fit.model.intercept) == doctest::Approx(rate).epsilon(1e-6));
}

TEST_CASE("l1 solution matches a brute-force grid minimum") {
  Matrix x(8, 2);
  const double xs[8][2] = {{1, 0}, {0.5, 1}, {-1, 0.3}, {0.2, -0.8}, {-0.4, -1}, {1.2, 0.7}, {-0.9, 0.1}, {0.3, 0.4}};
  const std::vector<int> y{1, 1, 0, 0, 0, 1, 0, 1};
  for (int i = 0; i < 8; ++i) x(i, 0) = xs[i][0], x(i, 1) = xs[i][1];
  const auto design = DesignMatrix::dense(x);
  const double lambda = 5.0;
  const auto fit = train_l1_logreg(design, y, lambda);
  double best = std::numeric_limits<double>::infinity();
  for (double w1 = -4; w1 <= 4; w1 += 0.05) {
    for (double w2 = -4; w2 <= 4; w2 += 0.05) {
      for (double b = -2; b <= 2; b += 0.05) {
        const std::vector<double> w{w1, w2};
        best = std::min(best, l1_logreg_objective(design, y, w, b, lambda));
      }
    }
  }
  const double got = l1_logreg_objective(design, y, fit.model.weights, fit.model.intercept, lambda);
  CHECK(got <= best + 1e-4);
}

TEST_CASE("kkt conditions at the solution") {
  const auto c = fixtures::small_cohort(300, 12);
  const WindowSet w({30, kUnboundedOffset});
  const auto x = DesignMatrix::sparse_binary(w.size() * c.vocab.size(), featurize_cohort(c, w));
  const auto y = c.labels();
  const double lambda = 20.0;
  const auto fit = train_l1_logreg(x, y, lambda, {1e-14, 100000});
  std::vector<double> z(x.rows()), r(x.rows()), g(x.cols());
  x.multiply(fit.model.weights, z);
  for (std::size_t i = 0; i < z.size(); ++i) r[i] = (oracle::sigmoid(z[i] + fit.model.intercept) - y[i]) / static_cast<double>(z.size());
  x.multiply_transposed(r, g);
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (fit.model.weights[j] == 0.0) CHECK(std::abs(g[j]) <= 1.0 / lambda + 1e-6);
    else CHECK(g[j] == doctest::Approx(-std::copysign(1.0 / lambda, fit.model.weights[j])).epsilon(1e-3));
  }
}

TEST_CASE("window selection") {
  ClaimsGenParams p;
  p.n_patients = 1500;
  p.vocab_size = 15;
  p.planted_windows = WindowSet({30});
  p.planted_weights = {{0, p.code_name(2), 3.0}, {0, p.code_name(4), 2.5}};
  p.intercept = -2.0;
  const auto c = gen_claims_cohort(p, 4);
  const auto s = split_cohort(c, {0.6, 0.3, 0.1}, 1);
  const std::vector<double> grid{200.0, 2000.0};

  SUBCASE("single subset") {
    const std::vector<int> cand{30, kUnboundedOffset};
    const auto sel = select_windows(cand, 2, s.train, s.validation, grid);
    CHECK(sel.best == WindowSet({30, kUnboundedOffset}));
    CHECK(sel.scores.size() == 1);
  }
  SUBCASE("planted window wins") {
    const std::vector<int> cand{30, 720};
    const auto sel = select_windows(cand, 1, s.train, s.validation, grid);
    CHECK(sel.best == WindowSet({30}));
    CHECK(sel.scores[0].validation_auc > sel.scores[1].validation_auc);
  }
  SUBCASE("ties go to the lexicographic first subset") {
    // Both windows cover the whole history, so their features coincide.
    const std::vector<int> cand{800, 900};
    const auto sel = select_windows(cand, 1, s.train, s.validation, grid);
    REQUIRE(sel.scores[0].validation_auc == sel.scores[1].validation_auc);
    CHECK(sel.best == WindowSet({800}));
  }
  const std::vector<int> cand{30};
  CHECK_THROWS(select_windows(cand, 2, s.train, s.validation, grid));
}

TEST_CASE("linear model json") {
  LinearModel m;
  m.window_set = WindowSet({30, kUnboundedOffset});
  m.weights = {0, 1.5, 0, -2.0};
  m.intercept = 0.25;
  m.lambda = 2.0;
  const auto j = linear_model_to_json(m);
  CHECK(j.at("window_offsets")[1] == "inf");
  const auto back = linear_model_from_json(j, 2);
  CHECK(back.weights == m.weights);
  CHECK(back.intercept == m.intercept);
  CHECK(back.window_set == m.window_set);
}
