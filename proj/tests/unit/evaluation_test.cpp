#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "sard/evaluation.hpp"
#include "sard/rng.hpp"

using namespace sard;

namespace {

ScoredSet random_set(std::size_t n, std::uint64_t seed, double prevalence = 0.4, bool ties = false) {
  auto rng = make_rng(seed, 1);
  ScoredSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = bernoulli(rng, prevalence) ? 1 : 0;
    double v = standard_normal(rng) + 0.8 * y;
    if (ties) v = std::round(v * 2.0) / 2.0;
    s.scores.push_back(v);
    s.labels.push_back(y);
  }
  s.labels[0] = 1;
  s.labels[1] = 0;
  return s;
}

// precision at the first threshold (scanning high to low) whose recall reaches r
double ppv_sweep(const ScoredSet& s, double r) {
  std::vector<double> t = s.scores;
  std::sort(t.begin(), t.end(), std::greater<>());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  double pos = 0;
  for (int y : s.labels) pos += y;
  for (double th : t) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.scores[i] >= th) (s.labels[i] ? tp : fp) += 1;
    }
    if (tp / pos >= r) return tp / (tp + fp);
  }
  return -1;
}

}  // namespace

TEST_CASE("auc_roc trivial cases") {
  CHECK(auc_roc(ScoredSet({0.9, 0.1}, {1, 0})) == 1.0);
  CHECK(auc_roc(ScoredSet({0.3, 0.3, 0.3, 0.3}, {1, 0, 1, 0})) == 0.5);
  CHECK_THROWS(auc_roc(ScoredSet({0.1, 0.2}, {1, 1})));
  CHECK_THROWS(ScoredSet({0.1, 0.2}, {1}));
}

TEST_CASE("auc_roc matches pair counting") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = random_set(50, seed, 0.4, seed % 2 == 1);
    CHECK(auc_roc(s) == doctest::Approx(oracle::auc_pairs(s.scores, s.labels)).epsilon(1e-14));
  }
}

TEST_CASE("auc_roc invariant under monotone transforms") {
  const auto s = random_set(80, 11, 0.3, true);
  ScoredSet t = s;
  for (auto& v : t.scores) v = std::exp(3.0 * v) - 7.0;
  CHECK(auc_roc(t) == auc_roc(s));
}

TEST_CASE("flipping labels complements auc_roc") {
  const auto s = random_set(60, 12);
  ScoredSet f = s;
  for (auto& y : f.labels) y = 1 - y;
  CHECK(auc_roc(s) + auc_roc(f) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("auc_prc cases") {
  CHECK(auc_prc(ScoredSet({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0})) == 1.0);
  CHECK(auc_prc(ScoredSet({0.5, 0.5, 0.5, 0.5, 0.5}, {1, 0, 0, 0, 1})) ==
        doctest::Approx(0.4));
  CHECK_THROWS(auc_prc(ScoredSet({0.1, 0.2}, {0, 0})));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = random_set(50, 100 + seed, 0.3, seed % 2 == 0);
    CHECK(auc_prc(s) == doctest::Approx(oracle::average_precision(s.scores, s.labels)).epsilon(1e-12));
  }
}

TEST_CASE("delong on identical scores") {
  const auto s = random_set(40, 3);
  const auto r = delong_test(s.scores, s.scores, s.labels);
  CHECK(r.z == 0.0);
  CHECK(r.p_value == 1.0);
  CHECK(r.auc_a == doctest::Approx(auc_roc(s)).epsilon(1e-12));
}

TEST_CASE("delong shares the auc estimator") {
  const auto s = random_set(70, 4, 0.5, true);
  auto rng = make_rng(4, 2);
  std::vector<double> b;
  for (double v : s.scores) b.push_back(v + standard_normal(rng));
  const auto r = delong_test(s.scores, b, s.labels);
  CHECK(std::abs(r.auc_a - auc_roc(s)) <= 1e-12);
  CHECK(std::abs(r.auc_b - auc_roc(ScoredSet(b, s.labels))) <= 1e-12);
  CHECK(r.p_value > 0.0);
  CHECK(r.p_value <= 1.0);
  CHECK_THROWS(delong_test(s.scores, std::vector<double>(3, 0.0), s.labels));
}

TEST_CASE("delong p agrees with a paired bootstrap") {
  const auto s = random_set(100, 5, 0.5);
  auto rng = make_rng(5, 3);
  std::vector<double> b;
  for (double v : s.scores) b.push_back(0.6 * v + standard_normal(rng));
  const auto r = delong_test(s.scores, b, s.labels);

  auto boot = make_rng(5, 4);
  std::vector<double> diffs;
  ScoredSet ra, rb;
  while (diffs.size() < 10000) {
    ra.scores.clear(); ra.labels.clear(); rb.scores.clear(); rb.labels.clear();
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto k = uniform_index(boot, s.size());
      ra.scores.push_back(s.scores[k]);
      rb.scores.push_back(b[k]);
      ra.labels.push_back(s.labels[k]);
    }
    rb.labels = ra.labels;
    const auto pos = ra.positives();
    if (pos == 0 || pos == ra.size()) continue;
    diffs.push_back(auc_roc(ra) - auc_roc(rb));
  }
  double mean = 0, var = 0;
  for (double d : diffs) mean += d;
  mean /= diffs.size();
  for (double d : diffs) var += (d - mean) * (d - mean);
  var /= diffs.size() - 1;
  const double zb = (r.auc_a - r.auc_b) / std::sqrt(var);
  const double pb = normal_two_sided_p(zb);
  INFO("delong p " << r.p_value << " bootstrap p " << pb);
  CHECK(std::abs(r.p_value - pb) <= 0.02);
}

TEST_CASE("delong rejection rate under label permutation") {
  const auto s = random_set(200, 6, 0.5);
  auto rng = make_rng(6, 5);
  std::vector<double> b;
  for (double v : s.scores) b.push_back(v + 0.8 * standard_normal(rng));
  auto labels = s.labels;
  int rejected = 0;
  const int trials = 2000;
  for (int t = 0; t < trials; ++t) {
    sard::shuffle(labels.begin(), labels.end(), rng);
    if (delong_test(s.scores, b, labels).p_value < 0.05) ++rejected;
  }
  const double rate = static_cast<double>(rejected) / trials;
  INFO("rate " << rate);
  CHECK(rate >= 0.035);
  CHECK(rate <= 0.065);
}

TEST_CASE("spearman") {
  std::vector<double> x{1, 5, 2, 8, 3};
  std::vector<double> neg;
  for (double v : x) neg.push_back(-v);
  CHECK(spearman(x, x) == doctest::Approx(1.0));
  CHECK(spearman(x, neg) == doctest::Approx(-1.0));
  CHECK_THROWS(spearman(std::vector<double>{1, 2}, std::vector<double>{1, 2}));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto rng = make_rng(seed, 9);
    std::vector<double> a, c;
    for (int i = 0; i < 30; ++i) {
      a.push_back(std::round(standard_normal(rng) * 3));
      c.push_back(a.back() + standard_normal(rng));
    }
    CHECK(std::abs(spearman(a, c) - oracle::spearman(a, c)) <= 1e-12);
  }
}

TEST_CASE("mann_whitney") {
  const std::vector<double> lo{1, 2, 3}, hi{4, 5, 6, 7};
  CHECK(mann_whitney(lo, hi).u == 0.0);
  CHECK(mann_whitney(hi, lo).u == 12.0);
  const std::vector<double> same{1, 2, 2, 3};
  CHECK(mann_whitney(same, same).p_value == doctest::Approx(1.0));
  CHECK_THROWS(mann_whitney(std::vector<double>{}, lo));
  auto rng = make_rng(21, 0);
  std::vector<double> a, b;
  for (int i = 0; i < 20; ++i) {
    a.push_back(std::round(standard_normal(rng) * 2));
    b.push_back(std::round(standard_normal(rng) * 2 + 1));
  }
  const auto r = mann_whitney(a, b);
  CHECK(r.u == oracle::mann_whitney_u(a, b));
  CHECK(r.p_value > 0.0);
  CHECK(r.p_value < 1.0);
}

TEST_CASE("ppv_at_sensitivity") {
  const ScoredSet perfect({0.9, 0.8, 0.7, 0.2, 0.1}, {1, 1, 1, 0, 0});
  for (double r : {0.1, 0.5, 1.0}) CHECK(ppv_at_sensitivity(perfect, r) == 1.0);

  std::vector<int> y(100, 0);
  for (int i = 0; i < 10; ++i) y[i * 10] = 1;
  CHECK(ppv_at_sensitivity(ScoredSet(std::vector<double>(100, 0.4), y), 0.5) ==
        doctest::Approx(0.1));

  CHECK_THROWS(ppv_at_sensitivity(ScoredSet({0.1, 0.2}, {0, 0}), 0.5));
  CHECK_THROWS(ppv_at_sensitivity(perfect, 1.5));

  const auto s = random_set(200, 31, 0.3, true);
  for (double r : {0.05, 0.25, 0.5, 0.75, 0.9, 1.0}) {
    CHECK(ppv_at_sensitivity(s, r) == doctest::Approx(ppv_sweep(s, r)).epsilon(1e-14));
  }
}

TEST_CASE("ppv can rise with sensitivity") {
  // precision is not monotone along the sweep: a top-ranked negative
  // makes the first operating point worse than later ones
  const ScoredSet s({0.9, 0.8, 0.7}, {0, 1, 1});
  CHECK(ppv_at_sensitivity(s, 0.5) == doctest::Approx(0.5));
  CHECK(ppv_at_sensitivity(s, 1.0) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("mcc") {
  const std::vector<int> a{1, 0, 1, 1, 0, 0, 1};
  std::vector<int> na;
  for (int v : a) na.push_back(1 - v);
  CHECK(mcc(a, a) == doctest::Approx(1.0));
  CHECK(mcc(a, na) == doctest::Approx(-1.0));
  CHECK(mcc(std::vector<int>(7, 1), a) == 0.0);
  CHECK_THROWS(mcc(a, std::vector<int>{1}));
  auto rng = make_rng(41, 0);
  for (int t = 0; t < 20; ++t) {
    std::vector<int> x, z;
    for (int i = 0; i < 30; ++i) {
      x.push_back(bernoulli(rng, 0.4));
      z.push_back(bernoulli(rng, 0.6));
    }
    CHECK(mcc(x, z) == mcc(z, x));
    CHECK(mcc(x, z) == doctest::Approx(oracle::mcc(x, z)).epsilon(1e-12));
  }
}

TEST_CASE("curves start and end where expected") {
  const auto s = random_set(40, 51);
  const auto roc = roc_curve(s);
  CHECK(roc.front().x == 0.0);
  CHECK(roc.front().y == 0.0);
  CHECK(roc.back().x == doctest::Approx(1.0));
  CHECK(roc.back().y == doctest::Approx(1.0));
  double area = 0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].x - roc[i - 1].x) * 0.5 * (roc[i].y + roc[i - 1].y);
  }
  CHECK(area == doctest::Approx(auc_roc(s)).epsilon(1e-12));
  const auto pr = pr_curve(s);
  CHECK(pr.back().x == doctest::Approx(1.0));
}

TEST_CASE("report writers") {
  const auto s = random_set(60, 61);
  auto rep = summarize("test", s);
  rep.metadata["split"] = "test";
  CHECK(rep.values.at("auc_roc") == auc_roc(s));
  CHECK(rep.values.at("n") == 60.0);
  const auto dir = std::filesystem::temp_directory_path() / "sard_eval_test";
  std::filesystem::create_directories(dir);
  write_reports_csv(dir / "m.csv", {rep});
  write_reports_json(dir / "m.json", {rep});
  std::ifstream csv(dir / "m.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "report,metric,value");
  std::ifstream js(dir / "m.json");
  const auto j = nlohmann::json::parse(js);
  CHECK(j.is_array());
  CHECK(j.size() == 1);
  std::filesystem::remove_all(dir);
}
