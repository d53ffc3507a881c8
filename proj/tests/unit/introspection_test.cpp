#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "sard/introspection.hpp"
#include "sard/synthgen.hpp"

using namespace sard;

namespace {

PackedVisits packed(std::vector<std::vector<std::size_t>> codes, std::size_t slots) {
  PackedVisits p;
  p.codes.assign(slots, {});
  p.elapsed.assign(slots, 0);
  p.mask.assign(slots, 0);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    p.codes[i] = codes[i];
    p.elapsed[i] = static_cast<int>(10 * i + 3);
    p.mask[i] = 1;
  }
  return p;
}

// identity encoder, one kernel reading dimension 0; dimension 0 carries no time signal
SardModel scalar_model() {
  SardConfig c;
  c.embedding_dim = 4;
  c.max_visits = 8;
  c.layers = 1;
  c.heads = 1;
  c.kernels = 1;
  c.dropout = 0.0;
  c.encoder = EncoderVariant::identity;
  c.head = HeadVariant::conv;
  c.omega = {0.0, 0.01};
  SardModel m(c, 2);
  m.phi().values[0 * 4 + 0] = -1.0;  // code 0
  m.parameters()[m.kernels_index()].values[0] = 1.0;
  m.parameters()[m.head_weight_index()].values[0] = 2.0;
  m.parameters()[m.head_bias_index()].values[0] = -0.3;
  return m;
}

}  // namespace

TEST_CASE("single kernel credits its winning visit") {
  const auto m = scalar_model();
  const auto v = packed({{0}, {0}, {0}, {1}, {0}}, 8);
  const auto vi = visit_importance(m, v);
  REQUIRE(vi.scores.size() == 8);
  for (std::size_t j = 0; j < 8; ++j) CHECK(vi.scores[j] == (j == 3 ? 1.0 : 0.0));
  REQUIRE(vi.kernels.size() == 1);
  CHECK(vi.kernels[0].visit == 3);
  CHECK(vi.kernels[0].chi == 0.0);
  CHECK(vi.kernels[0].weight == 2.0);
  CHECK(vi.bias == -0.3);
  CHECK(vi.logit == doctest::Approx(0.7));
}

TEST_CASE("max-pool ties credit the earliest slot") {
  const auto m = scalar_model();
  const auto vi = visit_importance(m, packed({{0}, {1}, {1}}, 8));
  CHECK(vi.kernels[0].visit == 1);
  CHECK(vi.scores[1] == 1.0);
  CHECK(vi.scores[2] == 0.0);
}

TEST_CASE("visit importance sums to the logit minus bias") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cfg = fixtures::tiny_config(EncoderVariant::self_attention, HeadVariant::conv);
    cfg.kernels = 5;
    const auto m = SardModel::random(cfg, 12, seed);
    const auto v = packed({{1, 2}, {3}, {4, 5, 6}, {0}}, cfg.max_visits);
    const auto vi = visit_importance(m, v);
    for (std::size_t j = 4; j < cfg.max_visits; ++j) CHECK(vi.scores[j] == 0.0);
    const auto h = forward_packed(m, v);
    CHECK(std::abs(vi.total() - (h.logit - vi.bias)) <= 1e-10);
    double ks = 0;
    for (const auto& k : vi.kernels) ks += k.weight * oracle::sigmoid(k.chi);
    CHECK(std::abs(vi.total() - ks) <= 1e-12);
    CHECK(vi.logit == doctest::Approx(h.logit).epsilon(1e-12));
  }
}

TEST_CASE("visit importance needs the conv head") {
  const auto cfg = fixtures::tiny_config(EncoderVariant::self_attention, HeadVariant::summing);
  const auto m = SardModel::random(cfg, 12, 1);
  CHECK_THROWS(visit_importance(m, packed({{1}}, cfg.max_visits)));
}

TEST_CASE("attention maps") {
  const auto cfg = fixtures::tiny_config(EncoderVariant::self_attention, HeadVariant::conv);
  const auto m = SardModel::random(cfg, 12, 2);

  const auto one = attention_maps(m, packed({{4}}, cfg.max_visits));
  REQUIRE(one.size() == cfg.layers * cfg.heads);
  for (const auto& a : one) {
    CHECK(a(0, 0) == 1.0);
    for (std::size_t r = 0; r < cfg.max_visits; ++r) {
      for (std::size_t c = 0; c < cfg.max_visits; ++c) {
        if (r != 0 || c != 0) CHECK(a(r, c) == 0.0);
      }
    }
  }

  const auto v = packed({{1, 2}, {3}, {7}}, cfg.max_visits);
  const auto maps = attention_maps(m, v);
  for (const auto& a : maps) {
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 3; ++c) s += a(r, c);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      for (std::size_t c = 3; c < cfg.max_visits; ++c) CHECK(a(r, c) == 0.0);
    }
  }
  const auto again = attention_maps(m, v);
  for (std::size_t i = 0; i < maps.size(); ++i) CHECK(maps[i].data() == again[i].data());

  const auto gru = SardModel::random(fixtures::tiny_config(EncoderVariant::gru, HeadVariant::conv), 12, 3);
  CHECK_THROWS(attention_maps(gru, v));
}

TEST_CASE("feature names") {
  const auto cohort = fixtures::small_cohort(5, 1);
  const WindowSet w({30, kUnboundedOffset});
  const auto n = cohort.vocab.size();
  CHECK(feature_name(0, w, cohort.vocab) == cohort.vocab.code(0) + "@30");
  CHECK(feature_name(n + 2, w, cohort.vocab) == cohort.vocab.code(2) + "@inf");
  CHECK_THROWS(feature_name(2 * n, w, cohort.vocab));
}

TEST_CASE("dissection is invariant to patient order") {
  const auto params = fixtures::small_params(150);
  const auto cohort = gen_claims_cohort(params, 4);
  const auto teacher = planted_linear_model(params);
  auto cfg = fixtures::tiny_config(EncoderVariant::self_attention, HeadVariant::conv);
  cfg.kernels = 4;
  const auto m = SardModel::random(cfg, cohort.vocab.size(), 5);
  auto reversed = cohort;
  std::reverse(reversed.records.begin(), reversed.records.end());
  const auto a = dissect(m, teacher, cohort);
  const auto b = dissect(m, teacher, reversed);
  CHECK(a.mcc == b.mcc);
  CHECK(a.unique_matched == b.unique_matched);
  REQUIRE(a.neurons.size() == 4);
  CHECK(a.features == teacher.nonzero_indices());
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(a.neurons[k].feature == b.neurons[k].feature);
    if (a.neurons[k].feature) {
      CHECK(a.neurons[k].mcc > 0.0);
      CHECK(std::find(a.features.begin(), a.features.end(), *a.neurons[k].feature) != a.features.end());
    }
  }
  CHECK(a.percentage == doctest::Approx(100.0 * a.unique_matched / a.features.size()));

  std::ostringstream out;
  write_dissection_csv(out, a);
  CHECK(out.str().rfind("neuron,feature_index,feature_name,window_offset,mcc\n", 0) == 0);
  std::ostringstream top;
  write_topk_csv(top, a, teacher, cohort.vocab, 2);
  CHECK(top.str().rfind("neuron,rank,feature_index,feature_name,weight,mcc\n", 0) == 0);
}

TEST_CASE("median binarization balances each neuron") {
  const auto params = fixtures::small_params(120);
  const auto cohort = gen_claims_cohort(params, 6);
  const auto teacher = planted_linear_model(params);
  auto cfg = fixtures::tiny_config(EncoderVariant::gru, HeadVariant::conv);
  cfg.kernels = 3;
  const auto m = SardModel::random(cfg, cohort.vocab.size(), 7);
  const auto half = dissect(m, teacher, cohort);
  const auto med = dissect(m, teacher, cohort, {Binarization::median, 0.0});
  CHECK(half.features == med.features);
  CHECK(half.neurons.size() == med.neurons.size());
  const auto bits = binarized_activations(m, cohort, Binarization::median);
  for (std::size_t k = 0; k < cfg.kernels; ++k) {
    std::size_t on = 0;
    for (const auto& row : bits) on += row[k];
    CHECK(on <= bits.size() / 2 + 1);
  }
}

TEST_CASE("random models barely correlate with linear features") {
  double total = 0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto params = fixtures::small_params(200);
    const auto cohort = gen_claims_cohort(params, 100 + seed);
    const auto teacher = planted_linear_model(params);
    auto cfg = fixtures::tiny_config(EncoderVariant::self_attention, HeadVariant::conv);
    cfg.kernels = 4;
    const auto m = SardModel::random(cfg, cohort.vocab.size(), 200 + seed);
    const auto r = dissect(m, teacher, cohort);
    for (const auto& row : r.mcc) {
      for (double v : row) {
        total += std::abs(v);
        ++count;
      }
    }
  }
  const double mean = total / static_cast<double>(count);
  INFO("mean |mcc| " << mean);
  CHECK(mean < 0.2);
}

TEST_CASE("dissection rejects an empty teacher") {
  const auto cohort = fixtures::small_cohort(20, 8);
  LinearModel zero;
  zero.window_set = WindowSet({30});
  zero.weights.assign(cohort.vocab.size(), 0.0);
  const auto m = SardModel::random(fixtures::tiny_config(EncoderVariant::identity, HeadVariant::conv),
                                   cohort.vocab.size(), 9);
  CHECK_THROWS(dissect(m, zero, cohort));
  const auto s = SardModel::random(fixtures::tiny_config(EncoderVariant::identity, HeadVariant::summing),
                                   cohort.vocab.size(), 9);
  CHECK_THROWS(dissect(s, planted_linear_model(fixtures::small_params(20)), cohort));
}
