#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "sard/errors.hpp"
#include "sard/sard_model.hpp"

using namespace sard;

namespace {

PackedVisits packed(std::vector<std::vector<std::size_t>> codes, std::vector<int> elapsed, std::size_t slots) {
  PackedVisits p;
  p.codes.assign(slots, {});
  p.elapsed.assign(slots, 0);
  p.mask.assign(slots, 0);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    p.codes[i] = codes[i];
    p.elapsed[i] = elapsed[i];
    p.mask[i] = 1;
  }
  return p;
}

const EncoderVariant kEncoders[] = {EncoderVariant::self_attention, EncoderVariant::gru,
                                    EncoderVariant::identity};
const HeadVariant kHeads[] = {HeadVariant::conv, HeadVariant::summing};

}  // namespace

TEST_CASE("embed_visit sums one-hot rows") {
  const std::size_t d = 6;
  std::vector<double> phi(4 * d, 0.0);
  for (std::size_t c = 0; c < 4; ++c) phi[c * d + c] = 1.0;
  const std::vector<std::size_t> codes{0, 2};
  const auto psi = embed_visit(codes, phi, d);
  CHECK(psi == std::vector<double>{1, 0, 1, 0, 0, 0});
  const std::vector<std::size_t> swapped{2, 0};
  CHECK(embed_visit(swapped, phi, d) == psi);
}

TEST_CASE("embed_visit matches per-code summation") {
  auto rng = make_rng(3, 0);
  const std::size_t d = 10, v = 20;
  std::vector<double> phi(v * d);
  for (auto& x : phi) x = standard_normal(rng);
  const std::vector<std::size_t> codes{1, 4, 7, 11, 19};
  const auto psi = embed_visit(codes, phi, d);
  for (std::size_t i = 0; i < d; ++i) {
    double s = 0.0;
    for (auto c : codes) s += phi[c * d + i];
    CHECK(psi[i] == doctest::Approx(s).epsilon(1e-12));
  }
  const std::vector<std::size_t> bad{20};
  CHECK_THROWS(embed_visit(bad, phi, d));
}

TEST_CASE("temporal_embed") {
  const std::vector<double> omega{1e-5, 1.0};
  SUBCASE("same day") {
    const auto tau = temporal_embed(100, 100, omega);
    CHECK(tau == std::vector<double>{0.0, 0.0, 1.0, 1.0});
  }
  SUBCASE("clipped") { CHECK(temporal_embed(0, 1000, omega) == temporal_embed(635, 1000, omega)); }
  SUBCASE("direct trig") {
    const auto tau = temporal_embed(0, 365, omega);
    CHECK(tau[0] == doctest::Approx(std::sin(0.00365)).epsilon(1e-14));
    CHECK(tau[1] == doctest::Approx(std::sin(365.0)).epsilon(1e-14));
    CHECK(tau[2] == doctest::Approx(std::cos(0.00365)).epsilon(1e-14));
    CHECK(tau[3] == doctest::Approx(std::cos(365.0)).epsilon(1e-14));
  }
  CHECK_THROWS(temporal_embed(5, 4, omega));
}

TEST_CASE("default frequencies are geometric") {
  const auto w = geometric_frequencies(16);
  CHECK(w.front() == doctest::Approx(1e-5));
  CHECK(w.back() == 1.0);
  for (std::size_t i = 2; i < w.size(); ++i) {
    CHECK(w[i] / w[i - 1] == doctest::Approx(w[1] / w[0]).epsilon(1e-10));
  }
}

TEST_CASE("config validation") {
  SardConfig c;
  c.embedding_dim = 7;
  CHECK_THROWS(c.validate());
  c.embedding_dim = 6;
  c.heads = 4;
  CHECK_THROWS(c.validate());
  c.encoder = EncoderVariant::gru;
  CHECK_NOTHROW(c.validate());
  c.omega = {1.0, -1.0, 0.5};
  CHECK_THROWS(c.validate());
  c.omega = {1.0, 0.0, 0.5};
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("pack_patient keeps the most recent visits first") {
  const auto cohort = fixtures::small_cohort(30, 5, 9.0);
  const auto& r = *std::find_if(cohort.records.begin(), cohort.records.end(),
                                [](const auto& p) { return p.visits.size() > 6; });
  const auto p = pack_patient(r, cohort.vocab, cohort.prediction_day, 6);
  CHECK(p.active() == 6);
  CHECK(p.elapsed[0] == std::min(365, cohort.prediction_day - r.visits.back().day));
  for (std::size_t s = 1; s < 6; ++s) CHECK(p.elapsed[s] >= p.elapsed[s - 1]);
  PatientRecord empty{"x", {}, 0, {}};
  CHECK_THROWS_AS(pack_patient(empty, cohort.vocab, cohort.prediction_day, 6), DataError);
}

TEST_CASE("identity encoder is the identity map") {
  const auto cohort = fixtures::small_cohort(5, 1);
  auto cfg = fixtures::tiny_config(EncoderVariant::identity, HeadVariant::conv);
  const auto m = SardModel::random(cfg, cohort.vocab.size(), 2);
  const auto p = pack_patient(cohort.records[0], cohort.vocab, cohort.prediction_day, 6);
  const auto x = m.input_embeddings(p);
  CHECK(encode(x, p.mask, m, {true, 9}) == x);
}

TEST_CASE("attention rows are normalized and pads get zero weight") {
  auto cfg = fixtures::tiny_config(EncoderVariant::self_attention, HeadVariant::conv);
  const auto m = SardModel::random(cfg, 12, 4);
  const auto p = packed({{1, 2}, {3}, {5, 7}}, {3, 40, 200}, 6);
  AttentionMaps maps;
  encode(m.input_embeddings(p), p.mask, m, {}, &maps);
  REQUIRE(maps.size() == cfg.layers * cfg.heads);
  for (const auto& a : maps) {
    for (std::size_t i = 0; i < 6; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        if (!p.mask[j] || !p.mask[i]) CHECK(a(i, j) == 0.0);
        row += a(i, j);
      }
      if (p.mask[i]) CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("equal keys give uniform attention") {
  auto cfg = fixtures::tiny_config(EncoderVariant::self_attention, HeadVariant::conv);
  auto m = SardModel::random(cfg, 12, 4);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      std::fill(m.parameters()[m.attention(l, h).wk].values.begin(),
                m.parameters()[m.attention(l, h).wk].values.end(), 0.0);
    }
  }
  const auto p = packed({{1}, {3}, {5}, {0}}, {3, 40, 200, 10}, 6);
  AttentionMaps maps;
  encode(m.input_embeddings(p), p.mask, m, {}, &maps);
  for (const auto& a : maps) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(a(0, j) == doctest::Approx(0.25).epsilon(1e-14));
  }
}

TEST_CASE("single visit attends to itself") {
  auto cfg = fixtures::tiny_config(EncoderVariant::self_attention, HeadVariant::conv);
  const auto m = SardModel::random(cfg, 12, 7);
  const auto p = packed({{2}}, {10}, 6);
  AttentionMaps maps;
  encode(m.input_embeddings(p), p.mask, m, {}, &maps);
  for (const auto& a : maps) {
    CHECK(a(0, 0) == 1.0);
    for (std::size_t j = 1; j < 6; ++j) CHECK(a(0, j) == 0.0);
  }
}

TEST_CASE("conv head scalar example") {
  SardConfig cfg = fixtures::tiny_config(EncoderVariant::identity, HeadVariant::conv);
  cfg.kernels = 1;
  SardModel m(cfg, 3);
  m.parameters()[m.kernels_index()].values[0] = 1.0;
  m.parameters()[m.head_weight_index()].values[0] = 1.0;
  Matrix psi(6, 8);
  psi(0, 0) = 0.3;
  psi(1, 0) = 0.9;
  psi(4, 0) = 50.0;  // pad
  const std::vector<std::uint8_t> mask{1, 1, 0, 0, 0, 0};
  const double expected = oracle::sigmoid(oracle::sigmoid(0.9));
  CHECK(head_forward(psi, mask, m) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected == doctest::Approx(0.6706).epsilon(1e-4));
  psi(4, 0) = -50.0;
  CHECK(head_forward(psi, mask, m) == doctest::Approx(expected).epsilon(1e-14));
  const std::vector<std::uint8_t> none(6, 0);
  CHECK_THROWS(head_forward(psi, none, m));
}

TEST_CASE("max-pool ties go to the lowest slot") {
  SardConfig cfg = fixtures::tiny_config(EncoderVariant::identity, HeadVariant::conv);
  cfg.kernels = 1;
  SardModel m(cfg, 3);
  m.parameters()[m.kernels_index()].values[0] = 1.0;
  Matrix psi(6, 8);
  psi(1, 0) = 2.0;
  psi(3, 0) = 2.0;
  const std::vector<std::uint8_t> mask{1, 1, 1, 1, 0, 0};
  CHECK(head_forward_detailed(psi, mask, m).argmax[0] == 1);
}

TEST_CASE("summing head with zero inputs is one half") {
  SardConfig cfg = fixtures::tiny_config(EncoderVariant::identity, HeadVariant::summing);
  const auto m = SardModel::random(cfg, 3, 1);
  SardModel z = m;
  z.parameters()[z.head_bias_index()].values[0] = 0.0;
  const Matrix psi(6, 8);
  const std::vector<std::uint8_t> mask{1, 1, 0, 0, 0, 0};
  CHECK(head_forward(psi, mask, z) == 0.5);
}

TEST_CASE("zero identity-summing model predicts one half") {
  const auto cohort = fixtures::small_cohort(20, 3);
  SardModel m(fixtures::tiny_config(EncoderVariant::identity, HeadVariant::summing), cohort.vocab.size());
  for (const auto& r : cohort.records) CHECK(model_forward(m, r, cohort) == 0.5);
}

TEST_CASE("forward is invariant to code order and pad contents") {
  const auto cohort = fixtures::small_cohort(10, 8);
  for (auto enc : kEncoders) {
    auto cfg = fixtures::tiny_config(enc, HeadVariant::conv);
    const auto m = SardModel::random(cfg, cohort.vocab.size(), 11);
    for (const auto& r : cohort.records) {
      auto p = pack_patient(r, cohort.vocab, cohort.prediction_day, 6);
      const double base = forward_packed(m, p).probability;
      for (auto& codes : p.codes) std::reverse(codes.begin(), codes.end());
      for (std::size_t s = 0; s < p.slots(); ++s) {
        if (!p.mask[s]) {
          p.codes[s] = {0, 1, 2};
          p.elapsed[s] = 17;
        }
      }
      CHECK(forward_packed(m, p).probability == base);
    }
  }
}

TEST_CASE("attention output is equivariant to visit permutation") {
  auto cfg = fixtures::tiny_config(EncoderVariant::self_attention, HeadVariant::conv);
  const auto m = SardModel::random(cfg, 12, 21);
  const auto a = packed({{1, 2}, {3}, {5, 7}, {9}}, {3, 40, 200, 300}, 6);
  const auto b = packed({{5, 7}, {9}, {1, 2}, {3}}, {200, 300, 3, 40}, 6);
  CHECK(forward_packed(m, a).probability == doctest::Approx(forward_packed(m, b).probability).epsilon(1e-13));
  const auto ea = encode(m.input_embeddings(a), a.mask, m);
  const auto eb = encode(m.input_embeddings(b), b.mask, m);
  for (std::size_t k = 0; k < 8; ++k) CHECK(ea(0, k) == doctest::Approx(eb(2, k)).epsilon(1e-12));
}

TEST_CASE("dropout off in inference and with probability zero") {
  const auto cohort = fixtures::small_cohort(6, 2);
  auto cfg = fixtures::tiny_config(EncoderVariant::self_attention, HeadVariant::conv);
  const auto p = pack_patient(cohort.records[0], cohort.vocab, cohort.prediction_day, 6);
  const auto m0 = SardModel::random(cfg, cohort.vocab.size(), 5);
  CHECK(forward_packed(m0, p, {true, 1}).probability == forward_packed(m0, p).probability);
  cfg.dropout = 0.5;
  const auto m1 = SardModel::random(cfg, cohort.vocab.size(), 5);
  CHECK(forward_packed(m1, p, {true, 1}).probability == forward_packed(m1, p, {true, 1}).probability);
  CHECK(forward_packed(m1, p, {true, 1}).probability != forward_packed(m1, p).probability);
}

TEST_CASE("gradients match central differences for every variant") {
  const auto cohort = fixtures::small_cohort(8, 13, 5.0);
  std::vector<PackedVisits> packs;
  for (const auto& r : cohort.records) packs.push_back(pack_patient(r, cohort.vocab, cohort.prediction_day, 6));
  std::vector<Example> batch;
  for (std::size_t i = 0; i < packs.size(); ++i) {
    batch.push_back({&packs[i], cohort.records[i].label, 0.2 + 0.07 * static_cast<double>(i)});
  }
  const LossSpec losses[] = {{LossKind::rd, 2.0, 0.0}, {LossKind::ce, 1.5, 0.0}, {LossKind::tune, 3.0, 0.15}};
  for (auto enc : kEncoders) {
    for (auto head : kHeads) {
      for (const auto& loss : losses) {
        const auto m = SardModel::random(fixtures::tiny_config(enc, head), cohort.vocab.size(), 99);
        const auto g = fixtures::gradient_check(m, batch, loss, 1e-5, 1e-6);
        INFO(to_string(enc), " ", to_string(head), " ", to_string(loss.kind));
        CHECK(g.max_rel_error <= 1e-4);
      }
    }
  }
}

TEST_CASE("zero final weights give zero kernel gradients") {
  const auto cohort = fixtures::small_cohort(4, 13);
  auto m = SardModel::random(fixtures::tiny_config(EncoderVariant::self_attention, HeadVariant::conv),
                             cohort.vocab.size(), 3);
  m.parameters()[m.head_weight_index()].values.assign(2, 0.0);
  const auto p = pack_patient(cohort.records[0], cohort.vocab, cohort.prediction_day, 6);
  const Example ex{&p, 1, 0.5};
  const auto g = model_gradient(m, std::span(&ex, 1), {LossKind::ce, 1.0, 0.0});
  for (double v : g.gradient[m.kernels_index()].values) CHECK(v == 0.0);
  CHECK(g.gradient[m.head_bias_index()].values[0] != 0.0);
}

TEST_CASE("a small step against the gradient lowers the loss") {
  const auto cohort = fixtures::small_cohort(10, 17);
  std::vector<PackedVisits> packs;
  std::vector<Example> batch;
  for (const auto& r : cohort.records) packs.push_back(pack_patient(r, cohort.vocab, cohort.prediction_day, 6));
  for (std::size_t i = 0; i < packs.size(); ++i) batch.push_back({&packs[i], cohort.records[i].label, 0.3});
  const LossSpec loss{LossKind::tune, 2.0, 0.1};
  auto m = SardModel::random(fixtures::tiny_config(EncoderVariant::self_attention, HeadVariant::conv),
                             cohort.vocab.size(), 8);
  const auto g = model_gradient(m, batch, loss);
  m.parameters().add_scaled(g.gradient, -1e-3);
  CHECK(model_loss(m, batch, loss) < g.loss);
}

TEST_CASE("checkpoint round trip is bit exact") {
  auto cfg = fixtures::tiny_config(EncoderVariant::gru, HeadVariant::summing);
  auto m = SardModel::random(cfg, 12, 31);
  m.parameters()[0].values[0] = -0.0;
  m.parameters()[0].values[1] = 1e-310;
  const auto path = std::filesystem::temp_directory_path() / "sard_ckpt_test.json";
  m.save(path);
  const auto back = SardModel::load(path);
  CHECK(back == m);
  CHECK(std::signbit(back.parameters()[0].values[0]));
  std::filesystem::remove(path);
  auto j = m.to_json();
  j["parameters"][0]["shape"][0] = 13;
  CHECK_THROWS_AS(SardModel::from_json(j), DataError);
}

TEST_CASE("cooccurrence initializer") {
  const auto cohort = fixtures::small_cohort(200, 4);
  const auto e = cooccurrence_embeddings(cohort, 8);
  CHECK(e.rows() == cohort.vocab.size());
  CHECK(e.cols() == 8);
  double sq = 0.0;
  for (double v : e.data()) sq += v * v;
  CHECK(sq / static_cast<double>(e.rows()) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(cooccurrence_embeddings(cohort, 8) == e);
}
