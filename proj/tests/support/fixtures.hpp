#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sard/rng.hpp"
#include "sard/sard_model.hpp"
#include "sard/synthgen.hpp"

namespace fixtures {

// Small claims generator: 12 codes, a handful of visits per patient.
inline sard::ClaimsGenParams small_params(std::size_t patients, double mean_visits = 4.0) {
  sard::ClaimsGenParams p;
  p.n_patients = patients;
  p.vocab_size = 12;
  p.mean_visits = mean_visits;
  p.mean_codes_per_visit = 2.0;
  p.history_span_days = 500;
  p.planted_windows = sard::WindowSet({30, sard::kUnboundedOffset});
  p.planted_weights = {{0, p.code_name(1), 2.0}, {1, p.code_name(3), -1.0}};
  p.intercept = -0.5;
  p.n_subgroups = 2;
  return p;
}

inline sard::Cohort small_cohort(std::size_t patients, std::uint64_t seed, double mean_visits = 4.0) {
  return sard::gen_claims_cohort(small_params(patients, mean_visits), seed);
}

inline sard::SardConfig tiny_config(sard::EncoderVariant enc, sard::HeadVariant head) {
  sard::SardConfig c;
  c.embedding_dim = 8;
  c.max_visits = 6;
  c.layers = 2;
  c.heads = 2;
  c.kernels = 2;
  c.dropout = 0.0;
  c.encoder = enc;
  c.head = head;
  return c;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Compares model_gradient with central differences on every parameter.
// Relative error uses max(|analytic|, |numeric|, floor) as denominator.
inline GradCheck gradient_check(sard::SardModel model, std::span<const sard::Example> batch,
                                const sard::LossSpec& loss, double h, double floor) {
  const auto analytic = sard::model_gradient(model, batch, loss).gradient;
  GradCheck out;
  auto& params = model.parameters();
  for (std::size_t t = 0; t < params.count(); ++t) {
    for (std::size_t k = 0; k < params[t].size(); ++k) {
      double& v = params[t].values[k];
      const double numeric =
          oracle::central_difference([&] { return sard::model_loss(model, batch, loss); }, v, h);
      const double a = analytic[t].values[k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, rel);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace fixtures
