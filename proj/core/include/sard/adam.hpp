#pragma once

#include <cstdint>

#include "sard/parameters.hpp"

namespace sard {

struct AdamOptions {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;

  void validate() const;
};

struct AdamState {
  AdamOptions options;
  ParameterSet m;  // first moment
  ParameterSet v;  // second moment
  std::uint64_t step = 0;

  static AdamState init(const ParameterSet& params, AdamOptions options = {});
};

/// Bias-corrected Adam. Updates the moments and returns the parameter delta.
/// Throws DivergenceError on non-finite gradients.
ParameterSet adam_step(AdamState& state, const ParameterSet& grads);

/// adam_step followed by params += delta.
void adam_update(AdamState& state, ParameterSet& params, const ParameterSet& grads);

}  // namespace sard
