#include "sard/adam.hpp"

#include <cmath>
#include <stdexcept>

#include "sard/errors.hpp"

namespace sard {

void AdamOptions::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
}

AdamState AdamState::init(const ParameterSet& params, AdamOptions options) {
  options.validate();
  return {options, params.zeros_like(), params.zeros_like(), 0};
}

ParameterSet adam_step(AdamState& s, const ParameterSet& grads) {
  if (!s.m.same_layout(grads)) throw std::invalid_argument("gradient layout does not match the optimizer");
  if (!grads.all_finite()) throw DivergenceError("non-finite gradient");
  ++s.step;
  const auto& o = s.options;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(s.step));
  ParameterSet delta = grads.zeros_like();
  for (std::size_t i = 0; i < grads.count(); ++i) {
    const auto& g = grads[i].values;
    auto& m = s.m[i].values;
    auto& v = s.v[i].values;
    auto& d = delta[i].values;
    for (std::size_t k = 0; k < g.size(); ++k) {
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g[k];
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g[k] * g[k];
      d[k] = -o.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + o.epsilon);
    }
  }
  return delta;
}

void adam_update(AdamState& state, ParameterSet& params, const ParameterSet& grads) {
  params.add_scaled(adam_step(state, grads), 1.0);
}

}  // namespace sard
