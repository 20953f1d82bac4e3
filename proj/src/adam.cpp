#include "intseg/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace intseg {

void adam_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
               double lr, const AdamHyper& hyper) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adam_step: gradient size " + std::to_string(grads.size()) +
                                " does not match parameter size " +
                                std::to_string(params.size()));
  }
  if (state.m.empty() && state.v.empty()) {
    state = OptimizerState::zeros(params.size());
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state shape does not match parameters");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw std::domain_error("adam_step: non-finite gradient");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
}

}  // namespace intseg
