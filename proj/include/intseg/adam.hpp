#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace intseg {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators and the step counter of one Adam instance.
struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  static OptimizerState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// One bias-corrected Adam update, in place. An empty state is sized to the
/// parameters on first use; any other shape disagreement throws, as do
/// non-finite gradients (before anything is modified).
void adam_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
               double lr, const AdamHyper& hyper = {});

}  // namespace intseg
