#include "intseg/losses.hpp"

#include <algorithm>
#include <cmath>

namespace intseg {

BalancedWeights balanced_weights(const TriMask& target) {
  BalancedWeights w;
  for (auto v : target.data()) {
    if (v == 1) {
      ++w.positives;
    } else if (v == 0) {
      ++w.negatives;
    }
  }
  if (w.positives == 0 && w.negatives == 0) {
    throw EmptyTarget("loss target has no labeled pixel");
  }
  if (w.positives > 0) w.positive_weight = 1.0 / static_cast<double>(w.positives);
  if (w.negatives > 0) w.negative_weight = 1.0 / static_cast<double>(w.negatives);
  return w;
}

double sparse_bce(const ProbMap& pred, const TriMask& target) {
  require_same_shape(pred, target, "sparse_bce");
  const BalancedWeights w = balanced_weights(target);
  double pos_sum = 0.0;
  double neg_sum = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto t = target[i];
    if (t == kIgnore) continue;
    const double p = std::clamp(pred[i], kProbClamp, 1.0 - kProbClamp);
    if (t == 1) {
      pos_sum -= std::log(p);
    } else {
      neg_sum -= std::log(1.0 - p);
    }
  }
  return pos_sum * w.positive_weight + neg_sum * w.negative_weight;
}

double dense_pseudo_bce(const ProbMap& pred, const TriMask& pseudo) { return sparse_bce(pred, pseudo); }

double balanced_bce_logit_grad(double p, bool positive, const BalancedWeights& w) {
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  // d(-log p)/dz = -(1 - p); d(-log(1 - p))/dz = p
  return positive ? -(1.0 - p) * w.positive_weight : p * w.negative_weight;
}

}  // namespace intseg
