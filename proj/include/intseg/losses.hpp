#pragma once

#include <cstddef>
#include <stdexcept>

#include "intseg/types.hpp"

namespace intseg {

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] inside the logs.
inline constexpr double kProbClamp = 1e-7;

/// Thrown when a loss target has no labeled pixel.
class EmptyTarget : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Per-class normalisers of the class-balanced cross-entropy. A class with no
/// labeled pixel gets weight 0, which drops its term.
struct BalancedWeights {
  std::size_t positives = 0;
  std::size_t negatives = 0;
  double positive_weight = 0.0;
  double negative_weight = 0.0;
};

BalancedWeights balanced_weights(const TriMask& target);

/// Mean BCE over target-1 pixels plus mean BCE over target-0 pixels;
/// -1 pixels are ignored. Throws EmptyTarget if nothing is labeled.
double sparse_bce(const ProbMap& pred, const TriMask& target);

/// The same class-balanced loss, applied to a filtered dense pseudo label.
double dense_pseudo_bce(const ProbMap& pred, const TriMask& pseudo);

/// d loss / d logit for one labeled pixel with probability p. Zero where the
/// clamp is active.
double balanced_bce_logit_grad(double p, bool positive, const BalancedWeights& w);

}  // namespace intseg
