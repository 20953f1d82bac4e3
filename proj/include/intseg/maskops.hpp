#pragma once

#include <cstdint>
#include <vector>

#include "intseg/types.hpp"

namespace intseg {

/// |a ∩ b| / |a ∪ b|. Two empty masks agree vacuously and score 1.
double iou(const BinaryMask& a, const BinaryMask& b);

/// Squared Euclidean distance from every in-region pixel to the nearest
/// out-of-region pixel, with everything outside the image counting as
/// out-of-region. Out-of-region pixels are 0. Values are exact integers.
std::vector<std::int64_t> squared_distance_transform(const BinaryMask& region);

/// sqrt of squared_distance_transform.
DistanceField distance_transform(const BinaryMask& region);

/// k erosions with the 3x3 cross; pixels beyond the border are background.
BinaryMask erode_k(const BinaryMask& mask, int k);

/// Pixels surviving k-fold erosion of the foreground become 1, pixels
/// surviving k-fold erosion of the complement become 0, the rest -1.
TriMask erosion_trimask(const BinaryMask& mask, int k);

/// Keeps a pixel iff |p - 0.5| >= delta; delta must lie in (0, 0.5).
TriMask confidence_trimask(const ProbMap& prob, double delta);

/// 1 where p >= threshold.
BinaryMask binarize(const ProbMap& prob, double threshold = 0.5);

/// Click labels on an otherwise ignored canvas. A later click on the same
/// pixel overrides an earlier one.
TriMask sparse_mask_from_clicks(const ClickHistory& clicks, int height, int width);

/// Tri-mask with no ignored pixels.
TriMask to_trimask(const BinaryMask& mask);

BinaryMask complement(const BinaryMask& mask);

std::size_t count_foreground(const BinaryMask& mask);

/// Number of pixels that are not -1.
std::size_t count_labeled(const TriMask& mask);

}  // namespace intseg
