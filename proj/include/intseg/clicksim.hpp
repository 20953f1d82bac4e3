#pragma once

#include "intseg/types.hpp"

namespace intseg {

struct ErrorRegions {
  BinaryMask false_positive;
  BinaryMask false_negative;
};

ErrorRegions error_regions(const BinaryMask& gt, const BinaryMask& pred);

/// Simulated user. Clicks the pole of inaccessibility of the larger error
/// region: negative inside false positives when their distance maximum is
/// strictly larger, positive inside false negatives otherwise. Argmax ties go
/// to the smallest row, then the smallest column.
///
/// `history` is accepted for interface symmetry; repeated coordinates are allowed.
/// Throws std::invalid_argument when pred already equals gt.
Click next_click(const BinaryMask& gt, const BinaryMask& pred, const ClickHistory& history);

/// next_click against an all-zero prediction. Throws on an empty gt.
Click first_click(const BinaryMask& gt);

}  // namespace intseg
