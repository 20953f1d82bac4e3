#include "intseg/clicksim.hpp"

#include <cstdint>

#include "intseg/maskops.hpp"

namespace intseg {

ErrorRegions error_regions(const BinaryMask& gt, const BinaryMask& pred) {
  require_same_shape(gt, pred, "error_regions");
  ErrorRegions out{BinaryMask(gt.height(), gt.width(), 0), BinaryMask(gt.height(), gt.width(), 0)};
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool g = gt[i] != 0;
    const bool p = pred[i] != 0;
    out.false_positive[i] = (p && !g) ? 1 : 0;
    out.false_negative[i] = (g && !p) ? 1 : 0;
  }
  return out;
}

namespace {

struct Peak {
  std::int64_t squared = 0;
  std::size_t index = 0;
};

// Row-major scan with strict '>' keeps the first (smallest row, then column) maximum.
Peak argmax(const std::vector<std::int64_t>& field) {
  Peak best;
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (field[i] > best.squared) {
      best.squared = field[i];
      best.index = i;
    }
  }
  return best;
}

}  // namespace

Click next_click(const BinaryMask& gt, const BinaryMask& pred, const ClickHistory& /*history*/) {
  const ErrorRegions err = error_regions(gt, pred);
  // Squared integer distances order exactly like the Euclidean ones.
  const Peak fp = argmax(squared_distance_transform(err.false_positive));
  const Peak fn = argmax(squared_distance_transform(err.false_negative));
  if (fp.squared == 0 && fn.squared == 0) {
    throw std::invalid_argument("next_click: prediction equals ground truth");
  }
  const int w = gt.width();
  if (fp.squared > fn.squared) {
    return Click{static_cast<int>(fp.index / w), static_cast<int>(fp.index % w),
                 ClickLabel::negative};
  }
  return Click{static_cast<int>(fn.index / w), static_cast<int>(fn.index % w),
               ClickLabel::positive};
}

Click first_click(const BinaryMask& gt) {
  if (count_foreground(gt) == 0) throw std::invalid_argument("first_click: empty ground truth");
  return next_click(gt, BinaryMask(gt.height(), gt.width(), 0), {});
}

}  // namespace intseg
