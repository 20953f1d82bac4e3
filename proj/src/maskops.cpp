#include "intseg/maskops.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace intseg {

double iou(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "iou");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0;
    const bool y = b[i] != 0;
    inter += static_cast<std::size_t>(x && y);
    uni += static_cast<std::size_t>(x || y);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

// Lower envelope of parabolas f(q) + (p - q)^2 over one padded line.
// f holds finite squared column distances; out receives the row minimum.
void envelope_1d(const std::vector<std::int64_t>& f, std::vector<std::int64_t>& out,
                 std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto intersect = [&](int q, int r) {
    return static_cast<double>((f[q] + std::int64_t{q} * q) - (f[r] + std::int64_t{r} * r)) /
           (2.0 * (q - r));
  };
  for (int q = 1; q < n; ++q) {
    double s = intersect(q, v[k]);
    // z[0] is -inf and s is finite, so k never drops below zero.
    while (s <= z[k]) {
      --k;
      s = intersect(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const std::int64_t d = q - v[k];
    out[q] = d * d + f[v[k]];
  }
}

}  // namespace

std::vector<std::int64_t> squared_distance_transform(const BinaryMask& region) {
  const int h = region.height();
  const int w = region.width();
  // One ring of out-of-region padding realises the "border is outside" rule
  // and keeps every column distance finite.
  const int ph = h + 2;
  const int pw = w + 2;
  std::vector<std::int64_t> col_d(static_cast<std::size_t>(ph) * pw, 0);
  auto inside = [&](int pr, int pc) {
    return pr >= 1 && pc >= 1 && pr <= h && pc <= w && region.at(pr - 1, pc - 1) != 0;
  };

  for (int c = 0; c < pw; ++c) {
    std::int64_t run = 0;
    for (int r = 0; r < ph; ++r) {
      run = inside(r, c) ? run + 1 : 0;
      col_d[static_cast<std::size_t>(r) * pw + c] = run;
    }
    run = 0;
    for (int r = ph - 1; r >= 0; --r) {
      run = inside(r, c) ? run + 1 : 0;
      auto& d = col_d[static_cast<std::size_t>(r) * pw + c];
      if (run < d) d = run;
    }
  }

  std::vector<std::int64_t> result(static_cast<std::size_t>(h) * w, 0);
  std::vector<std::int64_t> f(pw);
  std::vector<std::int64_t> out(pw);
  std::vector<int> v(pw);
  std::vector<double> z(pw + 1);
  for (int r = 1; r <= h; ++r) {
    for (int c = 0; c < pw; ++c) {
      const std::int64_t d = col_d[static_cast<std::size_t>(r) * pw + c];
      f[c] = d * d;
    }
    envelope_1d(f, out, v, z);
    for (int c = 1; c <= w; ++c) {
      result[static_cast<std::size_t>(r - 1) * w + (c - 1)] = out[c];
    }
  }
  return result;
}

DistanceField distance_transform(const BinaryMask& region) {
  const auto sq = squared_distance_transform(region);
  DistanceField field(region.height(), region.width());
  for (std::size_t i = 0; i < sq.size(); ++i) {
    field[i] = std::sqrt(static_cast<double>(sq[i]));
  }
  return field;
}

namespace {

BinaryMask erode_once(const BinaryMask& m) {
  const int h = m.height();
  const int w = m.width();
  BinaryMask out(h, w, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!m.at(r, c)) continue;
      const bool keep = r > 0 && r + 1 < h && c > 0 && c + 1 < w && m.at(r - 1, c) &&
                        m.at(r + 1, c) && m.at(r, c - 1) && m.at(r, c + 1);
      out.at(r, c) = keep ? 1 : 0;
    }
  }
  return out;
}

}  // namespace

BinaryMask erode_k(const BinaryMask& mask, int k) {
  if (k < 0) throw std::invalid_argument("erode_k: k must be non-negative");
  BinaryMask current = mask;
  for (int i = 0; i < k; ++i) current = erode_once(current);
  return current;
}

TriMask erosion_trimask(const BinaryMask& mask, int k) {
  if (k < 1) throw std::invalid_argument("erosion_trimask: k must be at least 1");
  const BinaryMask fg = erode_k(mask, k);
  const BinaryMask bg = erode_k(complement(mask), k);
  TriMask out(mask.height(), mask.width(), kIgnore);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (fg[i]) {
      out[i] = 1;
    } else if (bg[i]) {
      out[i] = 0;
    }
  }
  return out;
}

TriMask confidence_trimask(const ProbMap& prob, double delta) {
  if (!(delta > 0.0 && delta < 0.5)) {
    throw std::invalid_argument("confidence_trimask: delta must lie in (0, 0.5), got " +
                                std::to_string(delta));
  }
  // The bounds are inclusive; the slack keeps decimal boundaries such as
  // p = 0.05 with delta = 0.45 on the kept side despite rounding.
  const double margin = delta - 1e-12;
  TriMask out(prob.height(), prob.width(), kIgnore);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = prob[i];
    if (p - 0.5 >= margin) {
      out[i] = 1;
    } else if (0.5 - p >= margin) {
      out[i] = 0;
    }
  }
  return out;
}

BinaryMask binarize(const ProbMap& prob, double threshold) {
  BinaryMask out(prob.height(), prob.width(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = prob[i] >= threshold ? 1 : 0;
  return out;
}

TriMask sparse_mask_from_clicks(const ClickHistory& clicks, int height, int width) {
  TriMask out(height, width, kIgnore);
  for (const Click& c : clicks) {
    if (!out.contains(c.row, c.col)) {
      throw std::out_of_range("click (" + std::to_string(c.row) + "," + std::to_string(c.col) +
                              ") outside " + std::to_string(height) + "x" +
                              std::to_string(width) + " image");
    }
    out.at(c.row, c.col) = c.positive() ? 1 : 0;
  }
  return out;
}

TriMask to_trimask(const BinaryMask& mask) {
  TriMask out(mask.height(), mask.width(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] ? 1 : 0;
  return out;
}

BinaryMask complement(const BinaryMask& mask) {
  BinaryMask out(mask.height(), mask.width(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] ? 0 : 1;
  return out;
}

std::size_t count_foreground(const BinaryMask& mask) {
  std::size_t n = 0;
  for (auto v : mask.data()) n += v != 0;
  return n;
}

std::size_t count_labeled(const TriMask& mask) {
  std::size_t n = 0;
  for (auto v : mask.data()) n += v != kIgnore;
  return n;
}

}  // namespace intseg
