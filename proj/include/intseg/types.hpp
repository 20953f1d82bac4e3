#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace intseg {

/// Row-major 2-D raster. The tag parameter keeps masks, probability maps and
/// distance fields from being mixed up even when they share a value type.
template <typename T, typename Tag>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(int height, int width, T fill = T{}) : height_(height), width_(width) {
    if (height < 0 || width < 0) {
      throw std::invalid_argument("grid dimensions must be non-negative");
    }
    data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
  }
  Grid(int height, int width, std::vector<T> data)
      : height_(height), width_(width), data_(std::move(data)) {
    if (height < 0 || width < 0 ||
        data_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
      throw std::invalid_argument("grid data length does not match dimensions");
    }
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& at(int row, int col) { return data_[index(row, col)]; }
  const T& at(int row, int col) const { return data_[index(row, col)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  bool contains(int row, int col) const noexcept {
    return row >= 0 && col >= 0 && row < height_ && col < width_;
  }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  template <typename U, typename OtherTag>
  bool same_shape(const Grid<U, OtherTag>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.data_ == b.data_;
  }

 private:
  std::size_t index(int row, int col) const noexcept {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

struct BinaryTag;
struct TriTag;
struct ProbTag;
struct DistanceTag;

/// Labels in {0,1}.
using BinaryMask = Grid<std::uint8_t, BinaryTag>;
/// Labels in {-1,0,1}; -1 is excluded from every loss.
using TriMask = Grid<std::int8_t, TriTag>;
/// Per-pixel foreground probability in [0,1].
using ProbMap = Grid<double, ProbTag>;
/// Per-pixel Euclidean distance to the nearest pixel outside a region.
using DistanceField = Grid<double, DistanceTag>;

inline constexpr std::int8_t kIgnore = -1;

enum class ClickLabel : std::uint8_t { negative = 0, positive = 1 };

struct Click {
  int row = 0;
  int col = 0;
  ClickLabel label = ClickLabel::positive;

  bool positive() const noexcept { return label == ClickLabel::positive; }
  friend bool operator==(const Click&, const Click&) = default;
};

/// Clicks in placement order.
using ClickHistory = std::vector<Click>;

/// RGB image with interleaved channels in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> rgb;

  Image() = default;
  Image(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0.0) {}

  double& at(int row, int col, int ch) {
    return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + ch];
  }
  double at(int row, int col, int ch) const {
    return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + ch];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

/// One annotated object: an image (shared between the instances that live in
/// it) and the object's ground-truth mask.
struct Sample {
  std::string id;
  std::shared_ptr<const Image> image;
  BinaryMask gt;
};

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw DimensionMismatch(std::string(what) + ": dimension mismatch (" +
                            std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                            " vs " + std::to_string(b.height()) + "x" +
                            std::to_string(b.width()) + ")");
  }
}

}  // namespace intseg
