#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "intseg/types.hpp"

namespace intseg {

/// I/O failure carrying the offending path.
class DatasetError : public std::runtime_error {
 public:
  DatasetError(const std::filesystem::path& path, const std::string& what)
      : std::runtime_error(path.string() + ": " + what), path_(path) {}
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

struct ImageSize {
  int height = 0;
  int width = 0;
};

/// PNG (8/16-bit gray, gray+alpha, RGB, RGBA, palette) or baseline JPEG,
/// detected by file signature. Alpha is dropped.
Image read_image(const std::filesystem::path& path);

/// Header-only read of the image dimensions.
ImageSize read_image_size(const std::filesystem::path& path);

/// Single-channel mask image; the first channel is thresholded at 128.
BinaryMask read_mask(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Image& image);
/// Stored as 8-bit gray with values {0, 255}.
void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask);

bool is_image_file(const std::filesystem::path& path);

}  // namespace intseg
