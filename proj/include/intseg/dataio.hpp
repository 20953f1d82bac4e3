#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "intseg/imageio.hpp"
#include "intseg/types.hpp"

namespace intseg {

// ---------------------------------------------------------------------------
// In-memory datasets

struct DatasetClass {
  std::string name;
  std::vector<Sample> samples;
};

struct Dataset {
  std::vector<DatasetClass> classes;

  std::size_t total_instances() const;
  /// Every sample of every class, in class order.
  std::vector<Sample> all_samples() const;
};

// ---------------------------------------------------------------------------
// On-disk layout
//
//   <root>/<class>/images/<stem>.{png,jpg,jpeg}
//   <root>/<class>/masks/<stem>_<k>.png      one binary mask per instance

struct DatasetLayout {
  std::string images_dir = "images";
  std::string masks_dir = "masks";
  char instance_separator = '_';
};

struct ManifestInstance {
  std::string instance_id;  ///< "<class>/<stem>_<k>"
  std::string image_path;   ///< relative to the dataset root
  std::string mask_path;    ///< relative to the dataset root
  int height = 0;
  int width = 0;
  std::size_t area = 0;     ///< foreground pixel count
  friend bool operator==(const ManifestInstance&, const ManifestInstance&) = default;
};

struct ManifestClass {
  std::string name;
  std::size_t n_images = 0;
  std::vector<ManifestInstance> instances;
  friend bool operator==(const ManifestClass&, const ManifestClass&) = default;
};

struct DatasetManifest {
  std::string root;
  std::vector<ManifestClass> classes;

  std::size_t total_masks() const;
  std::size_t total_images() const;

  /// Single JSON document.
  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct DatasetIssue {
  std::filesystem::path path;
  std::string message;
};

/// Scans and validates root. Throws DatasetError (with path) on the first
/// problem: unreadable file, image without masks, mask without image,
/// dimension mismatch or empty mask. A missing or empty root is an error /
/// an empty manifest respectively.
DatasetManifest load_dataset(const std::filesystem::path& root, const DatasetLayout& layout = {});

/// Like load_dataset but collects every problem instead of stopping.
std::vector<DatasetIssue> validate_dataset(const std::filesystem::path& root,
                                           const DatasetLayout& layout = {});

/// Reads all images and masks listed in the manifest.
Dataset materialize(const DatasetManifest& manifest);

/// Writes a dataset in the on-disk layout. Sample ids must be "<stem>_<k>"
/// (an optional "<class>/" prefix is stripped).
void write_dataset(const Dataset& dataset, const std::filesystem::path& root);

/// Published per-class counts of the winter-sports equipment dataset.
struct ReferenceClassCount {
  const char* name;
  std::size_t masks;
  std::size_t images;
};
inline constexpr ReferenceClassCount kWsesegCounts[] = {
    {"Ski (Jump)", 498, 249},        {"Ski (Misc)", 601, 245},     {"Bobsleighs", 620, 572},
    {"Curling Brooms", 656, 284},    {"Curling Stones", 983, 285}, {"Ski Goggles", 599, 501},
    {"Ski Helmets", 684, 555},       {"Slalom Gate Poles", 1034, 507},
    {"Snowboards", 650, 491},        {"Snow Kites", 1127, 532},
};
inline constexpr std::size_t kWsesegTotalMasks = 7452;
inline constexpr std::size_t kWsesegTotalImages = 4221;

// ---------------------------------------------------------------------------
// Run-length codec

/// Alternating background/foreground runs in row-major order, starting with
/// a (possibly empty) background run.
struct RleMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> runs;
  friend bool operator==(const RleMask&, const RleMask&) = default;
};

RleMask rle_encode(const BinaryMask& mask);
/// Throws std::invalid_argument when the runs do not sum to height*width.
BinaryMask rle_decode(const RleMask& rle);

// ---------------------------------------------------------------------------
// Synthetic shapes

enum class ShapeFamily { disk, ellipse, polygon, thin_bar };
enum class DomainShift { none, intensity, texture };

std::string to_string(ShapeFamily family);
std::string to_string(DomainShift shift);
ShapeFamily parse_shape_family(const std::string& s);
DomainShift parse_domain_shift(const std::string& s);

struct SynthOptions {
  std::uint64_t seed = 0;
  int n_instances = 100;
  ShapeFamily family = ShapeFamily::disk;
  DomainShift shift = DomainShift::none;
  int image_size = 64;
};

/// Images with one or two non-overlapping shapes on a structured background;
/// every shape is an instance with an exact mask. The shift modes transform
/// the appearance systematically so a model trained on `none` degrades.
/// One class named after the family. A pure function of the options.
Dataset synth_dataset(const SynthOptions& options);

// ---------------------------------------------------------------------------
// Statistics

struct ClassAreaStats {
  std::string class_name;
  std::size_t n_instances = 0;
  /// Mean foreground fraction of the image, in percent.
  double mean_area_percent = 0.0;
};

std::vector<ClassAreaStats> class_stats(const DatasetManifest& manifest);
std::vector<ClassAreaStats> class_stats(const Dataset& dataset);

}  // namespace intseg
