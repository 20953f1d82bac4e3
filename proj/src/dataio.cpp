#include "intseg/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <unordered_map>

#include "intseg/maskops.hpp"
#include "intseg/random.hpp"
#include "json.hpp"

namespace intseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::size_t Dataset::total_instances() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.samples.size();
  return n;
}

std::vector<Sample> Dataset::all_samples() const {
  std::vector<Sample> out;
  out.reserve(total_instances());
  for (const auto& c : classes) out.insert(out.end(), c.samples.begin(), c.samples.end());
  return out;
}

std::size_t DatasetManifest::total_masks() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.instances.size();
  return n;
}

std::size_t DatasetManifest::total_images() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.n_images;
  return n;
}

std::string DatasetManifest::to_json() const {
  json doc;
  doc["format"] = "intseg-manifest";
  doc["version"] = 1;
  doc["root"] = root;
  doc["classes"] = json::array();
  for (const auto& c : classes) {
    json jc;
    jc["name"] = c.name;
    jc["n_images"] = c.n_images;
    jc["instances"] = json::array();
    for (const auto& inst : c.instances) {
      jc["instances"].push_back({{"instance_id", inst.instance_id},
                                 {"image_path", inst.image_path},
                                 {"mask_path", inst.mask_path},
                                 {"height", inst.height},
                                 {"width", inst.width},
                                 {"area", inst.area}});
    }
    doc["classes"].push_back(std::move(jc));
  }
  return doc.dump(2);
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  const json doc = json::parse(text);
  if (doc.value("format", "") != "intseg-manifest") {
    throw std::runtime_error("manifest: not an intseg-manifest document");
  }
  DatasetManifest m;
  m.root = doc.at("root").get<std::string>();
  for (const auto& jc : doc.at("classes")) {
    ManifestClass c;
    c.name = jc.at("name").get<std::string>();
    c.n_images = jc.at("n_images").get<std::size_t>();
    for (const auto& ji : jc.at("instances")) {
      ManifestInstance inst;
      inst.instance_id = ji.at("instance_id").get<std::string>();
      inst.image_path = ji.at("image_path").get<std::string>();
      inst.mask_path = ji.at("mask_path").get<std::string>();
      inst.height = ji.at("height").get<int>();
      inst.width = ji.at("width").get<int>();
      inst.area = ji.at("area").get<std::size_t>();
      c.instances.push_back(std::move(inst));
    }
    m.classes.push_back(std::move(c));
  }
  return m;
}

namespace {

using IssueSink = std::function<void(const fs::path&, const std::string&)>;

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct MaskName {
  std::string image_stem;
  int index = 0;
};

std::optional<MaskName> parse_mask_name(const fs::path& p, char sep) {
  const std::string stem = p.stem().string();
  const auto pos = stem.rfind(sep);
  if (pos == std::string::npos || pos == 0 || pos + 1 >= stem.size()) return std::nullopt;
  const std::string digits = stem.substr(pos + 1);
  if (!std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); })) {
    return std::nullopt;
  }
  if (digits.size() > 9) return std::nullopt;
  return MaskName{stem.substr(0, pos), std::stoi(digits)};
}

DatasetManifest scan(const fs::path& root, const DatasetLayout& layout, const IssueSink& issue) {
  DatasetManifest manifest;
  manifest.root = root.string();
  if (!fs::is_directory(root)) {
    issue(root, "dataset root does not exist or is not a directory");
    return manifest;
  }
  for (const fs::path& class_dir : sorted_entries(root, true)) {
    ManifestClass cls;
    cls.name = class_dir.filename().string();
    const fs::path images_dir = class_dir / layout.images_dir;
    const fs::path masks_dir = class_dir / layout.masks_dir;
    if (!fs::is_directory(images_dir)) {
      issue(images_dir, "missing images directory");
      continue;
    }

    std::map<std::string, fs::path> images;
    for (const fs::path& p : sorted_entries(images_dir, false)) {
      if (!is_image_file(p)) continue;
      const std::string stem = p.stem().string();
      if (images.contains(stem)) {
        issue(p, "duplicate image stem '" + stem + "'");
        continue;
      }
      images.emplace(stem, p);
    }

    std::map<std::string, std::map<int, fs::path>> masks;
    if (fs::is_directory(masks_dir)) {
      for (const fs::path& p : sorted_entries(masks_dir, false)) {
        if (!is_image_file(p)) continue;
        const auto name = parse_mask_name(p, layout.instance_separator);
        if (!name) {
          issue(p, std::string("mask name is not <image_stem>") + layout.instance_separator + "<k>");
          continue;
        }
        if (!images.contains(name->image_stem)) {
          issue(p, "mask has no matching image '" + name->image_stem + "' in " + images_dir.string());
          continue;
        }
        masks[name->image_stem].emplace(name->index, p);
      }
    }

    for (const auto& [stem, image_path] : images) {
      const auto it = masks.find(stem);
      if (it == masks.end() || it->second.empty()) {
        issue(image_path, "missing mask: no " + (masks_dir / (stem + "_<k>.png")).string());
        continue;
      }
      ImageSize size;
      try {
        size = read_image_size(image_path);
      } catch (const DatasetError& e) {
        issue(e.path(), e.what());
        continue;
      }
      ++cls.n_images;
      for (const auto& [k, mask_path] : it->second) {
        BinaryMask mask;
        try {
          mask = read_mask(mask_path);
        } catch (const DatasetError& e) {
          issue(e.path(), e.what());
          continue;
        }
        if (mask.height() != size.height || mask.width() != size.width) {
          issue(mask_path, "dimension mismatch: mask is " + std::to_string(mask.height()) + "x" +
                               std::to_string(mask.width()) + " but image " + image_path.string() +
                               " is " + std::to_string(size.height) + "x" +
                               std::to_string(size.width));
          continue;
        }
        const std::size_t area = count_foreground(mask);
        if (area == 0) {
          issue(mask_path, "empty mask");
          continue;
        }
        ManifestInstance inst;
        inst.instance_id = cls.name + "/" + mask_path.stem().string();
        inst.image_path = fs::relative(image_path, root).generic_string();
        inst.mask_path = fs::relative(mask_path, root).generic_string();
        inst.height = size.height;
        inst.width = size.width;
        inst.area = area;
        cls.instances.push_back(std::move(inst));
      }
    }
    manifest.classes.push_back(std::move(cls));
  }
  return manifest;
}

}  // namespace

DatasetManifest load_dataset(const fs::path& root, const DatasetLayout& layout) {
  return scan(root, layout, [](const fs::path& p, const std::string& msg) {
    // DatasetError already prefixes the path; avoid repeating it.
    const std::string prefix = p.string() + ": ";
    throw DatasetError(p, msg.rfind(prefix, 0) == 0 ? msg.substr(prefix.size()) : msg);
  });
}

std::vector<DatasetIssue> validate_dataset(const fs::path& root, const DatasetLayout& layout) {
  std::vector<DatasetIssue> issues;
  scan(root, layout, [&](const fs::path& p, const std::string& msg) { issues.push_back({p, msg}); });
  return issues;
}

Dataset materialize(const DatasetManifest& manifest) {
  Dataset ds;
  const fs::path root(manifest.root);
  for (const auto& mc : manifest.classes) {
    DatasetClass dc;
    dc.name = mc.name;
    std::unordered_map<std::string, std::shared_ptr<const Image>> images;
    for (const auto& inst : mc.instances) {
      auto& img = images[inst.image_path];
      if (!img) img = std::make_shared<const Image>(read_image(root / inst.image_path));
      BinaryMask gt = read_mask(root / inst.mask_path);
      if (gt.height() != img->height || gt.width() != img->width) {
        throw DatasetError(root / inst.mask_path, "dimension mismatch with its image");
      }
      dc.samples.push_back(Sample{inst.instance_id, img, std::move(gt)});
    }
    ds.classes.push_back(std::move(dc));
  }
  return ds;
}

void write_dataset(const Dataset& dataset, const fs::path& root) {
  for (const auto& c : dataset.classes) {
    const fs::path images_dir = root / c.name / "images";
    const fs::path masks_dir = root / c.name / "masks";
    fs::create_directories(images_dir);
    fs::create_directories(masks_dir);
    std::unordered_map<const Image*, std::string> written;
    for (const auto& s : c.samples) {
      std::string id = s.id;
      if (const auto slash = id.rfind('/'); slash != std::string::npos) id = id.substr(slash + 1);
      const auto name = parse_mask_name(fs::path(id + ".png"), '_');
      if (!name) throw DatasetError(root / c.name, "sample id '" + s.id + "' is not <stem>_<k>");
      auto it = written.find(s.image.get());
      if (it == written.end()) {
        write_png(images_dir / (name->image_stem + ".png"), *s.image);
        written.emplace(s.image.get(), name->image_stem);
      } else if (it->second != name->image_stem) {
        throw DatasetError(root / c.name, "samples sharing an image disagree on its stem");
      }
      write_mask_png(masks_dir / (id + ".png"), s.gt);
    }
  }
}

RleMask rle_encode(const BinaryMask& mask) {
  RleMask rle{mask.height(), mask.width(), {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (auto v : mask.data()) {
    const std::uint8_t b = v ? 1 : 0;
    if (b != current) {
      rle.runs.push_back(run);
      run = 0;
      current = b;
    }
    ++run;
  }
  rle.runs.push_back(run);
  return rle;
}

BinaryMask rle_decode(const RleMask& rle) {
  if (rle.height < 0 || rle.width < 0) throw std::invalid_argument("rle_decode: negative dimensions");
  const std::uint64_t expected = static_cast<std::uint64_t>(rle.height) * rle.width;
  std::uint64_t total = 0;
  for (auto r : rle.runs) total += r;
  if (total != expected) {
    throw std::invalid_argument("rle_decode: runs sum to " + std::to_string(total) + ", expected " +
                                std::to_string(expected));
  }
  BinaryMask mask(rle.height, rle.width, 0);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (auto r : rle.runs) {
    std::fill_n(mask.data().begin() + static_cast<std::ptrdiff_t>(pos), r, value);
    pos += r;
    value ^= 1;
  }
  return mask;
}

std::string to_string(ShapeFamily family) {
  switch (family) {
    case ShapeFamily::disk: return "disk";
    case ShapeFamily::ellipse: return "ellipse";
    case ShapeFamily::polygon: return "polygon";
    case ShapeFamily::thin_bar: return "thin-bar";
  }
  return "disk";
}

std::string to_string(DomainShift shift) {
  switch (shift) {
    case DomainShift::none: return "none";
    case DomainShift::intensity: return "intensity";
    case DomainShift::texture: return "texture";
  }
  return "none";
}

ShapeFamily parse_shape_family(const std::string& s) {
  if (s == "disk") return ShapeFamily::disk;
  if (s == "ellipse") return ShapeFamily::ellipse;
  if (s == "polygon") return ShapeFamily::polygon;
  if (s == "thin-bar" || s == "thin_bar" || s == "bar") return ShapeFamily::thin_bar;
  throw std::invalid_argument("unknown shape family '" + s + "'");
}

DomainShift parse_domain_shift(const std::string& s) {
  if (s == "none") return DomainShift::none;
  if (s == "intensity") return DomainShift::intensity;
  if (s == "texture") return DomainShift::texture;
  throw std::invalid_argument("unknown domain shift '" + s + "'");
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a combined key
  std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr double kPi = std::numbers::pi;

// Shape rasterisers test pixel centres against the continuous shape.
BinaryMask draw_shape(ShapeFamily family, int size, Rng& rng) {
  const double s = size;
  BinaryMask m(size, size, 0);
  auto raster = [&](double reach, auto&& inside) {
    const double lo = reach + 1.0;
    const double hi = s - 2.0 - reach;
    const double cy = lo < hi ? rng.uniform(lo, hi) : s / 2;
    const double cx = lo < hi ? rng.uniform(lo, hi) : s / 2;
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) m.at(r, c) = inside(r - cy, c - cx) ? 1 : 0;
    }
  };
  switch (family) {
    case ShapeFamily::disk: {
      const double radius = rng.uniform(0.09 * s, 0.2 * s);
      raster(radius, [&](double dy, double dx) { return dy * dy + dx * dx <= radius * radius; });
      break;
    }
    case ShapeFamily::ellipse: {
      const double a = rng.uniform(0.1 * s, 0.25 * s);
      const double b = a * rng.uniform(0.35, 0.75);
      const double th = rng.uniform(0.0, kPi);
      const double ct = std::cos(th);
      const double st = std::sin(th);
      raster(a, [&](double dy, double dx) {
        const double u = dx * ct + dy * st;
        const double v = -dx * st + dy * ct;
        return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
      });
      break;
    }
    case ShapeFamily::polygon: {
      const int n = rng.range(5, 8);
      const double radius = rng.uniform(0.1 * s, 0.22 * s);
      std::vector<double> angles(n);
      for (auto& a : angles) a = rng.uniform(0.0, 2.0 * kPi);
      std::sort(angles.begin(), angles.end());
      std::vector<std::pair<double, double>> pts;  // (y, x)
      for (double a : angles) {
        const double rr = radius * rng.uniform(0.6, 1.0);
        pts.emplace_back(rr * std::sin(a), rr * std::cos(a));
      }
      raster(radius, [&](double dy, double dx) {
        bool in = false;
        for (int i = 0, j = n - 1; i < n; j = i++) {
          const auto [yi, xi] = pts[i];
          const auto [yj, xj] = pts[j];
          if ((yi > dy) != (yj > dy) && dx < (xj - xi) * (dy - yi) / (yj - yi) + xi) in = !in;
        }
        return in;
      });
      break;
    }
    case ShapeFamily::thin_bar: {
      const double len = rng.uniform(0.35 * s, 0.7 * s);
      const double thick = rng.uniform(2.5, 4.5) * s / 64.0;
      const double th = rng.uniform(0.0, kPi);
      const double ct = std::cos(th);
      const double st = std::sin(th);
      raster(len / 2, [&](double dy, double dx) {
        const double u = dx * ct + dy * st;
        const double v = -dx * st + dy * ct;
        return std::abs(u) <= len / 2 && std::abs(v) <= thick / 2;
      });
      break;
    }
  }
  return m;
}

// Chebyshev dilation by `margin`, used to keep shapes apart.
BinaryMask dilate_box(const BinaryMask& m, int margin) {
  BinaryMask out(m.height(), m.width(), 0);
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      if (!m.at(r, c)) continue;
      for (int dr = -margin; dr <= margin; ++dr) {
        for (int dc = -margin; dc <= margin; ++dc) {
          if (out.contains(r + dr, c + dc)) out.at(r + dr, c + dc) = 1;
        }
      }
    }
  }
  return out;
}

void apply_shift(Image& img, DomainShift shift) {
  switch (shift) {
    case DomainShift::none: return;
    case DomainShift::intensity:
      // Brightens and halves the contrast: backgrounds land where objects used to be.
      for (double& v : img.rgb) v = 0.5 + 0.5 * v;
      return;
    case DomainShift::texture:
      for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
          const double t = ((r / 2 + c / 2) % 2 == 0) ? 0.15 : -0.15;
          for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = std::clamp(img.at(r, c, ch) + t, 0.0, 1.0);
        }
      }
      return;
  }
}

}  // namespace

Dataset synth_dataset(const SynthOptions& options) {
  if (options.n_instances < 1) throw std::invalid_argument("synth_dataset: n_instances must be >= 1");
  if (options.image_size < 16) throw std::invalid_argument("synth_dataset: image_size must be >= 16");
  const int size = options.image_size;
  // Geometry depends on seed and family only, so shifted splits share it.
  Rng rng(mix(options.seed, static_cast<std::uint64_t>(options.family) + 1));

  DatasetClass cls;
  cls.name = to_string(options.family);
  int image_index = 0;
  while (static_cast<int>(cls.samples.size()) < options.n_instances) {
    const int remaining = options.n_instances - static_cast<int>(cls.samples.size());
    const int wanted = (remaining >= 2 && rng.uniform() < 0.4) ? 2 : 1;

    std::vector<BinaryMask> shapes;
    BinaryMask occupied(size, size, 0);
    for (int attempt = 0; attempt < 60 && static_cast<int>(shapes.size()) < wanted; ++attempt) {
      BinaryMask m = draw_shape(options.family, size, rng);
      if (count_foreground(m) < 4) continue;
      bool clash = false;
      for (std::size_t i = 0; i < m.size() && !clash; ++i) clash = m[i] && occupied[i];
      if (clash) continue;
      const BinaryMask grown = dilate_box(m, 2);
      for (std::size_t i = 0; i < m.size(); ++i) occupied[i] |= grown[i];
      shapes.push_back(std::move(m));
    }
    if (shapes.empty()) continue;

    auto img = std::make_shared<Image>(size, size);
    const double base = rng.uniform(0.15, 0.35);
    const double grad_amp = rng.uniform(0.0, 0.12);
    const double grad_dir = rng.uniform(0.0, 2.0 * kPi);
    const double wave_amp = 0.04;
    const double wave_freq = 2.0 * kPi / (size / rng.uniform(1.5, 3.0));
    const double wave_dir = rng.uniform(0.0, 2.0 * kPi);
    const double wave_phase = rng.uniform(0.0, 2.0 * kPi);
    std::array<double, 3> bg_tint{};
    for (auto& t : bg_tint) t = rng.uniform(-0.05, 0.05);
    struct Paint {
      double level;
      std::array<double, 3> tint;
      double shade;
    };
    std::vector<Paint> paints;
    for (std::size_t k = 0; k < shapes.size(); ++k) {
      Paint p{rng.uniform(0.6, 0.85), {}, rng.uniform(-0.05, 0.05)};
      for (auto& t : p.tint) t = rng.uniform(-0.08, 0.08);
      paints.push_back(p);
    }
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        const double u = (r - size / 2.0) / size;
        const double v = (c - size / 2.0) / size;
        int owner = -1;
        for (std::size_t k = 0; k < shapes.size(); ++k) {
          if (shapes[k].at(r, c)) owner = static_cast<int>(k);
        }
        for (int ch = 0; ch < 3; ++ch) {
          double value;
          if (owner < 0) {
            value = base + bg_tint[ch] + grad_amp * (u * std::cos(grad_dir) + v * std::sin(grad_dir)) +
                    wave_amp * std::sin(wave_freq * (r * std::cos(wave_dir) + c * std::sin(wave_dir)) + wave_phase);
          } else {
            const Paint& p = paints[owner];
            value = p.level + p.tint[ch] + p.shade * (u + v);
          }
          value += rng.uniform(-0.02, 0.02);
          img->at(r, c, ch) = std::clamp(value, 0.0, 1.0);
        }
      }
    }
    apply_shift(*img, options.shift);

    const std::string stem = cls.name + "_" + std::to_string(image_index);
    std::shared_ptr<const Image> shared = img;
    for (std::size_t k = 0; k < shapes.size(); ++k) {
      cls.samples.push_back(Sample{stem + "_" + std::to_string(k), shared, std::move(shapes[k])});
    }
    ++image_index;
  }
  Dataset ds;
  ds.classes.push_back(std::move(cls));
  return ds;
}

std::vector<ClassAreaStats> class_stats(const DatasetManifest& manifest) {
  std::vector<ClassAreaStats> out;
  for (const auto& c : manifest.classes) {
    ClassAreaStats s{c.name, c.instances.size(), 0.0};
    for (const auto& inst : c.instances) {
      s.mean_area_percent += 100.0 * static_cast<double>(inst.area) /
                             (static_cast<double>(inst.height) * inst.width);
    }
    if (!c.instances.empty()) s.mean_area_percent /= static_cast<double>(c.instances.size());
    out.push_back(s);
  }
  return out;
}

std::vector<ClassAreaStats> class_stats(const Dataset& dataset) {
  std::vector<ClassAreaStats> out;
  for (const auto& c : dataset.classes) {
    ClassAreaStats s{c.name, c.samples.size(), 0.0};
    for (const auto& sample : c.samples) {
      s.mean_area_percent += 100.0 * static_cast<double>(count_foreground(sample.gt)) /
                             static_cast<double>(sample.gt.size());
    }
    if (!c.samples.empty()) s.mean_area_percent /= static_cast<double>(c.samples.size());
    out.push_back(s);
  }
  return out;
}

}  // namespace intseg
