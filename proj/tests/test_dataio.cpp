#include "doctest.h"

#include <fstream>

#include "fixtures.hpp"
#include "intseg/clicksim.hpp"
#include "intseg/dataio.hpp"
#include "intseg/imageio.hpp"
#include "intseg/maskops.hpp"
#include "oracles.hpp"

using namespace intseg;
namespace fs = std::filesystem;

namespace {

Image gray_image(int h, int w, double v) {
  Image img(h, w);
  for (double& x : img.rgb) x = v;
  return img;
}

BinaryMask box(int h, int w, int r0, int c0, int r1, int c1) {
  BinaryMask m(h, w, 0);
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) m.at(r, c) = 1;
  }
  return m;
}

/// Two classes, three masks: cats/a (2 instances), dogs/b (1 instance).
fs::path write_fixture(const std::string& name) {
  const fs::path root = fixtures::scratch_dir(name);
  fs::create_directories(root / "cats/images");
  fs::create_directories(root / "cats/masks");
  fs::create_directories(root / "dogs/images");
  fs::create_directories(root / "dogs/masks");
  write_png(root / "cats/images/a.png", gray_image(10, 12, 0.5));
  write_mask_png(root / "cats/masks/a_0.png", box(10, 12, 0, 0, 5, 6));
  write_mask_png(root / "cats/masks/a_1.png", box(10, 12, 5, 6, 10, 12));
  write_png(root / "dogs/images/b.png", gray_image(8, 8, 0.2));
  write_mask_png(root / "dogs/masks/b_0.png", box(8, 8, 2, 2, 4, 4));
  return root;
}

bool has_issue(const std::vector<DatasetIssue>& issues, const fs::path& path, const std::string& needle) {
  for (const auto& i : issues) {
    if (i.path == path && i.message.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST_SUITE("dataio") {

TEST_CASE("rle examples") {
  const RleMask zeros = rle_encode(BinaryMask(4, 4, 0));
  CHECK(zeros.runs == std::vector<std::uint32_t>{16});
  const RleMask ones = rle_encode(BinaryMask(4, 4, 1));
  CHECK(ones.runs == std::vector<std::uint32_t>{0, 16});
  BinaryMask m(2, 3, 0);
  m.at(0, 1) = 1;
  m.at(0, 2) = 1;
  m.at(1, 2) = 1;
  CHECK(rle_encode(m).runs == std::vector<std::uint32_t>{1, 2, 2, 1});
  CHECK(rle_decode(rle_encode(m)) == m);
  CHECK(rle_decode(RleMask{0, 0, {0}}).size() == 0);
}

TEST_CASE("rle round trip on random masks") {
  Rng rng(17);
  for (int t = 0; t < 500; ++t) {
    const BinaryMask m = oracle::random_mask(rng, rng.range(1, 40), rng.range(1, 40));
    const RleMask rle = rle_encode(m);
    std::uint64_t sum = 0;
    for (auto r : rle.runs) sum += r;
    REQUIRE(sum == m.size());
    REQUIRE(rle_decode(rle) == m);
  }
}

TEST_CASE("rle decode rejects wrong run totals") {
  CHECK_THROWS_AS(rle_decode(RleMask{4, 4, {15}}), std::invalid_argument);
  CHECK_THROWS_AS(rle_decode(RleMask{4, 4, {10, 7}}), std::invalid_argument);
}

TEST_CASE("mask and image codecs round trip") {
  const fs::path dir = fixtures::scratch_dir("codec");
  Rng rng(2);
  const BinaryMask m = oracle::random_mask(rng, 13, 21);
  write_mask_png(dir / "m.png", m);
  CHECK(read_mask(dir / "m.png") == m);

  Image img(9, 11);
  for (double& v : img.rgb) v = static_cast<double>(rng.below(256)) / 255.0;
  write_png(dir / "i.png", img);
  const Image back = read_image(dir / "i.png");
  REQUIRE(back.height == 9);
  REQUIRE(back.width == 11);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) CHECK(back.rgb[i] == doctest::Approx(img.rgb[i]).epsilon(1e-12));
  const ImageSize size = read_image_size(dir / "i.png");
  CHECK(size.height == 9);
  CHECK(size.width == 11);

  std::ofstream(dir / "junk.png") << "not an image";
  CHECK_THROWS_AS(read_image(dir / "junk.png"), DatasetError);
  CHECK_THROWS_AS(read_mask(dir / "missing.png"), DatasetError);
}

TEST_CASE("load_dataset on a two-class fixture") {
  const fs::path root = write_fixture("load");
  const DatasetManifest m = load_dataset(root);
  REQUIRE(m.classes.size() == 2);
  CHECK(m.classes[0].name == "cats");
  CHECK(m.classes[0].instances.size() == 2);
  CHECK(m.classes[0].n_images == 1);
  CHECK(m.classes[1].instances.size() == 1);
  CHECK(m.total_masks() == 3);
  CHECK(m.total_images() == 2);
  CHECK(m.classes[0].instances[0].instance_id == "cats/a_0");
  CHECK(m.classes[0].instances[0].image_path == "cats/images/a.png");
  CHECK(m.classes[0].instances[0].area == 30);

  const Dataset d = materialize(m);
  CHECK(d.total_instances() == 3);
  CHECK(d.classes[0].samples[0].image == d.classes[0].samples[1].image);
  CHECK(d.classes[1].samples[0].gt == box(8, 8, 2, 2, 4, 4));

  CHECK(DatasetManifest::from_json(m.to_json()) == m);
  CHECK(validate_dataset(root).empty());
}

TEST_CASE("empty and missing roots") {
  const fs::path empty = fixtures::scratch_dir("empty");
  CHECK(load_dataset(empty).classes.empty());
  CHECK(validate_dataset(empty).empty());
  CHECK_THROWS_AS(load_dataset(empty / "nope"), DatasetError);
  CHECK(validate_dataset(empty / "nope").size() == 1);
}

TEST_CASE("validator errors carry the offending path") {
  SUBCASE("missing mask") {
    const fs::path root = write_fixture("missing-mask");
    fs::remove(root / "dogs/masks/b_0.png");
    const fs::path image = root / "dogs/images/b.png";
    try {
      load_dataset(root);
      FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
      CHECK(e.path() == image);
      CHECK(std::string(e.what()).find(image.string()) != std::string::npos);
      CHECK(std::string(e.what()).find("missing mask") != std::string::npos);
    }
    CHECK(has_issue(validate_dataset(root), image, "missing mask"));
  }
  SUBCASE("dimension mismatch") {
    const fs::path root = write_fixture("mismatch");
    const fs::path mask = root / "cats/masks/a_1.png";
    write_mask_png(mask, box(9, 12, 0, 0, 3, 3));
    try {
      load_dataset(root);
      FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
      CHECK(e.path() == mask);
      CHECK(std::string(e.what()).find(mask.string()) != std::string::npos);
      CHECK(std::string(e.what()).find("dimension mismatch") != std::string::npos);
    }
    CHECK(has_issue(validate_dataset(root), mask, "dimension mismatch"));
  }
  SUBCASE("orphan mask") {
    const fs::path root = write_fixture("orphan");
    const fs::path orphan = root / "dogs/masks/c_0.png";
    write_mask_png(orphan, box(8, 8, 0, 0, 2, 2));
    CHECK_THROWS_AS(load_dataset(root), DatasetError);
    CHECK(has_issue(validate_dataset(root), orphan, "no matching image"));
  }
  SUBCASE("empty mask") {
    const fs::path root = write_fixture("empty-mask");
    const fs::path mask = root / "dogs/masks/b_0.png";
    write_mask_png(mask, BinaryMask(8, 8, 0));
    CHECK(has_issue(validate_dataset(root), mask, "empty mask"));
  }
  SUBCASE("every problem is collected") {
    const fs::path root = write_fixture("many");
    fs::remove(root / "dogs/masks/b_0.png");
    write_mask_png(root / "cats/masks/a_1.png", box(9, 12, 0, 0, 3, 3));
    CHECK(validate_dataset(root).size() == 2);
  }
}

TEST_CASE("write_dataset then load_dataset reproduces the samples") {
  const Dataset d = fixtures::shapes(5, 3, DomainShift::none, 24);
  const fs::path root = fixtures::scratch_dir("write");
  write_dataset(d, root);
  const Dataset back = materialize(load_dataset(root));
  REQUIRE(back.classes.size() == d.classes.size());
  // Classes come back sorted by name; compare by name.
  for (const auto& c : d.classes) {
    const auto it = std::find_if(back.classes.begin(), back.classes.end(),
                                 [&](const DatasetClass& b) { return b.name == c.name; });
    REQUIRE(it != back.classes.end());
    REQUIRE(it->samples.size() == c.samples.size());
    for (const auto& s : c.samples) {
      const auto jt = std::find_if(it->samples.begin(), it->samples.end(),
                                   [&](const Sample& b) { return b.id == c.name + "/" + s.id; });
      REQUIRE(jt != it->samples.end());
      CHECK(jt->gt == s.gt);
    }
  }
}

TEST_CASE("synth is a pure function of its options") {
  SynthOptions o;
  o.seed = 21;
  o.n_instances = 5;
  const Dataset a = synth_dataset(o);
  const Dataset b = synth_dataset(o);
  REQUIRE(a.classes.size() == 1);
  CHECK(a.classes[0].name == "disk");
  REQUIRE(a.classes[0].samples.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(a.classes[0].samples[i].id == b.classes[0].samples[i].id);
    CHECK(a.classes[0].samples[i].gt == b.classes[0].samples[i].gt);
    CHECK(*a.classes[0].samples[i].image == *b.classes[0].samples[i].image);
  }
  o.seed = 22;
  CHECK_FALSE(synth_dataset(o).classes[0].samples[0].gt == a.classes[0].samples[0].gt);
  o.n_instances = 0;
  CHECK_THROWS_AS(synth_dataset(o), std::invalid_argument);
  o.n_instances = 1;
  o.image_size = 8;
  CHECK_THROWS_AS(synth_dataset(o), std::invalid_argument);
}

TEST_CASE("synthetic disks are round") {
  SynthOptions o;
  o.seed = 5;
  o.n_instances = 10;
  const Dataset d = synth_dataset(o);
  for (const Sample& s : d.classes[0].samples) {
    int r0 = s.gt.height(), r1 = -1, c0 = s.gt.width(), c1 = -1;
    for (int r = 0; r < s.gt.height(); ++r) {
      for (int c = 0; c < s.gt.width(); ++c) {
        if (!s.gt.at(r, c)) continue;
        r0 = std::min(r0, r), r1 = std::max(r1, r), c0 = std::min(c0, c), c1 = std::max(c1, c);
      }
    }
    const double bh = r1 - r0 + 1;
    const double bw = c1 - c0 + 1;
    // Square bounding box filled to about pi/4.
    CHECK(bh == doctest::Approx(bw).epsilon(0.1));
    CHECK(static_cast<double>(count_foreground(s.gt)) / (bh * bw) == doctest::Approx(3.14159265 / 4.0).epsilon(0.08));
  }
}

TEST_CASE("shifts keep the geometry") {
  for (auto shift : {DomainShift::intensity, DomainShift::texture}) {
    for (auto family : {ShapeFamily::disk, ShapeFamily::thin_bar}) {
      SynthOptions o;
      o.seed = 8;
      o.n_instances = 6;
      o.family = family;
      const Dataset plain = synth_dataset(o);
      o.shift = shift;
      const Dataset shifted = synth_dataset(o);
      REQUIRE(plain.classes[0].samples.size() == shifted.classes[0].samples.size());
      for (std::size_t i = 0; i < plain.classes[0].samples.size(); ++i) {
        CHECK(plain.classes[0].samples[i].gt == shifted.classes[0].samples[i].gt);
        CHECK_FALSE(*plain.classes[0].samples[i].image == *shifted.classes[0].samples[i].image);
      }
    }
  }
}

TEST_CASE("intensity shift hurts a model trained without it") {
  const ToyModel& model = fixtures::small_pretrained();
  auto first_click_iou = [&](DomainShift shift) {
    double total = 0.0;
    const auto samples = fixtures::shapes(404, 8, shift).all_samples();
    for (const Sample& s : samples) {
      const ClickHistory clicks{first_click(s.gt)};
      const ProbMap p = model.predict(model.encode(*s.image), clicks, ProbMap(s.gt.height(), s.gt.width(), 0.0));
      total += iou(s.gt, binarize(p));
    }
    return total / static_cast<double>(samples.size());
  };
  const double plain = first_click_iou(DomainShift::none);
  const double shifted = first_click_iou(DomainShift::intensity);
  MESSAGE("click-1 IoU none " << plain << " intensity " << shifted);
  CHECK(shifted < plain);
}

TEST_CASE("class statistics") {
  Dataset d;
  DatasetClass full{"full", {}};
  DatasetClass quarter{"quarter", {}};
  auto img = std::make_shared<const Image>(gray_image(8, 8, 0.1));
  full.samples.push_back(Sample{"a_0", img, BinaryMask(8, 8, 1)});
  quarter.samples.push_back(Sample{"b_0", img, box(8, 8, 0, 0, 4, 4)});
  quarter.samples.push_back(Sample{"b_1", img, box(8, 8, 4, 4, 8, 8)});
  d.classes = {full, quarter};
  const auto stats = class_stats(d);
  REQUIRE(stats.size() == 2);
  CHECK(stats[0].mean_area_percent == 100.0);
  CHECK(stats[1].mean_area_percent == 25.0);
  CHECK(stats[1].n_instances == 2);

  const auto from_manifest = class_stats(load_dataset(write_fixture("stats")));
  CHECK(from_manifest[0].mean_area_percent == doctest::Approx(25.0));
  CHECK(from_manifest[1].mean_area_percent == doctest::Approx(100.0 * 4.0 / 64.0));
}

TEST_CASE("reference class counts add up") {
  std::size_t masks = 0, images = 0;
  for (const auto& c : kWsesegCounts) {
    masks += c.masks;
    images += c.images;
  }
  CHECK(std::size(kWsesegCounts) == 10);
  CHECK(masks == kWsesegTotalMasks);
  CHECK(images == kWsesegTotalImages);
  CHECK(masks == 7452);
  CHECK(images == 4221);
}

TEST_CASE("enum names round trip") {
  for (auto f : {ShapeFamily::disk, ShapeFamily::ellipse, ShapeFamily::polygon, ShapeFamily::thin_bar}) {
    CHECK(parse_shape_family(to_string(f)) == f);
  }
  for (auto s : {DomainShift::none, DomainShift::intensity, DomainShift::texture}) {
    CHECK(parse_domain_shift(to_string(s)) == s);
  }
  CHECK_THROWS_AS(parse_shape_family("blob"), std::invalid_argument);
}

}  // TEST_SUITE
