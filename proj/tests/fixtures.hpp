#pragma once

#include <filesystem>
#include <string>

#include "intseg/dataio.hpp"
#include "intseg/toymodel.hpp"

namespace fixtures {

/// All four shape families as classes, n instances each.
inline intseg::Dataset shapes(std::uint64_t seed, int n, intseg::DomainShift shift, int size = 64) {
  intseg::Dataset d;
  for (auto f : {intseg::ShapeFamily::disk, intseg::ShapeFamily::ellipse, intseg::ShapeFamily::polygon,
                 intseg::ShapeFamily::thin_bar}) {
    intseg::SynthOptions o;
    o.seed = seed;
    o.n_instances = n;
    o.family = f;
    o.shift = shift;
    o.image_size = size;
    for (auto& cls : intseg::synth_dataset(o).classes) d.classes.push_back(std::move(cls));
  }
  return d;
}

/// A quickly pretrained decoder, built once per process.
inline const intseg::ToyModel& small_pretrained() {
  static const intseg::ToyModel model = [] {
    const auto train = shapes(77, 12, intseg::DomainShift::none).all_samples();
    intseg::PretrainOptions o;
    o.epochs = 6;
    o.seed = 3;
    return intseg::pretrain_base(train, o);
  }();
  return model;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("intseg-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
