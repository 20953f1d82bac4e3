#include "intseg/toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "intseg/clicksim.hpp"
#include "intseg/losses.hpp"
#include "intseg/maskops.hpp"
#include "intseg/random.hpp"

namespace intseg {

namespace {

constexpr int kMinImageSide = 8;
constexpr std::array<int, 3> kBlurRadii = {2, 4, 8};

// Clamp-to-edge box blur of a single-channel plane, separable.
std::vector<double> box_blur(const std::vector<double>& plane, int h, int w, int radius) {
  std::vector<double> tmp(plane.size());
  std::vector<double> out(plane.size());
  const double norm = 1.0 / (2 * radius + 1);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        s += plane[static_cast<std::size_t>(r) * w + std::clamp(c + d, 0, w - 1)];
      }
      tmp[static_cast<std::size_t>(r) * w + c] = s * norm;
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        s += tmp[static_cast<std::size_t>(std::clamp(r + d, 0, h - 1)) * w + c];
      }
      out[static_cast<std::size_t>(r) * w + c] = s * norm;
    }
  }
  return out;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Gathers the 12 decoder inputs of pixel i.
void gather_inputs(const ImageFeatures& f, const PromptFeatures& p, std::size_t i,
                   std::array<double, kDecoderInputs>& x) {
  const double* px = f.pixel(i);
  for (int c = 0; c < kImageChannels; ++c) x[c] = px[c];
  x[kImageChannels + 0] = p.positive[i];
  x[kImageChannels + 1] = p.negative[i];
  x[kImageChannels + 2] = p.previous[i];
}

// Returns the output logit; fills the hidden activations.
double forward_pixel(const std::array<double, kDecoderInputs>& x, const DecoderParams& params,
                     std::array<double, kDecoderHidden>& hidden) {
  double z = params.b2();
  for (int h = 0; h < kDecoderHidden; ++h) {
    double a = params.b1(h);
    for (int d = 0; d < kDecoderInputs; ++d) a += params.w1(h, d) * x[d];
    hidden[h] = std::tanh(a);
    z += params.w2(h) * hidden[h];
  }
  return z;
}

void check_prompt_shape(const ImageFeatures& features, const PromptFeatures& prompts) {
  const std::size_t n = static_cast<std::size_t>(features.height) * features.width;
  if (features.height != prompts.height || features.width != prompts.width ||
      prompts.positive.size() != n || prompts.negative.size() != n ||
      prompts.previous.size() != n || features.data.size() != n * features.channels ||
      features.channels != kImageChannels) {
    throw DimensionMismatch("decoder: image features and prompt features disagree in shape");
  }
}

}  // namespace

bool DecoderParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

DecoderParams DecoderParams::initialize(std::uint64_t seed) {
  DecoderParams p;
  Rng rng(seed);
  const double a1 = 1.0 / std::sqrt(static_cast<double>(kDecoderInputs));
  const double a2 = 1.0 / std::sqrt(static_cast<double>(kDecoderHidden));
  for (int h = 0; h < kDecoderHidden; ++h) {
    for (int d = 0; d < kDecoderInputs; ++d) p.w1(h, d) = rng.uniform(-a1, a1);
  }
  for (int h = 0; h < kDecoderHidden; ++h) p.w2(h) = rng.uniform(-a2, a2);
  return p;
}

ImageFeatures encode_image(const Image& image) {
  const int h = image.height;
  const int w = image.width;
  if (h < kMinImageSide || w < kMinImageSide) {
    throw std::invalid_argument("encode_image: image must be at least 8x8, got " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  if (image.rgb.size() != static_cast<std::size_t>(h) * w * 3) {
    throw std::invalid_argument("encode_image: pixel buffer does not match dimensions");
  }
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> gray(n);
  for (std::size_t i = 0; i < n; ++i) {
    gray[i] = (image.rgb[3 * i] + image.rgb[3 * i + 1] + image.rgb[3 * i + 2]) / 3.0;
  }

  ImageFeatures f;
  f.height = h;
  f.width = w;
  f.data.assign(n * kImageChannels, 0.0);
  auto set = [&](int r, int c, int ch, double v) {
    f.data[(static_cast<std::size_t>(r) * w + c) * kImageChannels + ch] = v;
  };
  auto g = [&](int r, int c) { return gray[static_cast<std::size_t>(r) * w + c]; };

  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (int ch = 0; ch < 3; ++ch) set(r, c, ch, 2.0 * image.at(r, c, ch) - 1.0);
      const double gx = 0.5 * (g(r, std::min(c + 1, w - 1)) - g(r, std::max(c - 1, 0)));
      const double gy = 0.5 * (g(std::min(r + 1, h - 1), c) - g(std::max(r - 1, 0), c));
      set(r, c, 3, std::sqrt(gx * gx + gy * gy));
      set(r, c, 7, 2.0 * r / (h - 1) - 1.0);
      set(r, c, 8, 2.0 * c / (w - 1) - 1.0);
    }
  }
  for (int s = 0; s < 3; ++s) {
    const auto blurred = box_blur(gray, h, w, kBlurRadii[s]);
    for (std::size_t i = 0; i < n; ++i) f.data[i * kImageChannels + 4 + s] = 2.0 * blurred[i] - 1.0;
  }
  return f;
}

PromptFeatures encode_prompts(const ClickHistory& clicks, const ProbMap& prev_mask, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("encode_prompts: sigma must be positive");
  const int h = prev_mask.height();
  const int w = prev_mask.width();
  const std::size_t n = prev_mask.size();
  PromptFeatures p;
  p.height = h;
  p.width = w;
  p.previous = prev_mask.data();
  p.positive.assign(n, 0.0);
  p.negative.assign(n, 0.0);

  const double inv = 1.0 / (2.0 * sigma * sigma);
  auto fill = [&](std::vector<double>& channel, ClickLabel label) {
    bool any = false;
    for (const Click& c : clicks) any |= c.label == label;
    if (!any) return;
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) {
        // max_c exp(-d_c^2 k) == exp(-min_c d_c^2 k)
        double best = std::numeric_limits<double>::infinity();
        for (const Click& c : clicks) {
          if (c.label != label) continue;
          const double dr = r - c.row;
          const double dc = col - c.col;
          best = std::min(best, dr * dr + dc * dc);
        }
        channel[static_cast<std::size_t>(r) * w + col] = std::exp(-best * inv);
      }
    }
  };
  fill(p.positive, ClickLabel::positive);
  fill(p.negative, ClickLabel::negative);
  return p;
}

ProbMap predict(const ImageFeatures& features, const PromptFeatures& prompts,
                const DecoderParams& params) {
  check_prompt_shape(features, prompts);
  if (!params.all_finite()) throw std::domain_error("predict: non-finite decoder parameters");
  ProbMap out(features.height, features.width, 0.0);
  std::array<double, kDecoderInputs> x{};
  std::array<double, kDecoderHidden> hidden{};
  for (std::size_t i = 0; i < out.size(); ++i) {
    gather_inputs(features, prompts, i, x);
    out[i] = sigmoid(forward_pixel(x, params, hidden));
  }
  return out;
}

LossGradients loss_gradients(const ImageFeatures& features, const PromptFeatures& prompts,
                             const DecoderParams& params, const TriMask& target) {
  check_prompt_shape(features, prompts);
  if (target.height() != features.height || target.width() != features.width) {
    throw DimensionMismatch("loss_gradients: target shape does not match features");
  }
  if (!params.all_finite()) throw std::domain_error("loss_gradients: non-finite decoder parameters");
  const BalancedWeights weights = balanced_weights(target);

  LossGradients out;
  std::array<double, kDecoderInputs> x{};
  std::array<double, kDecoderHidden> hidden{};
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto t = target[i];
    if (t == kIgnore) continue;
    const bool positive = t == 1;
    gather_inputs(features, prompts, i, x);
    const double p = sigmoid(forward_pixel(x, params, hidden));
    const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    out.loss += positive ? -std::log(pc) * weights.positive_weight
                         : -std::log(1.0 - pc) * weights.negative_weight;

    const double dz = balanced_bce_logit_grad(p, positive, weights);
    if (dz == 0.0) continue;
    auto& g = out.grads;
    g.b2() += dz;
    for (int h = 0; h < kDecoderHidden; ++h) {
      g.w2(h) += dz * hidden[h];
      const double da = dz * params.w2(h) * (1.0 - hidden[h] * hidden[h]);
      g.b1(h) += da;
      for (int d = 0; d < kDecoderInputs; ++d) g.w1(h, d) += da * x[d];
    }
  }
  return out;
}

ParamSnapshot snapshot(const DecoderParams& params, const OptimizerState* optimizer) {
  ParamSnapshot s{params, std::nullopt};
  if (optimizer != nullptr) s.optimizer = *optimizer;
  return s;
}

void restore(const ParamSnapshot& snap, DecoderParams& params, OptimizerState* optimizer) {
  params = snap.params;
  if (optimizer != nullptr && snap.optimizer.has_value()) *optimizer = *snap.optimizer;
}

ToyModel::ToyModel(DecoderParams params, double sigma) : params_(params), sigma_(sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("ToyModel: sigma must be positive");
}

ProbMap ToyModel::predict(const ImageFeatures& features, const ClickHistory& clicks,
                          const ProbMap& prev_mask) const {
  return intseg::predict(features, prompts(clicks, prev_mask), params_);
}

LossGradients ToyModel::loss_gradients(const ImageFeatures& features, const ClickHistory& clicks,
                                       const ProbMap& prev_mask, const TriMask& target) const {
  return intseg::loss_gradients(features, prompts(clicks, prev_mask), params_, target);
}

namespace {

constexpr const char* kMagic = "intseg-decoder";
constexpr int kFormatVersion = 1;

void write_block(std::ostream& os, const char* name, std::span<const double> values) {
  os << name << ' ' << values.size();
  for (double v : values) os << ' ' << v;
  os << '\n';
}

void read_block(std::istream& is, const char* name, std::span<double> values) {
  std::string tag;
  std::size_t count = 0;
  if (!(is >> tag >> count) || tag != name || count != values.size()) {
    throw std::runtime_error(std::string("decoder file: expected block '") + name + "' of " +
                             std::to_string(values.size()) + " values");
  }
  for (double& v : values) {
    if (!(is >> v)) throw std::runtime_error(std::string("decoder file: truncated block ") + name);
  }
}

}  // namespace

std::string ToyModel::serialize() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << kMagic << ' ' << kFormatVersion << '\n';
  os << "inputs " << kDecoderInputs << '\n';
  os << "hidden " << kDecoderHidden << '\n';
  os << "sigma " << sigma_ << '\n';
  const auto v = params_.values();
  write_block(os, "w1", v.subspan(DecoderParams::kW1, DecoderParams::kB1 - DecoderParams::kW1));
  write_block(os, "b1", v.subspan(DecoderParams::kB1, kDecoderHidden));
  write_block(os, "w2", v.subspan(DecoderParams::kW2, kDecoderHidden));
  write_block(os, "b2", v.subspan(DecoderParams::kB2, 1));
  return os.str();
}

ToyModel ToyModel::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kMagic) {
    throw std::runtime_error("decoder file: missing 'intseg-decoder' header");
  }
  if (version != kFormatVersion) {
    throw std::runtime_error("decoder file: unsupported version " + std::to_string(version));
  }
  std::string key;
  int inputs = 0;
  int hidden = 0;
  double sigma = 0.0;
  if (!(is >> key >> inputs) || key != "inputs" || !(is >> key >> hidden) || key != "hidden" ||
      !(is >> key >> sigma) || key != "sigma") {
    throw std::runtime_error("decoder file: malformed dimension header");
  }
  if (inputs != kDecoderInputs || hidden != kDecoderHidden) {
    throw std::runtime_error("decoder file: dimensions " + std::to_string(inputs) + "x" +
                             std::to_string(hidden) + " do not match this build");
  }
  DecoderParams params;
  auto v = params.values();
  read_block(is, "w1", v.subspan(DecoderParams::kW1, DecoderParams::kB1 - DecoderParams::kW1));
  read_block(is, "b1", v.subspan(DecoderParams::kB1, kDecoderHidden));
  read_block(is, "w2", v.subspan(DecoderParams::kW2, kDecoderHidden));
  read_block(is, "b2", v.subspan(DecoderParams::kB2, 1));
  if (!params.all_finite()) throw std::runtime_error("decoder file: non-finite parameter");
  return ToyModel(params, sigma);
}

void ToyModel::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write decoder file " + path);
  os << serialize();
  if (!os) throw std::runtime_error("failed writing decoder file " + path);
}

ToyModel ToyModel::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read decoder file " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  try {
    return deserialize(buf.str());
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

namespace {

// Random pixel whose distance to the object border is at least half the
// object's maximum; the exact pole is among the candidates.
Click jittered_first_click(const BinaryMask& gt, Rng& rng) {
  const auto sq = squared_distance_transform(gt);
  const std::int64_t peak = *std::max_element(sq.begin(), sq.end());
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < sq.size(); ++i) {
    if (sq[i] > 0 && 4 * sq[i] >= peak) candidates.push_back(i);
  }
  const std::size_t pick = candidates[rng.below(candidates.size())];
  return Click{static_cast<int>(pick / gt.width()), static_cast<int>(pick % gt.width()),
               ClickLabel::positive};
}

}  // namespace

ToyModel pretrain_base(std::span<const Sample> dataset, const PretrainOptions& options) {
  if (dataset.empty()) throw std::invalid_argument("pretrain_base: empty dataset");
  if (options.max_clicks < 1) throw std::invalid_argument("pretrain_base: max_clicks must be >= 1");
  ToyModel model(DecoderParams::initialize(options.seed), options.sigma);
  if (options.epochs <= 0) return model;

  std::unordered_map<const Image*, ImageFeatures> cache;
  for (const Sample& s : dataset) {
    if (count_foreground(s.gt) == 0) throw std::invalid_argument("pretrain_base: empty mask " + s.id);
    if (!cache.contains(s.image.get())) cache.emplace(s.image.get(), encode_image(*s.image));
  }

  Rng rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  OptimizerState opt;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t idx : order) {
      const Sample& s = dataset[idx];
      const ImageFeatures& features = cache.at(s.image.get());
      const int n_clicks = rng.range(1, options.max_clicks);
      ClickHistory clicks{jittered_first_click(s.gt, rng)};
      ProbMap prev(s.gt.height(), s.gt.width(), 0.0);
      for (int t = 1; t < n_clicks; ++t) {
        ProbMap prob = model.predict(features, clicks, prev);
        const BinaryMask pred = binarize(prob);
        if (pred == s.gt) break;
        clicks.push_back(next_click(s.gt, pred, clicks));
        prev = std::move(prob);
      }
      const auto lg = model.loss_gradients(features, clicks, prev, to_trimask(s.gt));
      adam_step(model.params().values(), lg.grads.values(), opt, options.lr, options.adam);
    }
  }
  return model;
}

}  // namespace intseg
