#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "intseg/adam.hpp"
#include "intseg/types.hpp"

namespace intseg {

// Small interactive segmentation model: a fixed image encoder, a click/mask
// prompt encoder and a trainable per-pixel mask decoder. Only the decoder has
// parameters, so an image is encoded once per session and every click costs
// one decoder pass.

inline constexpr int kImageChannels = 9;
inline constexpr int kPromptChannels = 3;
inline constexpr int kDecoderInputs = kImageChannels + kPromptChannels;
inline constexpr int kDecoderHidden = 16;
inline constexpr double kDefaultSigma = 10.0;

/// Per-pixel image feature vectors, pixel-major (channels contiguous).
/// Channel layout: 0-2 RGB mapped to [-1,1]; 3 grayscale gradient magnitude;
/// 4-6 box-blurred intensity (radius 2, 4, 8) mapped to [-1,1]; 7-8 row and
/// column coordinates in [-1,1].
struct ImageFeatures {
  int height = 0;
  int width = 0;
  int channels = kImageChannels;
  std::vector<double> data;

  const double* pixel(std::size_t i) const { return data.data() + i * channels; }
  double at(int row, int col, int ch) const {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  friend bool operator==(const ImageFeatures&, const ImageFeatures&) = default;
};

/// Positive heatmap, negative heatmap and previous-mask channel.
struct PromptFeatures {
  int height = 0;
  int width = 0;
  std::vector<double> positive;
  std::vector<double> negative;
  std::vector<double> previous;
};

/// Weights of the (C+3) -> 16 -> 1 decoder, stored flat:
/// W1 (hidden x inputs, row-major) | b1 (hidden) | w2 (hidden) | b2.
class DecoderParams {
 public:
  static constexpr std::size_t kW1 = 0;
  static constexpr std::size_t kB1 = kW1 + std::size_t{kDecoderHidden} * kDecoderInputs;
  static constexpr std::size_t kW2 = kB1 + kDecoderHidden;
  static constexpr std::size_t kB2 = kW2 + kDecoderHidden;
  static constexpr std::size_t kCount = kB2 + 1;

  DecoderParams() { values_.fill(0.0); }

  /// Zero-mean uniform weights scaled by fan-in; biases zero.
  static DecoderParams initialize(std::uint64_t seed);

  double& w1(int hidden, int input) { return values_[kW1 + hidden * kDecoderInputs + input]; }
  double w1(int hidden, int input) const { return values_[kW1 + hidden * kDecoderInputs + input]; }
  double& b1(int hidden) { return values_[kB1 + hidden]; }
  double b1(int hidden) const { return values_[kB1 + hidden]; }
  double& w2(int hidden) { return values_[kW2 + hidden]; }
  double w2(int hidden) const { return values_[kW2 + hidden]; }
  double& b2() { return values_[kB2]; }
  double b2() const { return values_[kB2]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool all_finite() const;
  friend bool operator==(const DecoderParams&, const DecoderParams&) = default;

 private:
  std::array<double, kCount> values_;
};

ImageFeatures encode_image(const Image& image);

/// Heatmap value at q is max over same-label clicks c of exp(-|q-c|^2 / (2 sigma^2)).
PromptFeatures encode_prompts(const ClickHistory& clicks, const ProbMap& prev_mask, double sigma);

/// Per-pixel logistic output. Throws on non-finite parameters.
ProbMap predict(const ImageFeatures& features, const PromptFeatures& prompts,
                const DecoderParams& params);

struct LossGradients {
  double loss = 0.0;
  DecoderParams grads;
};

/// Class-balanced cross-entropy of predict() against a tri-mask target and
/// its exact gradient with respect to the decoder parameters. Only labeled
/// pixels are visited. Throws EmptyTarget on an all-ignore target.
LossGradients loss_gradients(const ImageFeatures& features, const PromptFeatures& prompts,
                             const DecoderParams& params, const TriMask& target);

/// Bit-exact copy of decoder parameters and, optionally, optimizer state.
struct ParamSnapshot {
  DecoderParams params;
  std::optional<OptimizerState> optimizer;
};

ParamSnapshot snapshot(const DecoderParams& params, const OptimizerState* optimizer = nullptr);
void restore(const ParamSnapshot& snap, DecoderParams& params, OptimizerState* optimizer = nullptr);

/// Decoder parameters plus the prompt-encoder bandwidth.
class ToyModel {
 public:
  ToyModel() = default;
  explicit ToyModel(DecoderParams params, double sigma = kDefaultSigma);

  ImageFeatures encode(const Image& image) const { return encode_image(image); }
  PromptFeatures prompts(const ClickHistory& clicks, const ProbMap& prev_mask) const {
    return encode_prompts(clicks, prev_mask, sigma_);
  }
  ProbMap predict(const ImageFeatures& features, const ClickHistory& clicks,
                  const ProbMap& prev_mask) const;
  LossGradients loss_gradients(const ImageFeatures& features, const ClickHistory& clicks,
                               const ProbMap& prev_mask, const TriMask& target) const;

  DecoderParams& params() { return params_; }
  const DecoderParams& params() const { return params_; }
  double sigma() const { return sigma_; }

  /// Text container, see docs/param_format.md.
  void save(const std::string& path) const;
  static ToyModel load(const std::string& path);
  std::string serialize() const;
  static ToyModel deserialize(const std::string& text);

 private:
  DecoderParams params_;
  double sigma_ = kDefaultSigma;
};

struct PretrainOptions {
  int epochs = 30;
  double lr = 5e-3;
  std::uint64_t seed = 0;
  /// Upper bound on the number of simulated clicks per training example.
  int max_clicks = 8;
  double sigma = kDefaultSigma;
  AdamHyper adam;
};

/// Trains a fresh decoder with dense class-balanced BCE on iteratively
/// simulated click sequences. Deterministic given the options.
ToyModel pretrain_base(std::span<const Sample> dataset, const PretrainOptions& options);

}  // namespace intseg
