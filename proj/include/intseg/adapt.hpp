#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "intseg/adam.hpp"
#include "intseg/losses.hpp"
#include "intseg/toymodel.hpp"
#include "intseg/types.hpp"

namespace intseg {

/// Click adaptation: off, reverted after every image, or kept.
enum class CaMode { off, reset, continuous };
/// Result-mask pseudo label: off, untreated, erosion-filtered, confidence-thresholded.
enum class RmMode { off, untreated, erosion, confidence };

/// Learning-rate presets. The SAM-scale values are kept for reference; the
/// built-in decoder has a few hundred parameters and needs a far larger step.
inline constexpr double kSamLr = 5e-8;
inline constexpr double kHqSamLr = 1e-6;
inline constexpr double kToyLr = 1e-2;

struct AdaptationConfig {
  CaMode ca_mode = CaMode::off;
  RmMode rm_mode = RmMode::off;
  bool cm_enabled = false;
  double lr = kToyLr;
  int erosion_k = 5;
  double delta = 0.45;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int steps_per_event = 1;
  double iou_threshold = 0.85;
  int max_clicks = 20;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool adapts() const { return ca_mode != CaMode::off || rm_mode != RmMode::off || cm_enabled; }
  AdamHyper adam() const { return {adam_beta1, adam_beta2, adam_eps}; }

  /// "key=value" lines; '#' starts a comment.
  std::string to_text() const;
  static AdaptationConfig from_text(std::string_view text);
  static AdaptationConfig from_text(std::string_view text, const AdaptationConfig& base);
  /// Applies one "key=value" assignment.
  void set(std::string_view key, std::string_view value);

  friend bool operator==(const AdaptationConfig&, const AdaptationConfig&) = default;
};

std::string to_string(CaMode mode);
std::string to_string(RmMode mode);
CaMode parse_ca_mode(std::string_view s);
RmMode parse_rm_mode(std::string_view s);

/// Short table labels: "", "R", "C" / "", "U", "E", "CT".
std::string table_label(CaMode mode);
std::string table_label(RmMode mode);

/// Builds the dense pseudo label the RM policy trains on.
TriMask result_pseudo_label(const ProbMap& result, RmMode mode, int erosion_k, double delta);

struct FinishReport {
  bool reset = false;
  bool cm_step = false;
  bool rm_step = false;
  bool rm_skipped = false;
};

/// Test-time adaptation of one ToyModel. CA steps use a transient optimizer
/// that is discarded with the reset snapshot; CM and RM steps use a persistent
/// optimizer that never sees CA gradients. Requires exclusive access to the model.
class Adapter {
 public:
  using NoticeSink = std::function<void(std::string_view)>;

  Adapter(ToyModel& model, AdaptationConfig config);

  const AdaptationConfig& config() const { return config_; }
  /// Swaps the policy while keeping both optimizer states.
  void set_config(const AdaptationConfig& config) {
    config.validate();
    config_ = config;
  }
  ToyModel& model() { return model_; }

  /// Captures the pre-image parameters for a later reset.
  void begin_image();

  /// steps_per_event iterations of predict -> sparse BCE on all clicks so far
  /// -> transient Adam step. Returns the loss before each step.
  std::vector<double> click_adapt(const ImageFeatures& features, const ClickHistory& clicks,
                                  const ProbMap& prev_mask);

  /// End-of-image policies in order: reset (CA=R), CM step, RM step.
  /// `prev_mask` is the prompt mask of the final prediction and `result` its
  /// probability map, both produced by the parameters active at session end.
  FinishReport finish_image(const ImageFeatures& features, const ClickHistory& clicks,
                            const ProbMap& prev_mask, const ProbMap& result);

  const OptimizerState& transient_state() const { return transient_; }
  const OptimizerState& persistent_state() const { return persistent_; }
  void set_transient_state(OptimizerState state) { transient_ = std::move(state); }
  std::int64_t transient_steps() const { return transient_steps_; }
  std::int64_t cm_steps() const { return cm_steps_; }
  std::int64_t rm_steps() const { return rm_steps_; }
  std::int64_t persistent_steps() const { return cm_steps_ + rm_steps_; }
  std::int64_t skipped_updates() const { return skipped_; }

  void set_notice_sink(NoticeSink sink) { notice_ = std::move(sink); }

 private:
  bool persistent_step(const ImageFeatures& features, const ClickHistory& clicks,
                       const ProbMap& prev_mask, const TriMask& target, const char* what);

  ToyModel& model_;
  AdaptationConfig config_;
  OptimizerState transient_;
  OptimizerState persistent_;
  ParamSnapshot pre_image_;
  bool in_image_ = false;
  std::int64_t transient_steps_ = 0;
  std::int64_t cm_steps_ = 0;
  std::int64_t rm_steps_ = 0;
  std::int64_t skipped_ = 0;
  NoticeSink notice_;
};

}  // namespace intseg
