#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "intseg/adapt.hpp"
#include "intseg/dataio.hpp"
#include "intseg/toymodel.hpp"
#include "intseg/types.hpp"

namespace intseg {

/// Outcome of one simulated annotation session.
struct SessionResult {
  std::string instance_id;
  int noc = 0;
  bool success = false;
  double final_iou = 0.0;
  ClickHistory clicks;
  ProbMap result_probmap;
  /// Prompt mask that produced result_probmap (m_{tau-1} of the last step).
  ProbMap final_prompt_mask;
};

/// What the session loop needs from a segmenter. Stub models implement only
/// begin_image and predict.
class SessionModel {
 public:
  virtual ~SessionModel() = default;
  virtual void begin_image(const Image& image) = 0;
  virtual ProbMap predict(const ClickHistory& clicks, const ProbMap& prev_mask) = 0;
  /// Runs after the prediction for a new click. Returns true when the model
  /// changed and the displayed mask must be recomputed.
  virtual bool after_click(const ClickHistory& /*clicks*/, const ProbMap& /*prev_mask*/) { return false; }
  virtual void end_image(const SessionResult& /*result*/) {}
};

/// ToyModel behind the session interface, optionally driven by an Adapter.
class ToySessionModel : public SessionModel {
 public:
  explicit ToySessionModel(ToyModel& model, Adapter* adapter = nullptr)
      : model_(model), adapter_(adapter) {}

  void begin_image(const Image& image) override;
  ProbMap predict(const ClickHistory& clicks, const ProbMap& prev_mask) override;
  bool after_click(const ClickHistory& clicks, const ProbMap& prev_mask) override;
  void end_image(const SessionResult& result) override;

  const ImageFeatures& features() const { return features_; }

 private:
  ToyModel& model_;
  Adapter* adapter_;
  ImageFeatures features_;
};

struct SessionLimits {
  double iou_threshold = 0.85;
  int max_clicks = 20;
};

/// Simulated interaction on one instance, starting from an all-zero mask and
/// stopping at the first click whose (possibly re-predicted) binarized mask
/// reaches the IoU threshold. end_image runs before returning.
SessionResult run_session(SessionModel& model, const BinaryMask& gt, const Image& image,
                          const SessionLimits& limits = {}, std::string instance_id = {});

struct ClassMetrics {
  std::string class_name;
  std::size_t n_instances = 0;
  double mean_noc = 0.0;
  /// Percent.
  double failure_rate = 0.0;
};

/// Failures count as max-clicks toward the mean.
ClassMetrics aggregate(std::span<const SessionResult> results, std::string class_name = {});

struct MacroAverage {
  double noc = 0.0;
  double fr = 0.0;
};

/// Unweighted mean over classes.
MacroAverage macro_average(std::span<const ClassMetrics> per_class);

struct RunOptions {
  std::uint64_t seed = 0;
  /// One model adapts over all classes in sequence instead of a fresh copy per class.
  bool cross_class = false;
  /// Called with the model copy each config starts from (before anything runs).
  std::function<void(const ToyModel&)> on_run_start;
  /// Called after every session.
  std::function<void(const std::string& class_name, const SessionResult&)> on_session;
};

struct ConfigResult {
  AdaptationConfig config;
  std::vector<ClassMetrics> classes;
  MacroAverage average;
  std::int64_t transient_steps = 0;
  std::int64_t persistent_steps = 0;
  std::int64_t skipped_updates = 0;
};

/// One configuration over the whole dataset from a fresh copy of base.
ConfigResult run_config(const Dataset& dataset, const ToyModel& base,
                        const AdaptationConfig& config, const RunOptions& options = {});

std::vector<ConfigResult> run_sweep(const Dataset& dataset, const ToyModel& base,
                                    std::span<const AdaptationConfig> configs,
                                    const RunOptions& options = {});

/// The ten rows of the SAM/HQ-SAM results tables, in table order, sharing
/// the non-switch fields of base.
std::vector<AdaptationConfig> results_table_configs(const AdaptationConfig& base = {});

/// One line of the emitted CSV.
struct TableRow {
  std::string ca;
  std::string rm;
  int cm = 0;
  std::string class_name;
  std::size_t n = 0;
  double noc = 0.0;
  double fr = 0.0;
  friend bool operator==(const TableRow&, const TableRow&) = default;
};

inline constexpr const char* kAverageClass = "average";

/// Per-class rows followed by an "average" row for every config.
std::vector<TableRow> table_rows(std::span<const ConfigResult> results);

/// Header "ca,rm,cm,class,n,noc,fr"; noc with 3 decimals, fr with 2.
std::string to_csv(std::span<const TableRow> rows);
std::vector<TableRow> parse_csv(const std::string& text);

/// Configuration columns, then NoC/FR per class, then the average.
std::string to_markdown(std::span<const ConfigResult> results);

/// Writes CSV to path; throws std::runtime_error on failure.
void write_csv(const std::string& path, std::span<const TableRow> rows);

std::string format_noc(double noc);
std::string format_fr(double fr);

}  // namespace intseg
