#include "intseg/adapt.hpp"

#include <charconv>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "intseg/maskops.hpp"

namespace intseg {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw std::invalid_argument("config: '" + std::string(key) + "' expects a number, got '" +
                                std::string(v) + "'");
  }
  return out;
}

int parse_int(std::string_view key, std::string_view v) {
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw std::invalid_argument("config: '" + std::string(key) + "' expects an integer, got '" +
                                std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw std::invalid_argument("config: '" + std::string(key) + "' expects a flag, got '" +
                              std::string(v) + "'");
}

}  // namespace

std::string to_string(CaMode mode) {
  switch (mode) {
    case CaMode::off: return "off";
    case CaMode::reset: return "reset";
    case CaMode::continuous: return "continuous";
  }
  return "off";
}

std::string to_string(RmMode mode) {
  switch (mode) {
    case RmMode::off: return "off";
    case RmMode::untreated: return "untreated";
    case RmMode::erosion: return "erosion";
    case RmMode::confidence: return "confidence";
  }
  return "off";
}

CaMode parse_ca_mode(std::string_view s) {
  if (s == "off" || s == "none" || s == "-") return CaMode::off;
  if (s == "reset" || s == "R") return CaMode::reset;
  if (s == "continuous" || s == "C") return CaMode::continuous;
  throw std::invalid_argument("unknown CA mode '" + std::string(s) + "'");
}

RmMode parse_rm_mode(std::string_view s) {
  if (s == "off" || s == "none" || s == "-") return RmMode::off;
  if (s == "untreated" || s == "U") return RmMode::untreated;
  if (s == "erosion" || s == "E") return RmMode::erosion;
  if (s == "confidence" || s == "CT") return RmMode::confidence;
  throw std::invalid_argument("unknown RM mode '" + std::string(s) + "'");
}

std::string table_label(CaMode mode) {
  switch (mode) {
    case CaMode::off: return "";
    case CaMode::reset: return "R";
    case CaMode::continuous: return "C";
  }
  return "";
}

std::string table_label(RmMode mode) {
  switch (mode) {
    case RmMode::off: return "";
    case RmMode::untreated: return "U";
    case RmMode::erosion: return "E";
    case RmMode::confidence: return "CT";
  }
  return "";
}

void AdaptationConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("config: lr must be > 0");
  if (!(delta > 0.0 && delta < 0.5)) throw std::invalid_argument("config: delta must lie in (0, 0.5)");
  if (rm_mode == RmMode::erosion && erosion_k < 1) {
    throw std::invalid_argument("config: erosion_k must be >= 1 with rm=erosion");
  }
  if (erosion_k < 0) throw std::invalid_argument("config: erosion_k must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw std::invalid_argument("config: adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw std::invalid_argument("config: adam_beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("config: adam_eps must be > 0");
  if (steps_per_event < 1) throw std::invalid_argument("config: steps_per_event must be >= 1");
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw std::invalid_argument("config: iou_threshold must lie in (0, 1]");
  }
  if (max_clicks < 1) throw std::invalid_argument("config: max_clicks must be >= 1");
}

void AdaptationConfig::set(std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  if (key == "ca") {
    ca_mode = parse_ca_mode(value);
  } else if (key == "rm") {
    rm_mode = parse_rm_mode(value);
  } else if (key == "cm") {
    cm_enabled = parse_bool(key, value);
  } else if (key == "lr") {
    if (value == "sam") {
      lr = kSamLr;
    } else if (value == "hqsam") {
      lr = kHqSamLr;
    } else if (value == "toy") {
      lr = kToyLr;
    } else {
      lr = parse_double(key, value);
    }
  } else if (key == "erosion_k") {
    erosion_k = parse_int(key, value);
  } else if (key == "delta") {
    delta = parse_double(key, value);
  } else if (key == "adam_beta1") {
    adam_beta1 = parse_double(key, value);
  } else if (key == "adam_beta2") {
    adam_beta2 = parse_double(key, value);
  } else if (key == "adam_eps") {
    adam_eps = parse_double(key, value);
  } else if (key == "steps_per_event") {
    steps_per_event = parse_int(key, value);
  } else if (key == "iou_threshold") {
    iou_threshold = parse_double(key, value);
  } else if (key == "max_clicks") {
    max_clicks = parse_int(key, value);
  } else {
    throw std::invalid_argument("config: unknown key '" + std::string(key) + "'");
  }
}

std::string AdaptationConfig::to_text() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "ca=" << to_string(ca_mode) << '\n'
     << "rm=" << to_string(rm_mode) << '\n'
     << "cm=" << (cm_enabled ? 1 : 0) << '\n'
     << "lr=" << lr << '\n'
     << "erosion_k=" << erosion_k << '\n'
     << "delta=" << delta << '\n'
     << "adam_beta1=" << adam_beta1 << '\n'
     << "adam_beta2=" << adam_beta2 << '\n'
     << "adam_eps=" << adam_eps << '\n'
     << "steps_per_event=" << steps_per_event << '\n'
     << "iou_threshold=" << iou_threshold << '\n'
     << "max_clicks=" << max_clicks << '\n';
  return os.str();
}

AdaptationConfig AdaptationConfig::from_text(std::string_view text) { return from_text(text, AdaptationConfig{}); }

AdaptationConfig AdaptationConfig::from_text(std::string_view text, const AdaptationConfig& base) {
  AdaptationConfig cfg = base;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key=value, got '" + std::string(line) + "'");
    }
    cfg.set(line.substr(0, eq), line.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

TriMask result_pseudo_label(const ProbMap& result, RmMode mode, int erosion_k, double delta) {
  switch (mode) {
    case RmMode::untreated: return to_trimask(binarize(result, 0.5));
    case RmMode::erosion: return erosion_trimask(binarize(result, 0.5), erosion_k);
    case RmMode::confidence: return confidence_trimask(result, delta);
    case RmMode::off: break;
  }
  throw std::invalid_argument("result_pseudo_label: rm mode is off");
}

Adapter::Adapter(ToyModel& model, AdaptationConfig config)
    : model_(model), config_(config), pre_image_(snapshot(model.params())) {
  config_.validate();
  notice_ = [](std::string_view msg) { std::clog << "[adapt] " << msg << '\n'; };
}

void Adapter::begin_image() {
  pre_image_ = snapshot(model_.params());
  if (config_.ca_mode == CaMode::reset) transient_ = OptimizerState{};
  in_image_ = true;
}

std::vector<double> Adapter::click_adapt(const ImageFeatures& features, const ClickHistory& clicks,
                                         const ProbMap& prev_mask) {
  if (config_.ca_mode == CaMode::off) throw std::logic_error("click_adapt: click adaptation is off");
  if (clicks.empty()) throw std::logic_error("click_adapt: no clicks to adapt to");
  const TriMask target = sparse_mask_from_clicks(clicks, features.height, features.width);
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(config_.steps_per_event));
  for (int s = 0; s < config_.steps_per_event; ++s) {
    const LossGradients lg = model_.loss_gradients(features, clicks, prev_mask, target);
    losses.push_back(lg.loss);
    adam_step(model_.params().values(), lg.grads.values(), transient_, config_.lr, config_.adam());
    ++transient_steps_;
  }
  return losses;
}

bool Adapter::persistent_step(const ImageFeatures& features, const ClickHistory& clicks,
                              const ProbMap& prev_mask, const TriMask& target, const char* what) {
  if (count_labeled(target) == 0) {
    ++skipped_;
    if (notice_) notice_(std::string(what) + " update skipped: target is all-ignore");
    return false;
  }
  for (int s = 0; s < config_.steps_per_event; ++s) {
    const LossGradients lg = model_.loss_gradients(features, clicks, prev_mask, target);
    adam_step(model_.params().values(), lg.grads.values(), persistent_, config_.lr, config_.adam());
  }
  return true;
}

FinishReport Adapter::finish_image(const ImageFeatures& features, const ClickHistory& clicks,
                                   const ProbMap& prev_mask, const ProbMap& result) {
  FinishReport report;
  if (config_.ca_mode == CaMode::reset && in_image_) {
    restore(pre_image_, model_.params());
    transient_ = OptimizerState{};
    report.reset = true;
  }
  in_image_ = false;

  if (config_.cm_enabled && !clicks.empty()) {
    const TriMask target = sparse_mask_from_clicks(clicks, features.height, features.width);
    report.cm_step = persistent_step(features, clicks, prev_mask, target, "CM");
    if (report.cm_step) cm_steps_ += config_.steps_per_event;
  }

  if (config_.rm_mode != RmMode::off) {
    const TriMask pseudo = result_pseudo_label(result, config_.rm_mode, config_.erosion_k, config_.delta);
    report.rm_step = persistent_step(features, clicks, prev_mask, pseudo, "RM");
    report.rm_skipped = !report.rm_step;
    if (report.rm_step) rm_steps_ += config_.steps_per_event;
  }
  return report;
}

}  // namespace intseg
