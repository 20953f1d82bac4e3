#include "intseg/bench.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "intseg/clicksim.hpp"
#include "intseg/maskops.hpp"
#include "intseg/random.hpp"

namespace intseg {

void ToySessionModel::begin_image(const Image& image) {
  features_ = model_.encode(image);
  if (adapter_ != nullptr) adapter_->begin_image();
}

ProbMap ToySessionModel::predict(const ClickHistory& clicks, const ProbMap& prev_mask) {
  return model_.predict(features_, clicks, prev_mask);
}

bool ToySessionModel::after_click(const ClickHistory& clicks, const ProbMap& prev_mask) {
  if (adapter_ == nullptr || adapter_->config().ca_mode == CaMode::off) return false;
  adapter_->click_adapt(features_, clicks, prev_mask);
  return true;
}

void ToySessionModel::end_image(const SessionResult& result) {
  if (adapter_ == nullptr) return;
  adapter_->finish_image(features_, result.clicks, result.final_prompt_mask, result.result_probmap);
}

SessionResult run_session(SessionModel& model, const BinaryMask& gt, const Image& image,
                          const SessionLimits& limits, std::string instance_id) {
  if (count_foreground(gt) == 0) throw std::invalid_argument("run_session: empty ground truth " + instance_id);
  if (gt.height() != image.height || gt.width() != image.width) {
    throw DimensionMismatch("run_session: mask and image dimensions differ for " + instance_id);
  }
  if (limits.max_clicks < 1) throw std::invalid_argument("run_session: max_clicks must be >= 1");

  SessionResult result;
  result.instance_id = std::move(instance_id);
  model.begin_image(image);

  ProbMap prev(gt.height(), gt.width(), 0.0);
  BinaryMask shown(gt.height(), gt.width(), 0);
  for (int tau = 1; tau <= limits.max_clicks; ++tau) {
    // A prediction that already matches gt exactly would have stopped the loop.
    result.clicks.push_back(next_click(gt, shown, result.clicks));
    ProbMap prob = model.predict(result.clicks, prev);
    if (model.after_click(result.clicks, prev)) prob = model.predict(result.clicks, prev);
    shown = binarize(prob, 0.5);
    result.final_iou = iou(gt, shown);
    result.noc = tau;
    result.final_prompt_mask = prev;
    result.result_probmap = prob;
    prev = std::move(prob);
    if (result.final_iou >= limits.iou_threshold) {
      result.success = true;
      break;
    }
  }
  if (!result.success) result.noc = limits.max_clicks;
  model.end_image(result);
  return result;
}

ClassMetrics aggregate(std::span<const SessionResult> results, std::string class_name) {
  if (results.empty()) throw std::invalid_argument("aggregate: no session results");
  ClassMetrics m;
  m.class_name = std::move(class_name);
  m.n_instances = results.size();
  double clicks = 0.0;
  std::size_t failures = 0;
  for (const auto& r : results) {
    clicks += r.noc;
    failures += r.success ? 0 : 1;
  }
  m.mean_noc = clicks / static_cast<double>(results.size());
  m.failure_rate = 100.0 * static_cast<double>(failures) / static_cast<double>(results.size());
  return m;
}

MacroAverage macro_average(std::span<const ClassMetrics> per_class) {
  if (per_class.empty()) throw std::invalid_argument("macro_average: no classes");
  MacroAverage avg;
  for (const auto& c : per_class) {
    avg.noc += c.mean_noc;
    avg.fr += c.failure_rate;
  }
  avg.noc /= static_cast<double>(per_class.size());
  avg.fr /= static_cast<double>(per_class.size());
  return avg;
}

ConfigResult run_config(const Dataset& dataset, const ToyModel& base,
                        const AdaptationConfig& config, const RunOptions& options) {
  config.validate();
  if (dataset.total_instances() == 0) throw std::invalid_argument("run_config: empty dataset");
  ConfigResult out;
  out.config = config;
  const SessionLimits limits{config.iou_threshold, config.max_clicks};

  Rng order_rng(options.seed);
  ToyModel shared = base;
  std::optional<Adapter> shared_adapter;
  if (options.cross_class) {
    if (options.on_run_start) options.on_run_start(shared);
    shared_adapter.emplace(shared, config);
    shared_adapter->set_notice_sink({});
  }

  for (const auto& cls : dataset.classes) {
    if (cls.samples.empty()) continue;
    std::vector<std::size_t> order(cls.samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order);

    ToyModel local = base;
    std::optional<Adapter> local_adapter;
    ToyModel* model = &shared;
    Adapter* adapter = nullptr;
    if (options.cross_class) {
      adapter = &*shared_adapter;
    } else {
      if (options.on_run_start) options.on_run_start(local);
      model = &local;
      local_adapter.emplace(local, config);
      local_adapter->set_notice_sink({});
      adapter = &*local_adapter;
    }
    ToySessionModel session_model(*model, config.adapts() ? adapter : nullptr);

    std::vector<SessionResult> results;
    results.reserve(order.size());
    for (std::size_t idx : order) {
      const Sample& s = cls.samples[idx];
      results.push_back(run_session(session_model, s.gt, *s.image, limits, s.id));
      if (options.on_session) options.on_session(cls.name, results.back());
    }
    out.classes.push_back(aggregate(results, cls.name));
    if (!options.cross_class) {
      out.transient_steps += adapter->transient_steps();
      out.persistent_steps += adapter->persistent_steps();
      out.skipped_updates += adapter->skipped_updates();
    }
  }
  if (options.cross_class) {
    out.transient_steps = shared_adapter->transient_steps();
    out.persistent_steps = shared_adapter->persistent_steps();
    out.skipped_updates = shared_adapter->skipped_updates();
  }
  out.average = macro_average(out.classes);
  return out;
}

std::vector<ConfigResult> run_sweep(const Dataset& dataset, const ToyModel& base,
                                    std::span<const AdaptationConfig> configs,
                                    const RunOptions& options) {
  if (dataset.total_instances() == 0) throw std::invalid_argument("run_sweep: empty dataset");
  std::vector<ConfigResult> out;
  out.reserve(configs.size());
  for (const auto& cfg : configs) out.push_back(run_config(dataset, base, cfg, options));
  return out;
}

std::vector<AdaptationConfig> results_table_configs(const AdaptationConfig& base) {
  auto make = [&](CaMode ca, RmMode rm, bool cm) {
    AdaptationConfig c = base;
    c.ca_mode = ca;
    c.rm_mode = rm;
    c.cm_enabled = cm;
    return c;
  };
  return {
      make(CaMode::off, RmMode::off, false),
      make(CaMode::reset, RmMode::erosion, true),
      make(CaMode::reset, RmMode::confidence, true),
      make(CaMode::reset, RmMode::off, false),
      make(CaMode::continuous, RmMode::off, false),
      make(CaMode::off, RmMode::erosion, false),
      make(CaMode::off, RmMode::confidence, false),
      make(CaMode::off, RmMode::off, true),
      make(CaMode::reset, RmMode::off, true),
      make(CaMode::reset, RmMode::untreated, true),
  };
}

std::string format_noc(double noc) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", noc);
  return buf;
}

std::string format_fr(double fr) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fr);
  return buf;
}

std::vector<TableRow> table_rows(std::span<const ConfigResult> results) {
  std::vector<TableRow> rows;
  for (const auto& r : results) {
    const std::string ca = to_string(r.config.ca_mode);
    const std::string rm = to_string(r.config.rm_mode);
    const int cm = r.config.cm_enabled ? 1 : 0;
    std::size_t total = 0;
    for (const auto& c : r.classes) {
      rows.push_back({ca, rm, cm, c.class_name, c.n_instances, c.mean_noc, c.failure_rate});
      total += c.n_instances;
    }
    rows.push_back({ca, rm, cm, kAverageClass, total, r.average.noc, r.average.fr});
  }
  return rows;
}

std::string to_csv(std::span<const TableRow> rows) {
  std::ostringstream os;
  os << "ca,rm,cm,class,n,noc,fr\n";
  for (const auto& r : rows) {
    if (r.class_name.find_first_of(",\"\n") != std::string::npos) {
      throw std::invalid_argument("to_csv: class name '" + r.class_name + "' needs quoting");
    }
    os << r.ca << ',' << r.rm << ',' << r.cm << ',' << r.class_name << ',' << r.n << ','
       << format_noc(r.noc) << ',' << format_fr(r.fr) << '\n';
  }
  return os.str();
}

std::vector<TableRow> parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "ca,rm,cm,class,n,noc,fr") {
    throw std::invalid_argument("parse_csv: unexpected header");
  }
  std::vector<TableRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw std::invalid_argument("parse_csv: expected 7 fields in '" + line + "'");
    TableRow r;
    r.ca = f[0];
    r.rm = f[1];
    r.cm = std::stoi(f[2]);
    r.class_name = f[3];
    r.n = static_cast<std::size_t>(std::stoull(f[4]));
    r.noc = std::stod(f[5]);
    r.fr = std::stod(f[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string to_markdown(std::span<const ConfigResult> results) {
  if (results.empty()) throw std::invalid_argument("to_markdown: no results");
  std::ostringstream os;
  os << "| CA | RM | CM |";
  for (const auto& c : results.front().classes) os << ' ' << c.class_name << " NoC | " << c.class_name << " FR |";
  os << " Average NoC | Average FR |\n";
  os << "|---|---|---|";
  for (std::size_t i = 0; i < results.front().classes.size(); ++i) os << "---:|---:|";
  os << "---:|---:|\n";
  for (const auto& r : results) {
    os << "| " << table_label(r.config.ca_mode) << " | " << table_label(r.config.rm_mode) << " | "
       << (r.config.cm_enabled ? "✓" : "") << " |";
    for (const auto& c : r.classes) os << ' ' << format_noc(c.mean_noc) << " | " << format_fr(c.failure_rate) << " |";
    os << ' ' << format_noc(r.average.noc) << " | " << format_fr(r.average.fr) << " |\n";
  }
  return os.str();
}

void write_csv(const std::string& path, std::span<const TableRow> rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << to_csv(rows);
  os.flush();
  if (!os) throw std::runtime_error("failed writing " + path);
}

}  // namespace intseg
