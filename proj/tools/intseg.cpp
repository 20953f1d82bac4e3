// intseg: command-line front end for benchmarking, data handling, model
// pretraining and the annotation service.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "intseg/adapt.hpp"
#include "intseg/annotsvc.hpp"
#include "intseg/bench.hpp"
#include "intseg/dataio.hpp"
#include "intseg/toymodel.hpp"

namespace fs = std::filesystem;
using namespace intseg;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

// Adaptation flags shared by bench and serve. Each flag is applied only when
// given, on top of an optional config file.
struct AdaptFlags {
  std::string config_file;
  std::string ca, rm, lr;
  std::optional<bool> cm;
  std::optional<double> iou_thr, delta;
  std::optional<int> max_clicks, erosion_k, steps;

  void add(CLI::App* app) {
    app->add_option("--config", config_file, "key=value adaptation config file");
    app->add_option("--ca", ca, "click adaptation: off | reset | continuous");
    app->add_option("--rm", rm, "result-mask adaptation: off | untreated | erosion | confidence");
    app->add_flag("--cm,!--no-cm", cm, "enable (or disable) click-mask adaptation");
    app->add_option("--lr", lr, "learning rate, or a preset: toy | sam | hqsam");
    app->add_option("--iou-thr", iou_thr, "session stop threshold");
    app->add_option("--max-clicks", max_clicks, "click cap per instance");
    app->add_option("--erosion-k", erosion_k, "erosion steps for RM=erosion");
    app->add_option("--delta", delta, "confidence margin for RM=confidence");
    app->add_option("--steps", steps, "optimizer steps per adaptation event");
  }

  AdaptationConfig resolve() const {
    AdaptationConfig c;
    if (!config_file.empty()) c = AdaptationConfig::from_text(read_file(config_file));
    if (!ca.empty()) c.set("ca", ca);
    if (!rm.empty()) c.set("rm", rm);
    if (cm) c.cm_enabled = *cm;
    if (!lr.empty()) c.set("lr", lr);
    if (iou_thr) c.iou_threshold = *iou_thr;
    if (max_clicks) c.max_clicks = *max_clicks;
    if (erosion_k) c.erosion_k = *erosion_k;
    if (delta) c.delta = *delta;
    if (steps) c.steps_per_event = *steps;
    c.validate();
    return c;
  }
};

Dataset load_materialized(const fs::path& root) { return materialize(load_dataset(root)); }

// One config per line, whitespace-separated key=value pairs over the base.
std::vector<AdaptationConfig> read_sweep(const std::string& source, const AdaptationConfig& base) {
  if (source == "table") return results_table_configs(base);
  std::vector<AdaptationConfig> out;
  std::istringstream is(read_file(source));
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    AdaptationConfig c = base;
    bool any = false;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected key=value, got '" + tok + "'");
      }
      c.set(tok.substr(0, eq), tok.substr(eq + 1));
      any = true;
    }
    if (!any) continue;
    c.validate();
    out.push_back(c);
  }
  if (out.empty()) throw std::invalid_argument(source + ": no configurations");
  return out;
}

void emit_results(const std::vector<ConfigResult>& results, const std::string& out, const std::string& markdown) {
  const auto rows = table_rows(results);
  if (out.empty() || out == "-") {
    std::cout << to_csv(rows);
  } else {
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    write_csv(out, rows);
  }
  if (!markdown.empty()) write_file(markdown, to_markdown(results));
}

void log_result(const ConfigResult& r) {
  std::fprintf(stderr, "ca=%s rm=%s cm=%d  NoC %s  FR %s  (transient %lld, persistent %lld, skipped %lld)\n",
               to_string(r.config.ca_mode).c_str(), to_string(r.config.rm_mode).c_str(), r.config.cm_enabled ? 1 : 0,
               format_noc(r.average.noc).c_str(), format_fr(r.average.fr).c_str(),
               static_cast<long long>(r.transient_steps), static_cast<long long>(r.persistent_steps),
               static_cast<long long>(r.skipped_updates));
}

HttpServer* g_server = nullptr;
extern "C" void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive segmentation benchmark and test-time adaptation"};
  app.require_subcommand(1);

  // bench ------------------------------------------------------------------
  auto* bench = app.add_subcommand("bench", "simulated-click benchmark");
  bench->require_subcommand(1);

  std::string dataset, model_path, out, markdown;
  std::uint64_t seed = 0;
  bool cross_class = false;
  AdaptFlags run_flags;
  auto* run = bench->add_subcommand("run", "evaluate one adaptation config");
  run->add_option("--dataset", dataset, "dataset root")->required();
  run->add_option("--model", model_path, "decoder parameter file")->required();
  run->add_option("--seed", seed, "instance order seed");
  run->add_option("--out", out, "CSV output path ('-' for stdout)");
  run->add_option("--markdown", markdown, "also write a markdown table");
  run->add_flag("--cross-class", cross_class, "adapt one model across all classes");
  run_flags.add(run);

  std::string sweep_configs = "table";
  AdaptFlags sweep_flags;
  auto* sweep = bench->add_subcommand("sweep", "evaluate several configs");
  sweep->add_option("--dataset", dataset, "dataset root")->required();
  sweep->add_option("--model", model_path, "decoder parameter file")->required();
  sweep->add_option("--configs", sweep_configs, "file with one key=value config per line, or 'table'");
  sweep->add_option("--seed", seed, "instance order seed");
  sweep->add_option("--out", out, "CSV output path ('-' for stdout)");
  sweep->add_option("--markdown", markdown, "also write a markdown table");
  sweep->add_flag("--cross-class", cross_class, "adapt one model across all classes");
  sweep_flags.add(sweep);

  // data -------------------------------------------------------------------
  auto* data = app.add_subcommand("data", "dataset tools");
  data->require_subcommand(1);

  std::string root;
  auto* validate = data->add_subcommand("validate", "check a dataset directory");
  validate->add_option("root", root, "dataset root")->required();

  bool stats_json = false;
  auto* stats = data->add_subcommand("stats", "per-class counts and mean object area");
  stats->add_option("root", root, "dataset root")->required();
  stats->add_flag("--json", stats_json, "print the manifest as JSON instead");

  std::string manifest_out;
  auto* manifest = data->add_subcommand("manifest", "export the dataset manifest");
  manifest->add_option("root", root, "dataset root")->required();
  manifest->add_option("--out", manifest_out, "output path ('-' for stdout)")->required();

  SynthOptions synth_opts;
  std::string family = "disk", shift = "none", synth_out;
  auto* synth = data->add_subcommand("synth", "generate a synthetic shapes dataset");
  synth->add_option("--seed", synth_opts.seed, "generator seed");
  synth->add_option("--n", synth_opts.n_instances, "instances per family")->check(CLI::PositiveNumber);
  synth->add_option("--family", family, "disk | ellipse | polygon | thin-bar | all");
  synth->add_option("--shift", shift, "none | intensity | texture");
  synth->add_option("--size", synth_opts.image_size, "image side length")->check(CLI::Range(16, 4096));
  synth->add_option("--out", synth_out, "output dataset root")->required();

  // model ------------------------------------------------------------------
  auto* model = app.add_subcommand("model", "decoder parameters");
  model->require_subcommand(1);

  PretrainOptions pre;
  std::string pre_dataset, pre_out;
  auto* pretrain = model->add_subcommand("pretrain", "train a base decoder on a dataset");
  pretrain->add_option("--dataset", pre_dataset, "dataset root")->required();
  pretrain->add_option("--out", pre_out, "parameter file to write")->required();
  pretrain->add_option("--epochs", pre.epochs, "passes over the dataset");
  pretrain->add_option("--lr", pre.lr, "Adam learning rate");
  pretrain->add_option("--seed", pre.seed, "initialization and sampling seed");
  pretrain->add_option("--max-clicks", pre.max_clicks, "simulated clicks per example, at most");
  pretrain->add_option("--sigma", pre.sigma, "click heatmap bandwidth");

  std::uint64_t init_seed = 0;
  std::string init_out;
  auto* init = model->add_subcommand("init", "write an untrained decoder");
  init->add_option("--seed", init_seed, "initialization seed");
  init->add_option("--out", init_out, "parameter file to write")->required();

  // serve ------------------------------------------------------------------
  ServiceConfig svc;
  AdaptFlags serve_flags;
  std::string library, serve_model, export_dir;
  auto* serve = app.add_subcommand("serve", "run the annotation service");
  serve->add_option("--library", library, "image library root")->required();
  serve->add_option("--model", serve_model, "decoder parameter file")->required();
  serve->add_option("--export", export_dir, "directory for accepted masks");
  serve->add_option("--host", svc.host, "listen address");
  serve->add_option("--port", svc.port, "listen port (0 picks one)");
  serve_flags.add(serve);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const AdaptationConfig cfg = run_flags.resolve();
      const Dataset ds = load_materialized(dataset);
      const ToyModel base = ToyModel::load(model_path);
      RunOptions opts;
      opts.seed = seed;
      opts.cross_class = cross_class;
      std::vector<ConfigResult> results{run_config(ds, base, cfg, opts)};
      log_result(results.front());
      emit_results(results, out, markdown);
    } else if (sweep->parsed()) {
      const auto configs = read_sweep(sweep_configs, sweep_flags.resolve());
      const Dataset ds = load_materialized(dataset);
      const ToyModel base = ToyModel::load(model_path);
      RunOptions opts;
      opts.seed = seed;
      opts.cross_class = cross_class;
      std::vector<ConfigResult> results;
      for (const auto& c : configs) {
        results.push_back(run_config(ds, base, c, opts));
        log_result(results.back());
      }
      emit_results(results, out, markdown);
    } else if (validate->parsed()) {
      const auto issues = validate_dataset(root);
      for (const auto& i : issues) std::cerr << i.path.string() << ": " << i.message << '\n';
      if (!issues.empty()) {
        std::cerr << issues.size() << " problem(s) found\n";
        return 1;
      }
      const DatasetManifest m = load_dataset(root);
      std::cout << "ok: " << m.classes.size() << " classes, " << m.total_images() << " images, " << m.total_masks()
                << " masks\n";
    } else if (stats->parsed()) {
      const DatasetManifest m = load_dataset(root);
      if (stats_json) {
        std::cout << m.to_json() << '\n';
      } else {
        const auto area = class_stats(m);
        std::printf("%-24s %8s %8s %10s\n", "class", "images", "masks", "area %");
        for (std::size_t i = 0; i < m.classes.size(); ++i) {
          std::printf("%-24s %8zu %8zu %10.2f\n", m.classes[i].name.c_str(), m.classes[i].n_images,
                      m.classes[i].instances.size(), area[i].mean_area_percent);
        }
        std::printf("%-24s %8zu %8zu\n", "total", m.total_images(), m.total_masks());
      }
    } else if (manifest->parsed()) {
      const std::string json = load_dataset(root).to_json();
      if (manifest_out == "-") {
        std::cout << json << '\n';
      } else {
        write_file(manifest_out, json + "\n");
      }
    } else if (synth->parsed()) {
      synth_opts.shift = parse_domain_shift(shift);
      Dataset ds;
      const std::vector<ShapeFamily> families =
          family == "all" ? std::vector<ShapeFamily>{ShapeFamily::disk, ShapeFamily::ellipse, ShapeFamily::polygon,
                                                     ShapeFamily::thin_bar}
                          : std::vector<ShapeFamily>{parse_shape_family(family)};
      for (ShapeFamily f : families) {
        synth_opts.family = f;
        for (auto& cls : synth_dataset(synth_opts).classes) ds.classes.push_back(std::move(cls));
      }
      write_dataset(ds, synth_out);
      std::cout << "wrote " << ds.total_instances() << " instances in " << ds.classes.size() << " class(es) to "
                << synth_out << '\n';
    } else if (pretrain->parsed()) {
      const Dataset ds = load_materialized(pre_dataset);
      const auto samples = ds.all_samples();
      const ToyModel m = pretrain_base(samples, pre);
      m.save(pre_out);
      std::cout << "wrote " << pre_out << '\n';
    } else if (init->parsed()) {
      ToyModel(DecoderParams::initialize(init_seed)).save(init_out);
      std::cout << "wrote " << init_out << '\n';
    } else if (serve->parsed()) {
      svc.adaptation = serve_flags.resolve();
      svc.library_root = library;
      svc.model_path = serve_model;
      svc.export_dir = export_dir;
      svc.validate();
      AnnotationService service(ToyModel::load(serve_model), svc.adaptation, ImageLibrary(library), export_dir);
      HttpServer server(service);
      const int port = server.bind(svc.host, svc.port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << svc.host << ':' << port << "/v1" << std::endl;
      server.listen();
      g_server = nullptr;
    }
  } catch (const DatasetError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
