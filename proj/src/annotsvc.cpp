#include "intseg/annotsvc.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "httplib.h"
#include "json.hpp"

#include "intseg/maskops.hpp"

namespace intseg {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// ImageLibrary

ImageLibrary::ImageLibrary(const fs::path& root) {
  if (!fs::is_directory(root)) throw DatasetError(root, "image library root is not a directory");
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
    fs::path rel = fs::relative(entry.path(), root);
    rel.replace_extension();
    const std::string id = rel.generic_string();
    if (items_.count(id) != 0) throw DatasetError(entry.path(), "duplicate image id '" + id + "'");
    items_[id] = Item{entry.path(), nullptr, read_image_size(entry.path())};
  }
}

void ImageLibrary::add(const std::string& image_id, Image image) {
  if (image_id.empty()) throw std::invalid_argument("ImageLibrary: empty image id");
  const ImageSize size{image.height, image.width};
  items_[image_id] = Item{{}, std::make_shared<const Image>(std::move(image)), size};
}

std::vector<ImageLibrary::Entry> ImageLibrary::list() const {
  std::vector<Entry> out;
  out.reserve(items_.size());
  for (const auto& [id, item] : items_) out.push_back({id, item.size.height, item.size.width});
  return out;
}

bool ImageLibrary::contains(const std::string& image_id) const { return items_.count(image_id) != 0; }

std::shared_ptr<const Image> ImageLibrary::load(const std::string& image_id) const {
  const auto it = items_.find(image_id);
  if (it == items_.end()) throw ServiceError(404, "unknown_image", "unknown image_id '" + image_id + "'");
  if (it->second.image) return it->second.image;
  return std::make_shared<const Image>(read_image(it->second.path));
}

void ServiceConfig::validate() const {
  adaptation.validate();
  if (port < 0 || port > 65535) throw std::invalid_argument("port must be in [0, 65535]");
  if (host.empty()) throw std::invalid_argument("listen host must not be empty");
}

std::string to_string(SessionStatus status) {
  return status == SessionStatus::active ? "active" : "finished";
}

std::string format_timestamp(Timestamp t) {
  const std::time_t secs = std::chrono::system_clock::to_time_t(t);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

// ---------------------------------------------------------------------------
// EventHub

void EventHub::publish(std::string payload) {
  {
    std::lock_guard lock(mu_);
    events_.push_back(std::move(payload));
    while (events_.size() > capacity_) {
      events_.pop_front();
      ++first_;
    }
  }
  cv_.notify_all();
}

std::uint64_t EventHub::cursor() const {
  std::lock_guard lock(mu_);
  return first_ + events_.size();
}

std::optional<std::vector<std::string>> EventHub::wait(std::uint64_t* cursor, std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return closed_ || first_ + events_.size() > *cursor; });
  if (closed_) return std::nullopt;
  std::vector<std::string> out;
  // A subscriber that fell behind the ring skips what was dropped.
  std::uint64_t i = std::max(*cursor, first_);
  for (; i < first_ + events_.size(); ++i) out.push_back(events_[i - first_]);
  *cursor = i;
  return out;
}

void EventHub::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

// ---------------------------------------------------------------------------
// AnnotationService

namespace {

AdaptationConfig persistent_only(AdaptationConfig c) {
  c.ca_mode = CaMode::off;
  return c;
}

AdaptationConfig transient_only(AdaptationConfig c) {
  c.rm_mode = RmMode::off;
  c.cm_enabled = false;
  return c;
}

std::pair<double, double> prob_range(const ProbMap& p) {
  if (p.size() == 0) return {0.0, 0.0};
  const auto [lo, hi] = std::minmax_element(p.data().begin(), p.data().end());
  return {*lo, *hi};
}

std::string export_stem(const std::string& image_id, const std::string& session_id) {
  std::string stem = image_id;
  for (char& c : stem) {
    if (c == '/' || c == '\\' || c == ':') c = '_';
  }
  return stem + "__" + session_id;
}

json clicks_to_json(const ClickHistory& clicks) {
  json arr = json::array();
  for (const auto& c : clicks) arr.push_back({{"row", c.row}, {"col", c.col}, {"label", c.positive() ? "pos" : "neg"}});
  return arr;
}

}  // namespace

AnnotationService::AnnotationService(ToyModel model, AdaptationConfig config, ImageLibrary library,
                                     fs::path export_dir)
    : library_(std::move(library)),
      export_dir_(std::move(export_dir)),
      model_(std::move(model)),
      adapter_(model_, persistent_only(config)),
      config_(config) {
  config.validate();
  if (!model_.params().all_finite()) throw std::invalid_argument("AnnotationService: model has non-finite parameters");
  adapter_.set_notice_sink({});
  if (!export_dir_.empty()) fs::create_directories(export_dir_);
}

std::shared_ptr<AnnotationService::Session> AnnotationService::find(const std::string& session_id) const {
  std::lock_guard lock(sessions_mu_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown_session", "unknown session '" + session_id + "'");
  return it->second;
}

ProbMap AnnotationService::predict(Session& s, const ClickHistory& clicks, const ProbMap& prev) const {
  if (s.local) return s.local->predict(s.features, clicks, prev);
  std::shared_lock lock(model_mu_);
  return model_.predict(s.features, clicks, prev);
}

MaskUpdate AnnotationService::make_update(const Session& s, bool adapted) const {
  MaskUpdate u;
  u.session_id = s.record.session_id;
  u.mask = rle_encode(binarize(s.record.latest, 0.5));
  u.clicks = s.record.clicks.size();
  u.adapted = adapted;
  u.approximate = s.record.approximate;
  std::tie(u.prob_min, u.prob_max) = prob_range(s.record.latest);
  return u;
}

CreateResult AnnotationService::create_session(const std::string& image_id) {
  auto s = std::make_shared<Session>();
  s->image = library_.load(image_id);
  s->features = encode_image(*s->image);
  s->record.image_id = image_id;
  s->record.created = s->record.updated = std::chrono::system_clock::now();

  {
    std::lock_guard lock(sessions_mu_);
    s->config = config_;
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(next_id_++));
    s->record.session_id = buf;
    ++created_;
  }
  if (s->config.ca_mode != CaMode::off) {
    std::shared_lock lock(model_mu_);
    s->local.emplace(model_);
    s->local_adapter.emplace(*s->local, transient_only(s->config));
    s->local_adapter->set_notice_sink({});
    if (s->config.ca_mode == CaMode::continuous) s->local_adapter->set_transient_state(continuous_transient_);
  }
  s->prompt_mask = ProbMap(s->image->height, s->image->width, 0.0);
  s->record.latest = predict(*s, {}, s->prompt_mask);

  CreateResult out{s->record.session_id, s->image->height, s->image->width};
  std::lock_guard lock(sessions_mu_);
  sessions_[out.session_id] = std::move(s);
  return out;
}

MaskUpdate AnnotationService::post_click(const std::string& session_id, int row, int col, ClickLabel label) {
  auto sp = find(session_id);
  Session& s = *sp;
  std::lock_guard lock(s.mu);
  if (s.record.status != SessionStatus::active) {
    throw ServiceError(409, "session_finished", "session '" + session_id + "' is finished");
  }
  const int h = s.image->height;
  const int w = s.image->width;
  if (row < 0 || row >= h) {
    throw ServiceError(400, "out_of_bounds", "row " + std::to_string(row) + " outside [0, " + std::to_string(h) + ")");
  }
  if (col < 0 || col >= w) {
    throw ServiceError(400, "out_of_bounds", "col " + std::to_string(col) + " outside [0, " + std::to_string(w) + ")");
  }

  // The prompt mask is the previous prediction, or all zeros before any click.
  ProbMap prev = s.record.clicks.empty() ? ProbMap(h, w, 0.0) : s.record.latest;
  s.record.clicks.push_back(Click{row, col, label});
  // With CA the shown mask comes from the adapted parameters, so predict once after adapting.
  bool adapted = false;
  if (s.local_adapter) {
    s.local_adapter->click_adapt(s.features, s.record.clicks, prev);
    adapted = true;
    std::lock_guard slock(sessions_mu_);
    transient_steps_ += s.config.steps_per_event;
  }
  ProbMap prob = predict(s, s.record.clicks, prev);
  s.prompt_mask = std::move(prev);
  s.record.latest = std::move(prob);
  s.record.updated = std::chrono::system_clock::now();

  MaskUpdate u = make_update(s, adapted);
  json ev = {{"session_id", u.session_id}, {"clicks", u.clicks}, {"mask_rle", json::parse(rle_to_json(u.mask))}};
  events_.publish(ev.dump());
  return u;
}

MaskUpdate AnnotationService::undo_click(const std::string& session_id) {
  auto sp = find(session_id);
  Session& s = *sp;
  std::lock_guard lock(s.mu);
  if (s.record.status != SessionStatus::active) {
    throw ServiceError(409, "session_finished", "session '" + session_id + "' is finished");
  }
  if (s.record.clicks.empty()) throw ServiceError(409, "empty_history", "session '" + session_id + "' has no clicks to undo");
  s.record.clicks.pop_back();
  if (s.local && s.local_adapter->transient_steps() > 0) s.record.approximate = true;

  // Replay the remaining prefix with the current parameters.
  const int h = s.image->height;
  const int w = s.image->width;
  ProbMap prev(h, w, 0.0);
  ProbMap prob = predict(s, {}, prev);
  ClickHistory prefix;
  for (const Click& c : s.record.clicks) {
    prefix.push_back(c);
    if (prefix.size() > 1) prev = std::move(prob);
    prob = predict(s, prefix, prev);
  }
  s.prompt_mask = std::move(prev);
  s.record.latest = std::move(prob);
  s.record.updated = std::chrono::system_clock::now();
  return make_update(s, false);
}

FinishResult AnnotationService::finish_session(const std::string& session_id, bool accept) {
  auto sp = find(session_id);
  Session& s = *sp;
  std::lock_guard lock(s.mu);
  if (s.record.status != SessionStatus::active) {
    throw ServiceError(409, "session_finished", "session '" + session_id + "' is already finished");
  }
  s.record.status = SessionStatus::finished;
  s.record.accepted = accept;
  s.record.updated = std::chrono::system_clock::now();

  FinishResult out;
  out.accepted = accept;
  const BinaryMask final_mask = binarize(s.record.latest, 0.5);
  out.mask = rle_encode(final_mask);

  if (accept) {
    std::unique_lock wlock(model_mu_);
    if (s.config.ca_mode == CaMode::continuous && s.local) {
      model_.params() = s.local->params();
      continuous_transient_ = s.local_adapter->transient_state();
    }
    adapter_.set_config(persistent_only(s.config));
    out.report = adapter_.finish_image(s.features, s.record.clicks, s.prompt_mask, s.record.latest);
    out.report.reset = s.config.ca_mode == CaMode::reset;
    out.persistent_steps = adapter_.persistent_steps();
  } else {
    std::shared_lock rlock(model_mu_);
    out.persistent_steps = adapter_.persistent_steps();
  }
  s.local_adapter.reset();
  s.local.reset();

  if (accept && !export_dir_.empty()) {
    out.export_stem = export_stem(s.record.image_id, s.record.session_id);
    write_mask_png(export_dir_ / (out.export_stem + ".png"), final_mask);
    json doc = {{"session_id", s.record.session_id},
                {"image_id", s.record.image_id},
                {"clicks", clicks_to_json(s.record.clicks)},
                {"mask_rle", json::parse(rle_to_json(out.mask))},
                {"created", format_timestamp(s.record.created)},
                {"finished", format_timestamp(s.record.updated)}};
    std::ofstream os(export_dir_ / (out.export_stem + ".json"), std::ios::binary);
    os << doc.dump(2) << '\n';
    if (!os) throw std::runtime_error("cannot write export for session " + s.record.session_id);
  }

  std::lock_guard slock(sessions_mu_);
  ++finished_;
  return out;
}

SessionRecord AnnotationService::session(const std::string& session_id) const {
  auto sp = find(session_id);
  std::lock_guard lock(sp->mu);
  return sp->record;
}

AdaptationConfig AnnotationService::config() const {
  std::lock_guard lock(sessions_mu_);
  return config_;
}

void AnnotationService::set_config(const AdaptationConfig& config) {
  config.validate();
  std::lock_guard lock(sessions_mu_);
  config_ = config;
}

ServiceStats AnnotationService::stats() const {
  ServiceStats st;
  {
    std::lock_guard lock(sessions_mu_);
    st.sessions_created = created_;
    st.sessions_finished = finished_;
    st.transient_steps = transient_steps_;
  }
  std::shared_lock lock(model_mu_);
  st.cm_steps = adapter_.cm_steps();
  st.rm_steps = adapter_.rm_steps();
  st.persistent_steps = adapter_.persistent_steps();
  st.skipped_updates = adapter_.skipped_updates();
  return st;
}

DecoderParams AnnotationService::params() const {
  std::shared_lock lock(model_mu_);
  return model_.params();
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json rle_json(const RleMask& rle) { return {{"h", rle.height}, {"w", rle.width}, {"runs", rle.runs}}; }

json config_json(const AdaptationConfig& c) {
  return {{"ca", to_string(c.ca_mode)},        {"rm", to_string(c.rm_mode)},
          {"cm", c.cm_enabled},                {"lr", c.lr},
          {"erosion_k", c.erosion_k},          {"delta", c.delta},
          {"adam_beta1", c.adam_beta1},        {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},            {"steps_per_event", c.steps_per_event},
          {"iou_threshold", c.iou_threshold},  {"max_clicks", c.max_clicks}};
}

json update_json(const MaskUpdate& u) {
  return {{"session_id", u.session_id}, {"mask_rle", rle_json(u.mask)}, {"clicks", u.clicks},
          {"adapted", u.adapted},       {"approximate", u.approximate},
          {"prob_min", u.prob_min},     {"prob_max", u.prob_max}};
}

}  // namespace

std::string rle_to_json(const RleMask& rle) { return rle_json(rle).dump(); }

RleMask rle_from_json(const std::string& text) {
  const json j = json::parse(text);
  RleMask rle;
  rle.height = j.at("h").get<int>();
  rle.width = j.at("w").get<int>();
  rle.runs = j.at("runs").get<std::vector<std::uint32_t>>();
  return rle;
}

std::string config_to_json(const AdaptationConfig& config) { return config_json(config).dump(); }

AdaptationConfig config_from_json(const std::string& text, const AdaptationConfig& base) {
  const json j = json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  AdaptationConfig c = base;
  for (const auto& [key, value] : j.items()) {
    if (value.is_string()) {
      c.set(key, value.get<std::string>());
    } else if (value.is_boolean()) {
      c.set(key, value.get<bool>() ? "true" : "false");
    } else if (value.is_number()) {
      c.set(key, value.dump());
    } else {
      throw std::invalid_argument("config: field '" + key + "' has an unsupported type");
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// HTTP

struct HttpServer::Impl {
  AnnotationService& service;
  httplib::Server server;
  explicit Impl(AnnotationService& s) : service(s) {}
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"error", {{"code", code}, {"message", message}}}});
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body);
  if (!j.is_object()) throw std::invalid_argument("request body must be a JSON object");
  return j;
}

template <typename T>
T field(const json& j, const char* name) {
  const auto it = j.find(name);
  if (it == j.end()) throw ServiceError(400, "missing_field", std::string("missing field '") + name + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ServiceError(400, "bad_field", std::string("field '") + name + "' has the wrong type");
  }
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e.status(), e.code(), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "bad_json", e.what());
    } catch (const std::invalid_argument& e) {
      send_error(res, 400, "invalid", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

}  // namespace

HttpServer::HttpServer(AnnotationService& service) : impl_(std::make_unique<Impl>(service)) {
  auto& svc = impl_->service;
  auto& srv = impl_->server;

  srv.Post("/v1/sessions", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             const CreateResult r = svc.create_session(field<std::string>(body, "image_id"));
             send_json(res, 201, {{"session_id", r.session_id}, {"h", r.height}, {"w", r.width}});
           }));

  srv.Get(R"(/v1/sessions/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            const SessionRecord r = svc.session(req.matches[1]);
            send_json(res, 200,
                      {{"session_id", r.session_id},
                       {"image_id", r.image_id},
                       {"status", to_string(r.status)},
                       {"accepted", r.accepted},
                       {"approximate", r.approximate},
                       {"clicks", clicks_to_json(r.clicks)},
                       {"mask_rle", rle_json(rle_encode(binarize(r.latest, 0.5)))},
                       {"created", format_timestamp(r.created)},
                       {"updated", format_timestamp(r.updated)}});
          }));

  srv.Post(R"(/v1/sessions/([^/]+)/clicks)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             const auto label = field<std::string>(body, "label");
             ClickLabel l;
             if (label == "pos") {
               l = ClickLabel::positive;
             } else if (label == "neg") {
               l = ClickLabel::negative;
             } else {
               throw ServiceError(400, "bad_field", "label must be \"pos\" or \"neg\", got \"" + label + "\"");
             }
             const MaskUpdate u = svc.post_click(req.matches[1], field<int>(body, "row"), field<int>(body, "col"), l);
             send_json(res, 200, update_json(u));
           }));

  srv.Post(R"(/v1/sessions/([^/]+)/undo)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             send_json(res, 200, update_json(svc.undo_click(req.matches[1])));
           }));

  srv.Post(R"(/v1/sessions/([^/]+)/finish)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             const FinishResult r = svc.finish_session(req.matches[1], field<bool>(body, "accept"));
             send_json(res, 200,
                       {{"mask_rle", rle_json(r.mask)},
                        {"accepted", r.accepted},
                        {"reset", r.report.reset},
                        {"cm_step", r.report.cm_step},
                        {"rm_step", r.report.rm_step},
                        {"rm_skipped", r.report.rm_skipped},
                        {"persistent_steps", r.persistent_steps},
                        {"export", r.export_stem}});
           }));

  srv.Get("/v1/images", guarded([&svc](const httplib::Request&, httplib::Response& res) {
            json arr = json::array();
            for (const auto& e : svc.images()) arr.push_back({{"image_id", e.image_id}, {"h", e.height}, {"w", e.width}});
            send_json(res, 200, {{"images", arr}});
          }));

  srv.Get("/v1/config", guarded([&svc](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, config_json(svc.config()));
          }));

  srv.Put("/v1/config", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            svc.set_config(config_from_json(req.body.empty() ? "{}" : req.body, svc.config()));
            send_json(res, 200, config_json(svc.config()));
          }));

  srv.Get("/v1/stats", guarded([&svc](const httplib::Request&, httplib::Response& res) {
            const ServiceStats st = svc.stats();
            send_json(res, 200,
                      {{"sessions_created", st.sessions_created},
                       {"sessions_finished", st.sessions_finished},
                       {"transient_steps", st.transient_steps},
                       {"cm_steps", st.cm_steps},
                       {"rm_steps", st.rm_steps},
                       {"persistent_steps", st.persistent_steps},
                       {"skipped_updates", st.skipped_updates}});
          }));

  srv.Get("/v1/events", [&svc](const httplib::Request&, httplib::Response& res) {
    auto cursor = std::make_shared<std::uint64_t>(svc.events().cursor());
    res.set_chunked_content_provider("text/event-stream", [&svc, cursor](std::size_t, httplib::DataSink& sink) {
      const auto events = svc.events().wait(cursor.get(), std::chrono::milliseconds(1000));
      if (!events) {
        sink.done();
        return false;
      }
      if (events->empty()) return sink.write(": keepalive\n\n", 13);
      for (const auto& e : *events) {
        const std::string chunk = "data: " + e + "\n\n";
        if (!sink.write(chunk.data(), chunk.size())) return false;
      }
      return true;
    });
  });

  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, "http_error", httplib::status_message(res.status));
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw std::runtime_error("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (!impl_) return;
  impl_->service.events().close();
  impl_->server.stop();
}

}  // namespace intseg
