#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "intseg/adapt.hpp"
#include "intseg/dataio.hpp"
#include "intseg/toymodel.hpp"
#include "intseg/types.hpp"

namespace intseg {

/// Error with an HTTP-style status: 400 validation, 404 not found, 409 conflict.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

/// Images addressable by id. Files under a root are keyed by their relative
/// path without extension; in-memory images can be added directly.
class ImageLibrary {
 public:
  ImageLibrary() = default;
  explicit ImageLibrary(const std::filesystem::path& root);

  void add(const std::string& image_id, Image image);

  struct Entry {
    std::string image_id;
    int height = 0;
    int width = 0;
  };
  std::vector<Entry> list() const;
  bool contains(const std::string& image_id) const;
  /// Throws ServiceError(404) for unknown ids.
  std::shared_ptr<const Image> load(const std::string& image_id) const;

 private:
  struct Item {
    std::filesystem::path path;
    std::shared_ptr<const Image> image;
    ImageSize size;
  };
  std::map<std::string, Item> items_;
};

struct ServiceConfig {
  AdaptationConfig adaptation;
  std::filesystem::path library_root;
  std::filesystem::path model_path;
  std::filesystem::path export_dir;
  std::string host = "127.0.0.1";
  int port = 8080;

  void validate() const;
};

enum class SessionStatus { active, finished };
std::string to_string(SessionStatus status);

using Timestamp = std::chrono::system_clock::time_point;
std::string format_timestamp(Timestamp t);

/// Read-only view of a session, safe to hand out.
struct SessionRecord {
  std::string session_id;
  std::string image_id;
  ClickHistory clicks;
  ProbMap latest;
  SessionStatus status = SessionStatus::active;
  bool accepted = false;
  /// Set once an undo happened after any CA step in this session.
  bool approximate = false;
  Timestamp created;
  Timestamp updated;
};

struct CreateResult {
  std::string session_id;
  int height = 0;
  int width = 0;
};

struct MaskUpdate {
  std::string session_id;
  RleMask mask;
  std::size_t clicks = 0;
  bool adapted = false;
  bool approximate = false;
  double prob_min = 0.0;
  double prob_max = 0.0;
};

struct FinishResult {
  RleMask mask;
  bool accepted = false;
  FinishReport report;
  std::int64_t persistent_steps = 0;
  /// Export file stem, empty when the session was rejected.
  std::string export_stem;
};

struct ServiceStats {
  std::int64_t sessions_created = 0;
  std::int64_t sessions_finished = 0;
  std::int64_t transient_steps = 0;
  std::int64_t cm_steps = 0;
  std::int64_t rm_steps = 0;
  std::int64_t persistent_steps = 0;
  std::int64_t skipped_updates = 0;
};

/// Broadcast queue for mask updates; subscribers poll with a cursor.
class EventHub {
 public:
  explicit EventHub(std::size_t capacity = 256) : capacity_(capacity) {}

  void publish(std::string payload);
  /// Cursor of the next event to be published.
  std::uint64_t cursor() const;
  /// Waits up to `timeout` for events at or after `*cursor`, returns them and
  /// advances the cursor. Returns nullopt once closed.
  std::optional<std::vector<std::string>> wait(std::uint64_t* cursor, std::chrono::milliseconds timeout);
  void close();

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> events_;
  std::uint64_t first_ = 0;
  std::size_t capacity_;
  bool closed_ = false;
};

/// Interactive sessions over one shared model.
///
/// CA steps act on a per-session copy of the decoder with its own transient
/// optimizer: CA=R discards the copy at finish, CA=C writes it back on accept.
/// CM/RM steps on accept go through one exclusive writer on the shared model
/// with the persistent optimizer. Predictions of sessions without CA read the
/// shared parameters as they are at request time.
class AnnotationService {
 public:
  AnnotationService(ToyModel model, AdaptationConfig config, ImageLibrary library,
                    std::filesystem::path export_dir = {});

  CreateResult create_session(const std::string& image_id);
  MaskUpdate post_click(const std::string& session_id, int row, int col, ClickLabel label);
  MaskUpdate undo_click(const std::string& session_id);
  FinishResult finish_session(const std::string& session_id, bool accept);
  SessionRecord session(const std::string& session_id) const;

  std::vector<ImageLibrary::Entry> images() const { return library_.list(); }
  AdaptationConfig config() const;
  /// Applies to sessions created afterwards; optimizer states are kept.
  void set_config(const AdaptationConfig& config);
  ServiceStats stats() const;
  DecoderParams params() const;

  EventHub& events() { return events_; }

 private:
  struct Session {
    mutable std::mutex mu;
    SessionRecord record;
    std::shared_ptr<const Image> image;
    ImageFeatures features;
    ProbMap prompt_mask;  ///< prompt mask of `record.latest`
    AdaptationConfig config;
    std::optional<ToyModel> local;  ///< CA copy
    std::optional<Adapter> local_adapter;
  };

  std::shared_ptr<Session> find(const std::string& session_id) const;
  ProbMap predict(Session& s, const ClickHistory& clicks, const ProbMap& prev) const;
  MaskUpdate make_update(const Session& s, bool adapted) const;

  ImageLibrary library_;
  std::filesystem::path export_dir_;

  mutable std::shared_mutex model_mu_;
  ToyModel model_;
  Adapter adapter_;  ///< persistent policies only; guarded by model_mu_

  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  AdaptationConfig config_;
  std::uint64_t next_id_ = 1;
  std::int64_t created_ = 0;
  std::int64_t finished_ = 0;
  std::int64_t transient_steps_ = 0;
  OptimizerState continuous_transient_;  ///< carried between CA=C sessions; guarded by model_mu_

  EventHub events_;
};

// ---------------------------------------------------------------------------
// JSON payloads shared by the HTTP layer and its clients

std::string rle_to_json(const RleMask& rle);
RleMask rle_from_json(const std::string& text);
std::string config_to_json(const AdaptationConfig& config);
/// Applies the fields present in a JSON object on top of `base`.
AdaptationConfig config_from_json(const std::string& text, const AdaptationConfig& base);

/// Blocking HTTP front end for an AnnotationService under /v1.
class HttpServer {
 public:
  explicit HttpServer(AnnotationService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace intseg
