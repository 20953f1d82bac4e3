#include "doctest.h"

#include <atomic>
#include <fstream>
#include <thread>

#include "fixtures.hpp"
#include "httplib.h"
#include "intseg/annotsvc.hpp"
#include "intseg/clicksim.hpp"
#include "intseg/maskops.hpp"
#include "json.hpp"

using namespace intseg;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

Sample disk() { return fixtures::shapes(61, 1, DomainShift::none).classes[0].samples[0]; }

ImageLibrary library_with_disk() {
  ImageLibrary lib;
  lib.add("disk", *disk().image);
  lib.add("other", *fixtures::shapes(62, 1, DomainShift::none).classes[1].samples[0].image);
  return lib;
}

AdaptationConfig with(CaMode ca, RmMode rm, bool cm) {
  AdaptationConfig c;
  c.ca_mode = ca;
  c.rm_mode = rm;
  c.cm_enabled = cm;
  return c;
}

template <typename F>
int status_of(F&& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    return e.status();
  }
  return 0;
}

/// HttpServer on a free local port, served from a background thread.
struct LiveServer {
  explicit LiveServer(AnnotationService& svc) : http(svc) {
    port = http.bind("127.0.0.1", 0);
    thread = std::thread([this] { http.listen(); });
  }
  ~LiveServer() {
    http.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(10, 0);
    return c;
  }
  HttpServer http;
  int port = 0;
  std::thread thread;
};

json post(httplib::Client& c, const std::string& path, const json& body, int expect) {
  const auto res = c.Post(path, body.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == expect);
  return json::parse(res->body);
}

}  // namespace

TEST_SUITE("annotsvc") {

TEST_CASE("create_session examples") {
  AnnotationService svc(fixtures::small_pretrained(), {}, library_with_disk());
  const CreateResult a = svc.create_session("disk");
  CHECK(a.height == 64);
  CHECK(a.width == 64);
  CHECK_FALSE(a.session_id.empty());
  CHECK(status_of([&] { svc.create_session("nope"); }) == 404);

  const CreateResult b = svc.create_session("disk");
  CHECK(a.session_id != b.session_id);
  svc.post_click(a.session_id, 10, 10, ClickLabel::positive);
  CHECK(svc.session(a.session_id).clicks.size() == 1);
  CHECK(svc.session(b.session_id).clicks.empty());
  CHECK(svc.session(b.session_id).status == SessionStatus::active);
  CHECK(status_of([&] { svc.session("s999999"); }) == 404);
}

TEST_CASE("first positive click covers its vicinity") {
  const Sample s = disk();
  AnnotationService svc(fixtures::small_pretrained(), {}, library_with_disk());
  const auto id = svc.create_session("disk").session_id;
  const Click c = first_click(s.gt);
  const MaskUpdate u = svc.post_click(id, c.row, c.col, ClickLabel::positive);
  const BinaryMask m = rle_decode(u.mask);
  CHECK(u.clicks == 1);
  CHECK_FALSE(u.adapted);
  CHECK(m.at(c.row, c.col) == 1);
  CHECK(count_foreground(m) > 0);
  CHECK(u.prob_min <= u.prob_max);
  CHECK(u.prob_max > 0.5);
}

TEST_CASE("click validation") {
  AnnotationService svc(fixtures::small_pretrained(), {}, library_with_disk());
  const auto id = svc.create_session("disk").session_id;
  try {
    svc.post_click(id, 64, 3, ClickLabel::positive);
    FAIL("expected ServiceError");
  } catch (const ServiceError& e) {
    CHECK(e.status() == 400);
    CHECK(std::string(e.what()).find("row 64") != std::string::npos);
  }
  try {
    svc.post_click(id, 3, -1, ClickLabel::negative);
    FAIL("expected ServiceError");
  } catch (const ServiceError& e) {
    CHECK(e.status() == 400);
    CHECK(std::string(e.what()).find("col -1") != std::string::npos);
  }
  CHECK(svc.session(id).clicks.empty());
  svc.finish_session(id, false);
  CHECK(status_of([&] { svc.post_click(id, 1, 1, ClickLabel::positive); }) == 409);
  CHECK(status_of([&] { svc.undo_click(id); }) == 409);
  CHECK(status_of([&] { svc.finish_session(id, true); }) == 409);
}

TEST_CASE("undo examples") {
  AnnotationService svc(fixtures::small_pretrained(), {}, library_with_disk());
  const auto fresh = svc.create_session("disk").session_id;
  const auto id = svc.create_session("disk").session_id;
  CHECK(status_of([&] { svc.undo_click(id); }) == 409);

  svc.post_click(id, 30, 30, ClickLabel::positive);
  const MaskUpdate undone = svc.undo_click(id);
  CHECK(undone.clicks == 0);
  CHECK_FALSE(undone.approximate);
  CHECK(svc.session(id).latest == svc.session(fresh).latest);

  const MaskUpdate one = svc.post_click(id, 30, 30, ClickLabel::positive);
  const MaskUpdate two = svc.post_click(id, 5, 5, ClickLabel::negative);
  svc.post_click(id, 50, 12, ClickLabel::positive);
  const MaskUpdate back = svc.undo_click(id);
  CHECK(back.clicks == 2);
  CHECK(svc.session(id).clicks.size() == 2);
  // Frozen parameters: replay reproduces the original two-click state exactly.
  CHECK(back.mask == two.mask);
  CHECK(back.prob_min == two.prob_min);
  CHECK(back.prob_max == two.prob_max);
  CHECK(svc.undo_click(id).mask == one.mask);
}

TEST_CASE("undo after click adaptation is flagged approximate") {
  AnnotationService svc(fixtures::small_pretrained(), with(CaMode::reset, RmMode::off, false), library_with_disk());
  const auto id = svc.create_session("disk").session_id;
  const MaskUpdate u = svc.post_click(id, 30, 30, ClickLabel::positive);
  CHECK(u.adapted);
  CHECK_FALSE(u.approximate);
  svc.post_click(id, 5, 5, ClickLabel::negative);
  const MaskUpdate back = svc.undo_click(id);
  CHECK(back.approximate);
  CHECK(svc.session(id).approximate);
  CHECK(svc.stats().transient_steps == 2);
}

TEST_CASE("rejecting leaves the shared parameters unchanged") {
  AnnotationService svc(fixtures::small_pretrained(), with(CaMode::continuous, RmMode::untreated, true),
                        library_with_disk());
  const DecoderParams before = svc.params();
  const auto id = svc.create_session("disk").session_id;
  svc.post_click(id, 30, 30, ClickLabel::positive);
  svc.post_click(id, 2, 2, ClickLabel::negative);
  const FinishResult r = svc.finish_session(id, false);
  CHECK_FALSE(r.accepted);
  CHECK(r.export_stem.empty());
  CHECK(r.persistent_steps == 0);
  CHECK(svc.params() == before);
  CHECK(svc.session(id).status == SessionStatus::finished);
}

TEST_CASE("accepting with CM takes one persistent step") {
  const fs::path out = fixtures::scratch_dir("export");
  AnnotationService svc(fixtures::small_pretrained(), with(CaMode::off, RmMode::off, true), library_with_disk(), out);
  const DecoderParams before = svc.params();
  for (int round = 1; round <= 2; ++round) {
    const auto id = svc.create_session("disk").session_id;
    svc.post_click(id, 30, 30, ClickLabel::positive);
    const FinishResult r = svc.finish_session(id, true);
    CHECK(r.accepted);
    CHECK(r.report.cm_step);
    CHECK_FALSE(r.report.rm_step);
    CHECK(r.persistent_steps == round);
    CHECK(svc.stats().cm_steps == round);

    // The export decodes to the final binarized prediction.
    const BinaryMask final_mask = binarize(svc.session(id).latest);
    CHECK(rle_decode(r.mask) == final_mask);
    REQUIRE_FALSE(r.export_stem.empty());
    CHECK(read_mask(out / (r.export_stem + ".png")) == final_mask);
    std::ifstream is(out / (r.export_stem + ".json"));
    const json doc = json::parse(is);
    CHECK(doc.at("session_id") == id);
    CHECK(doc.at("image_id") == "disk");
    CHECK(rle_decode(rle_from_json(doc.at("mask_rle").dump())) == final_mask);
  }
  CHECK_FALSE(svc.params() == before);
  CHECK(svc.stats().sessions_finished == 2);
}

TEST_CASE("reset sessions never touch the shared model") {
  AnnotationService svc(fixtures::small_pretrained(), with(CaMode::reset, RmMode::off, false), library_with_disk());
  const DecoderParams before = svc.params();
  const auto id = svc.create_session("disk").session_id;
  for (int k = 0; k < 3; ++k) svc.post_click(id, 20 + k, 30, ClickLabel::positive);
  const FinishResult r = svc.finish_session(id, true);
  CHECK(r.report.reset);
  CHECK(r.persistent_steps == 0);
  CHECK(svc.params() == before);
}

TEST_CASE("continuous sessions write their copy back on accept") {
  AnnotationService svc(fixtures::small_pretrained(), with(CaMode::continuous, RmMode::off, false), library_with_disk());
  const DecoderParams before = svc.params();
  const auto id = svc.create_session("disk").session_id;
  svc.post_click(id, 30, 30, ClickLabel::positive);
  CHECK(svc.params() == before);
  svc.finish_session(id, true);
  CHECK_FALSE(svc.params() == before);
}

TEST_CASE("config changes apply to new sessions") {
  AnnotationService svc(fixtures::small_pretrained(), {}, library_with_disk());
  const auto old_id = svc.create_session("disk").session_id;
  svc.set_config(with(CaMode::reset, RmMode::off, false));
  CHECK(svc.config().ca_mode == CaMode::reset);
  const auto new_id = svc.create_session("disk").session_id;
  CHECK_FALSE(svc.post_click(old_id, 30, 30, ClickLabel::positive).adapted);
  CHECK(svc.post_click(new_id, 30, 30, ClickLabel::positive).adapted);
  AdaptationConfig bad;
  bad.lr = -1.0;
  CHECK_THROWS_AS(svc.set_config(bad), std::invalid_argument);
}

TEST_CASE("json payload helpers") {
  const RleMask rle{2, 3, {1, 2, 3}};
  CHECK(rle_from_json(rle_to_json(rle)) == rle);
  const AdaptationConfig c = with(CaMode::continuous, RmMode::confidence, true);
  CHECK(config_from_json(config_to_json(c), AdaptationConfig{}) == c);
  const AdaptationConfig d = config_from_json(R"({"ca":"reset","cm":true,"lr":0.5,"erosion_k":3})", c);
  CHECK(d.ca_mode == CaMode::reset);
  CHECK(d.rm_mode == RmMode::confidence);
  CHECK(d.lr == 0.5);
  CHECK(d.erosion_k == 3);
  CHECK_THROWS(config_from_json(R"({"delta":0.9})", c));
  CHECK_THROWS(config_from_json(R"({"unknown":1})", c));
}

TEST_CASE("image library ids from a directory") {
  const fs::path root = fixtures::scratch_dir("library");
  fs::create_directories(root / "a/b");
  write_png(root / "top.png", *disk().image);
  write_png(root / "a/b/deep.png", *disk().image);
  std::ofstream(root / "readme.txt") << "ignored";
  const ImageLibrary lib(root);
  const auto entries = lib.list();
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].image_id == "a/b/deep");
  CHECK(entries[1].image_id == "top");
  CHECK(entries[1].height == 64);
  CHECK(lib.load("a/b/deep")->width == 64);
  CHECK(status_of([&] { lib.load("readme"); }) == 404);
}

TEST_CASE("event hub delivers in order") {
  EventHub hub(3);
  std::uint64_t cursor = hub.cursor();
  hub.publish("a");
  hub.publish("b");
  auto got = hub.wait(&cursor, std::chrono::milliseconds(10));
  REQUIRE(got);
  CHECK(*got == std::vector<std::string>{"a", "b"});
  got = hub.wait(&cursor, std::chrono::milliseconds(10));
  REQUIRE(got);
  CHECK(got->empty());
  for (const char* e : {"c", "d", "e", "f"}) hub.publish(e);
  got = hub.wait(&cursor, std::chrono::milliseconds(10));
  REQUIRE(got);
  // Capacity 3: the oldest event was dropped.
  CHECK(*got == std::vector<std::string>{"d", "e", "f"});
  hub.close();
  CHECK_FALSE(hub.wait(&cursor, std::chrono::milliseconds(10)).has_value());
}

TEST_CASE("http endpoints") {
  AnnotationService svc(fixtures::small_pretrained(), with(CaMode::off, RmMode::off, true), library_with_disk());
  LiveServer server(svc);
  auto c = server.client();

  const auto images = c.Get("/v1/images");
  REQUIRE(images);
  CHECK(images->status == 200);
  CHECK(json::parse(images->body).at("images").size() == 2);

  const json created = post(c, "/v1/sessions", {{"image_id", "disk"}}, 201);
  const std::string id = created.at("session_id");
  CHECK(created.at("h") == 64);
  CHECK(created.at("w") == 64);
  CHECK(post(c, "/v1/sessions", {{"image_id", "missing"}}, 404).at("error").at("code") == "unknown_image");
  CHECK(post(c, "/v1/sessions", json::object(), 400).at("error").at("code") == "missing_field");

  const json click = post(c, "/v1/sessions/" + id + "/clicks", {{"row", 30}, {"col", 30}, {"label", "pos"}}, 200);
  CHECK(click.at("clicks") == 1);
  CHECK(click.at("adapted") == false);
  const RleMask rle = rle_from_json(click.at("mask_rle").dump());
  CHECK(rle == svc.post_click(svc.create_session("disk").session_id, 30, 30, ClickLabel::positive).mask);

  CHECK(post(c, "/v1/sessions/" + id + "/clicks", {{"row", 99}, {"col", 0}, {"label", "pos"}}, 400)
            .at("error").at("message").get<std::string>().find("row 99") != std::string::npos);
  CHECK(post(c, "/v1/sessions/" + id + "/clicks", {{"row", 1}, {"col", 1}, {"label", "maybe"}}, 400)
            .at("error").at("code") == "bad_field");
  CHECK(post(c, "/v1/sessions/nope/clicks", {{"row", 1}, {"col", 1}, {"label", "pos"}}, 404)
            .at("error").at("code") == "unknown_session");
  const auto junk = c.Post("/v1/sessions/" + id + "/clicks", "{not json", "application/json");
  REQUIRE(junk);
  CHECK(junk->status == 400);

  const auto state = c.Get("/v1/sessions/" + id);
  REQUIRE(state);
  const json st = json::parse(state->body);
  CHECK(st.at("status") == "active");
  CHECK(st.at("clicks").size() == 1);
  CHECK(rle_from_json(st.at("mask_rle").dump()) == rle);

  const json undo = post(c, "/v1/sessions/" + id + "/undo", json::object(), 200);
  CHECK(undo.at("clicks") == 0);
  CHECK(post(c, "/v1/sessions/" + id + "/undo", json::object(), 409).at("error").at("code") == "empty_history");

  post(c, "/v1/sessions/" + id + "/clicks", {{"row", 30}, {"col", 30}, {"label", "pos"}}, 200);
  const json fin = post(c, "/v1/sessions/" + id + "/finish", {{"accept", true}}, 200);
  CHECK(fin.at("accepted") == true);
  CHECK(fin.at("cm_step") == true);
  CHECK(fin.at("persistent_steps") == 1);
  CHECK(post(c, "/v1/sessions/" + id + "/clicks", {{"row", 1}, {"col", 1}, {"label", "neg"}}, 409)
            .at("error").at("code") == "session_finished");

  const auto stats = c.Get("/v1/stats");
  REQUIRE(stats);
  CHECK(json::parse(stats->body).at("cm_steps") == 1);

  const auto cfg = c.Get("/v1/config");
  REQUIRE(cfg);
  CHECK(json::parse(cfg->body).at("cm") == true);
  const auto put = c.Put("/v1/config", R"({"ca":"continuous","lr":0.001})", "application/json");
  REQUIRE(put);
  CHECK(put->status == 200);
  CHECK(json::parse(put->body).at("ca") == "continuous");
  CHECK(svc.config().lr == 0.001);
  CHECK(svc.config().cm_enabled);
  const auto bad = c.Put("/v1/config", R"({"max_clicks":0})", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(svc.config().max_clicks == 20);

  const auto missing = c.Get("/v1/nothing-here");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  CHECK(json::parse(missing->body).contains("error"));
}

TEST_CASE("server push broadcasts click updates") {
  AnnotationService svc(fixtures::small_pretrained(), {}, library_with_disk());
  LiveServer server(svc);
  const auto id = svc.create_session("disk").session_id;

  std::string received;
  std::atomic<bool> subscribed{false};
  std::thread reader([&] {
    auto c = server.client();
    c.Get("/v1/events", [&](const char* data, std::size_t n) {
      subscribed = true;
      received.append(data, n);
      return received.find("data: ") == std::string::npos;
    });
  });
  // The first keepalive tells us the stream is open.
  for (int i = 0; i < 50 && !subscribed; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  REQUIRE(subscribed);
  const MaskUpdate u = svc.post_click(id, 30, 30, ClickLabel::positive);
  reader.join();

  const auto start = received.find("data: ");
  REQUIRE(start != std::string::npos);
  const auto end = received.find("\n\n", start);
  const json ev = json::parse(received.substr(start + 6, end - start - 6));
  CHECK(ev.at("session_id") == id);
  CHECK(ev.at("clicks") == 1);
  CHECK(rle_from_json(ev.at("mask_rle").dump()) == u.mask);
}

TEST_CASE("service config validation") {
  ServiceConfig c;
  c.library_root = fixtures::scratch_dir("svc-config");
  c.model_path = c.library_root / "m.txt";
  fixtures::small_pretrained().save(c.model_path.string());
  CHECK_NOTHROW(c.validate());
  c.port = 70000;
  CHECK_THROWS(c.validate());
  c.port = 8080;
  c.adaptation.delta = 0.0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("timestamps are ISO 8601 UTC") {
  const Timestamp t{std::chrono::milliseconds(1700000000123)};
  CHECK(format_timestamp(t) == "2023-11-14T22:13:20.123Z");
}

}  // TEST_SUITE
