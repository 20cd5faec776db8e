#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "lpaint/image.hpp"
#include "lpaint/service.hpp"
#include "oracles.hpp"

using namespace lpaint;
using lpaint::testing::block_op;
using lpaint::testing::scene_png;

namespace {

struct Harness {
  SessionManager sessions;
  httplib::Server server;
  std::thread thread;
  int port = 0;

  explicit Harness(std::size_t capacity = 4)
      : sessions(std::make_shared<ModelBundle>(lpaint::testing::fast_bundle()), {capacity, true, std::nullopt}) {
    install_routes(server, sessions);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~Harness() {
    server.stop();
    thread.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }

  nlohmann::json wait_for(const std::string& path, const std::string& state) {
    auto c = client();
    for (int i = 0; i < 600; ++i) {
      auto r = c.Get(path);
      const auto j = nlohmann::json::parse(r->body);
      if (j["state"] == state || j["state"] == "error") return j;
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    return nullptr;
  }
};

std::string upload_body(const std::string& png) { return nlohmann::json{{"image", base64_encode(png)}}.dump(); }

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("full session lifecycle over HTTP") {
    Harness h;
    auto c = h.client();

    auto r = c.Post("/sessions", upload_body(scene_png(1)), "application/json");
    REQUIRE(r);
    CHECK(r->status == 201);
    const std::string id = nlohmann::json::parse(r->body)["id"];
    const std::string base = "/sessions/" + id;

    CHECK(h.wait_for(base, "ready")["state"] == "ready");

    r = c.Post(base + "/edits", block_op("draw", "tree").dump(), "application/json");
    CHECK(r->status == 200);
    auto j = nlohmann::json::parse(r->body);
    CHECK(j["history"].size() == 1);
    CHECK_FALSE(decode_png(base64_decode(j["preview_png"])).values().empty());

    r = c.Post(base + "/edits", block_op("draw", "dome").dump(), "application/json");
    CHECK(r->status == 200);
    r = c.Delete(base + "/edits/2");
    CHECK(r->status == 200);
    CHECK(nlohmann::json::parse(r->body)["history"].size() == 1);
    CHECK(c.Delete(base + "/edits/2")->status == 404);

    r = c.Post(base + "/render", "", "application/json");
    CHECK(r->status == 202);
    j = h.wait_for(base + "/render", "done");
    REQUIRE(j["state"] == "done");
    CHECK(decode_png(base64_decode(j["image"])).shape() == Shape{3, 64, 64});
    CHECK(j["loss_trace"].size() == 21);

    r = c.Post(base + "/render", "", "application/json");
    CHECK(r->status == 202);
    CHECK(nlohmann::json::parse(r->body)["cached"] == true);

    r = c.Get(base);
    CHECK(r->status == 200);
    CHECK(nlohmann::json::parse(r->body)["has_final"] == true);
    CHECK(c.Delete(base + "/render")->status == 409);
  }

  TEST_CASE("error statuses") {
    Harness h(1);
    auto c = h.client();
    CHECK(c.Get("/sessions/nope")->status == 404);
    CHECK(c.Post("/sessions/nope/edits", block_op("draw", "tree").dump(), "application/json")->status == 404);
    CHECK(c.Get("/sessions/nope/render")->status == 404);
    CHECK(c.Post("/sessions", "", "application/json")->status == 400);
    CHECK(c.Post("/sessions", "{not json", "application/json")->status == 400);
    CHECK(c.Post("/sessions", R"({"image": 5})", "application/json")->status == 400);
    CHECK(c.Post("/sessions", upload_body("garbage"), "application/json")->status == 400);
    CHECK(c.Post("/sessions", upload_body(encode_png(Tensor({3, 8, 8}))), "application/json")->status == 400);

    auto r = c.Post("/sessions", upload_body(scene_png(2)), "application/json");
    REQUIRE(r->status == 201);
    const std::string base = "/sessions/" + nlohmann::json::parse(r->body)["id"].get<std::string>();
    CHECK(c.Post("/sessions", upload_body(scene_png(3)), "application/json")->status == 503);
    h.wait_for(base, "ready");
    CHECK(c.Post(base + "/edits", R"({"mode": "paint"})", "application/json")->status == 400);
    CHECK(c.Post(base + "/edits", block_op("draw", "lake").dump(), "application/json")->status == 400);
    CHECK(c.Delete(base + "/render")->status == 409);
  }

  TEST_CASE("catalog route") {
    Harness h;
    auto r = h.client().Get("/catalog");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(r->get_header_value("Content-Type") == "application/json");
    const auto j = nlohmann::json::parse(r->body);
    CHECK(j["classes"].size() == 6);
    CHECK(j.contains("checkpoint_id"));
  }

  TEST_CASE("environment overrides") {
    ::setenv("LPAINT_PORT", "9191", 1);
    ::setenv("LPAINT_CAPACITY", "3", 1);
    ::setenv("LPAINT_STORAGE", "/tmp/somewhere", 1);
    ServiceConfig d;
    d.model_dir = "x";
    const ServiceConfig c = ServiceConfig::from_env(d);
    CHECK(c.port == 9191);
    CHECK(c.capacity == 3);
    CHECK(c.storage == std::filesystem::path("/tmp/somewhere"));
    CHECK(c.model_dir == "x");
    ::unsetenv("LPAINT_PORT");
    ::unsetenv("LPAINT_CAPACITY");
    ::unsetenv("LPAINT_STORAGE");
  }
}
