#include "lpaint/service.hpp"

#include <cstdlib>
#include <iostream>

#include <httplib.h>

namespace lpaint {

namespace {

std::optional<std::string> env(const char* name) {
  const char* value = std::getenv(name);
  if (value == nullptr || *value == '\0') return std::nullopt;
  return std::string(value);
}

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Handler>
httplib::Server::Handler guarded(Handler handler) {
  return [handler](const httplib::Request& req, httplib::Response& res) {
    try {
      handler(req, res);
    } catch (const NotFoundError& e) {
      reply(res, 404, {{"error", e.what()}});
    } catch (const ConflictError& e) {
      reply(res, 409, {{"error", e.what()}});
    } catch (const CapacityError& e) {
      reply(res, 503, {{"error", e.what()}});
    } catch (const ValidationError& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const ShapeError& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const nlohmann::json::exception& e) {
      reply(res, 400, {{"error", std::string("bad request body: ") + e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  };
}

nlohmann::json body_json(const httplib::Request& req) {
  if (req.body.empty()) throw ValidationError("request body is empty");
  return nlohmann::json::parse(req.body);
}

}  // namespace

ServiceConfig ServiceConfig::from_env(ServiceConfig config) {
  if (auto v = env("LPAINT_CHECKPOINT")) config.model_dir = *v;
  if (auto v = env("LPAINT_CATALOG")) config.catalog_path = *v;
  if (auto v = env("LPAINT_PORT")) config.port = std::stoi(*v);
  if (auto v = env("LPAINT_CAPACITY")) config.capacity = std::stoul(*v);
  if (auto v = env("LPAINT_STORAGE")) config.storage = *v;
  return config;
}

void install_routes(httplib::Server& server, SessionManager& sessions) {
  server.Post("/sessions", guarded([&](const httplib::Request& req, httplib::Response& res) {
    const nlohmann::json body = body_json(req);
    if (!body.contains("image") || !body["image"].is_string()) {
      throw ValidationError("'image' must be a base64 PNG string");
    }
    const std::string png = base64_decode(body["image"].get<std::string>());
    const std::string id = sessions.create(png, body.value("history", nlohmann::json()));
    reply(res, 201, {{"id", id}, {"state", sessions.describe(id)["state"]}});
  }));

  server.Get(R"(/sessions/([^/]+))", guarded([&](const httplib::Request& req, httplib::Response& res) {
    reply(res, 200, sessions.describe(req.matches[1]));
  }));

  server.Post(R"(/sessions/([^/]+)/edits)", guarded([&](const httplib::Request& req, httplib::Response& res) {
    reply(res, 200, sessions.post_edit(req.matches[1], body_json(req)));
  }));

  server.Delete(R"(/sessions/([^/]+)/edits/(\d+))",
                guarded([&](const httplib::Request& req, httplib::Response& res) {
                  const auto edit_id = std::stoull(req.matches[2]);
                  reply(res, 200, sessions.delete_edit(req.matches[1], edit_id));
                }));

  server.Post(R"(/sessions/([^/]+)/render)", guarded([&](const httplib::Request& req, httplib::Response& res) {
    reply(res, 202, sessions.start_render(req.matches[1]));
  }));

  server.Get(R"(/sessions/([^/]+)/render)", guarded([&](const httplib::Request& req, httplib::Response& res) {
    reply(res, 200, sessions.render_status(req.matches[1]));
  }));

  server.Delete(R"(/sessions/([^/]+)/render)", guarded([&](const httplib::Request& req, httplib::Response& res) {
    sessions.cancel_render(req.matches[1]);
    reply(res, 200, sessions.render_status(req.matches[1]));
  }));

  server.Get("/catalog", guarded([&](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, sessions.catalog());
  }));
}

int serve(const ServiceConfig& config) {
  auto bundle = std::make_shared<ModelBundle>(ModelBundle::load(config.model_dir));
  if (config.catalog_path) {
    bundle->catalog = UnitCatalog::load(*config.catalog_path);
    bundle->check_consistency();
  }
  SessionOptions options;
  options.capacity = config.capacity;
  options.storage = config.storage;
  SessionManager sessions(bundle, options);

  httplib::Server server;
  install_routes(server, sessions);
  std::clog << "[serve] " << bundle->generator.checkpoint_id() << " on " << config.host << ':' << config.port
            << '\n';
  if (!server.listen(config.host, config.port)) {
    std::cerr << "could not listen on " << config.host << ':' << config.port << '\n';
    return 1;
  }
  return 0;
}

}  // namespace lpaint
