#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "lpaint/session.hpp"

namespace httplib {
class Server;
}

namespace lpaint {

struct ServiceConfig {
  std::filesystem::path model_dir;
  std::optional<std::filesystem::path> catalog_path;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t capacity = 16;
  std::optional<std::filesystem::path> storage;

  // LPAINT_CHECKPOINT, LPAINT_CATALOG, LPAINT_PORT, LPAINT_CAPACITY,
  // LPAINT_STORAGE override the defaults.
  static ServiceConfig from_env(ServiceConfig defaults);
};

// Registers the JSON routes on `server`. Errors map to 400 (validation),
// 404 (unknown session or edit), 409 (wrong state) and 503 (capacity).
void install_routes(httplib::Server& server, SessionManager& sessions);

// Loads the model and blocks serving until the process is stopped.
int serve(const ServiceConfig& config);

}  // namespace lpaint
