#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "lpaint/adaptation.hpp"
#include "lpaint/dissection.hpp"
#include "lpaint/editing.hpp"
#include "lpaint/error.hpp"
#include "lpaint/inversion.hpp"

namespace lpaint {

// Everything a session needs from the loaded model.
struct ModelBundle {
  LayeredGenerator generator;
  Encoder encoder;
  UnitCatalog catalog;
  PerceptualExtractor extractor = PerceptualExtractor::random();
  StyleLibrary styles;
  RefineConfig refine;
  PreviewConfig preview;
  AdaptationConfig adaptation;
  std::size_t footprint_dilation = 0;

  // Reads generator.arc, encoder.arc, catalog.arc and, when present,
  // styles.arc and settings.json from a model directory.
  static ModelBundle load(const std::filesystem::path& dir);
  // Refuses a catalog or encoder that does not match the generator.
  void check_consistency() const;
};

Archive styles_to_archive(const StyleLibrary& styles);
StyleLibrary styles_from_archive(const Archive& archive);

enum class SessionState { inverting, preview_fitting, ready, adapting, done, error };
std::string to_string(SessionState state);
SessionState session_state_from_string(const std::string& name);

// Error raised for lookups of sessions or edits that do not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Request conflicts with the session's current state.
class ConflictError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

struct SessionOptions {
  std::size_t capacity = 16;
  // Run inversion and adaptation on worker threads.
  bool async = true;
  // Sessions persist here when set.
  std::optional<std::filesystem::path> storage;
};

class SessionManager {
 public:
  SessionManager(std::shared_ptr<const ModelBundle> model, SessionOptions options);
  ~SessionManager();
  SessionManager(const SessionManager&) = delete;
  SessionManager& operator=(const SessionManager&) = delete;

  // PNG bytes in; returns the id while inversion runs. A history (as exported
  // by `history`) is replayed once the preview generator is ready.
  std::string create(const std::string& png, const nlohmann::json& history = nullptr);
  nlohmann::json describe(const std::string& id) const;
  nlohmann::json history(const std::string& id) const;

  // {history, preview_png}
  nlohmann::json post_edit(const std::string& id, const nlohmann::json& op);
  nlohmann::json delete_edit(const std::string& id, std::uint64_t edit_id);

  // {job, state}
  nlohmann::json start_render(const std::string& id);
  // {state, image?, loss_trace?}
  nlohmann::json render_status(const std::string& id) const;
  void cancel_render(const std::string& id);

  nlohmann::json catalog() const;

  // Blocks until no job is running for the session.
  void wait(const std::string& id) const;
  std::size_t size() const;

  // Raw artifacts for tests and the CLI.
  std::string preview_png(const std::string& id) const;
  std::optional<std::string> final_png(const std::string& id) const;

 private:
  struct Session;

  std::shared_ptr<Session> find(const std::string& id) const;
  void run_setup(const std::shared_ptr<Session>& s);
  void run_adaptation(const std::shared_ptr<Session>& s, std::uint64_t job);
  void launch(const std::shared_ptr<Session>& s, std::function<void()> work);
  void refresh_preview(Session& s);
  nlohmann::json edit_response(const Session& s) const;
  void persist(const Session& s) const;
  void restore();

  std::shared_ptr<const ModelBundle> model_;
  SessionOptions options_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_session_ = 1;
};

}  // namespace lpaint
