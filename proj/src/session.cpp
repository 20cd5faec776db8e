#include "lpaint/session.hpp"

#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "lpaint/error.hpp"
#include "lpaint/image.hpp"
#include "lpaint/pipeline.hpp"

namespace lpaint {

namespace fs = std::filesystem;

ModelBundle ModelBundle::load(const fs::path& dir) {
  ModelBundle bundle;
  bundle.generator = load_checkpoint(dir / "generator.arc");
  bundle.encoder = Encoder::load(dir / "encoder.arc");
  bundle.catalog = UnitCatalog::load(dir / "catalog.arc");
  if (fs::exists(dir / "styles.arc")) bundle.styles = styles_from_archive(Archive::load(dir / "styles.arc"));
  if (fs::exists(dir / "settings.json")) {
    BundleSettings::from_json(nlohmann::json::parse(read_file(dir / "settings.json"))).apply(bundle);
  }
  bundle.check_consistency();
  return bundle;
}

void ModelBundle::check_consistency() const {
  if (catalog.checkpoint_id != generator.checkpoint_id()) {
    throw ValidationError("catalog was built for checkpoint " + catalog.checkpoint_id +
                          ", generator is " + generator.checkpoint_id());
  }
  if (!(encoder.latent_shape() == generator.latent_shape())) {
    throw ShapeError("encoder output does not match the generator latent");
  }
  if (!(catalog.grid == generator.boundary_shape(catalog.boundary))) {
    throw ShapeError("catalog grid does not match the generator at its boundary");
  }
}

Archive styles_to_archive(const StyleLibrary& styles) {
  Archive archive;
  std::vector<std::string> ids;
  for (const auto& [id, z] : styles) {
    ids.push_back(id);
    archive.put("style." + id, z);
  }
  archive.meta = {{"format", "lpaint-styles"}, {"format_version", 1}, {"ids", ids}};
  return archive;
}

StyleLibrary styles_from_archive(const Archive& archive) {
  if (archive.meta.value("format", "") != "lpaint-styles") throw VersionError("archive is not a style library");
  StyleLibrary styles;
  for (const auto& id : archive.meta.at("ids")) {
    const std::string name = id.get<std::string>();
    styles[name] = archive.get("style." + name);
  }
  return styles;
}

std::string to_string(SessionState state) {
  switch (state) {
    case SessionState::inverting: return "inverting";
    case SessionState::preview_fitting: return "preview_fitting";
    case SessionState::ready: return "ready";
    case SessionState::adapting: return "adapting";
    case SessionState::done: return "done";
    case SessionState::error: return "error";
  }
  return "error";
}

SessionState session_state_from_string(const std::string& name) {
  for (auto s : {SessionState::inverting, SessionState::preview_fitting, SessionState::ready,
                 SessionState::adapting, SessionState::done, SessionState::error}) {
    if (to_string(s) == name) return s;
  }
  throw ValidationError("unknown session state '" + name + "'");
}

struct SessionManager::Session {
  std::string id;
  mutable std::mutex mutex;
  mutable std::condition_variable idle;
  SessionState state = SessionState::inverting;
  std::string error;
  Tensor image;
  std::string image_png;
  nlohmann::json pending_history;

  std::optional<LatentCode> z;
  double inversion_psnr = 0.0;
  std::vector<double> inversion_trace;
  std::optional<WeightAdaptedGenerator> preview_generator;
  std::optional<EditStack> stack;
  std::string preview_png;

  std::string final_png;
  std::string final_key;
  std::vector<double> final_trace;

  std::uint64_t job = 0;
  bool running = false;
  // Jobs up to and including this number are cancelled.
  std::atomic<std::uint64_t> cancelled_through{0};
  std::atomic<bool> shutdown{false};
  std::thread worker;
};

namespace {

std::string new_session_id(std::uint64_t counter) {
  static std::mt19937_64 rng{std::random_device{}()};
  std::ostringstream out;
  out << std::hex << rng() << counter;
  return out.str().substr(0, 16);
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, text);
}

}  // namespace

SessionManager::SessionManager(std::shared_ptr<const ModelBundle> model, SessionOptions options)
    : model_(std::move(model)), options_(std::move(options)) {
  if (options_.storage) {
    fs::create_directories(*options_.storage);
    restore();
  }
}

SessionManager::~SessionManager() {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(mutex_);
    for (auto& [id, s] : sessions_) all.push_back(s);
  }
  for (auto& s : all) {
    s->shutdown = true;
  }
  for (auto& s : all)
    if (s->worker.joinable()) s->worker.join();
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("no session '" + id + "'");
  return it->second;
}

std::size_t SessionManager::size() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

void SessionManager::launch(const std::shared_ptr<Session>& s, std::function<void()> work) {
  if (!options_.async) {
    work();
    return;
  }
  if (s->worker.joinable()) s->worker.join();
  s->worker = std::thread(std::move(work));
}

std::string SessionManager::create(const std::string& png, const nlohmann::json& history) {
  Tensor image;
  try {
    image = decode_png(png);
  } catch (const Error& e) {
    throw ValidationError(std::string("bad image: ") + e.what());
  }
  const GridShape out = model_->generator.output_shape();
  if (image.height() != out.height || image.width() != out.width) {
    throw ValidationError("image is " + std::to_string(image.height()) + "x" +
                          std::to_string(image.width()) + ", the model expects " +
                          std::to_string(out.height) + "x" + std::to_string(out.width));
  }
  if (!history.is_null() && !history.is_array()) throw ValidationError("history must be an array");

  auto s = std::make_shared<Session>();
  {
    std::lock_guard lock(mutex_);
    if (sessions_.size() >= options_.capacity) {
      throw CapacityError("server is at its capacity of " + std::to_string(options_.capacity) + " sessions");
    }
    do {
      s->id = new_session_id(next_session_++);
    } while (sessions_.contains(s->id));
    s->image = std::move(image);
    s->image_png = png;
    s->pending_history = history;
    s->running = true;
    sessions_[s->id] = s;
  }
  {
    std::lock_guard lock(s->mutex);
    persist(*s);
  }
  launch(s, [this, s] { run_setup(s); });
  return s->id;
}

void SessionManager::run_setup(const std::shared_ptr<Session>& s) {
  const ModelBundle& m = *model_;
  try {
    RefineConfig refine = m.refine;
    refine.cancelled = [s](std::size_t) { return s->shutdown.load(); };
    InversionResult inv = invert(m.generator, m.encoder, s->image, m.extractor, refine);
    {
      std::lock_guard lock(s->mutex);
      s->z = inv.z;
      s->inversion_psnr = inv.psnr;
      s->inversion_trace = inv.loss_trace;
      s->state = SessionState::preview_fitting;
      persist(*s);
    }
    WeightAdaptedGenerator preview = fit_preview_generator(m.generator, inv.z, s->image, m.preview);
    std::lock_guard lock(s->mutex);
    s->preview_generator = std::move(preview);
    s->stack.emplace(*s->z, m.generator.checkpoint_id());
    if (s->pending_history.is_array()) {
      s->stack->load_history(s->pending_history, m.catalog, &m.styles);
    }
    s->pending_history = nullptr;
    refresh_preview(*s);
    s->state = SessionState::ready;
    s->running = false;
    persist(*s);
    s->idle.notify_all();
  } catch (const std::exception& e) {
    std::lock_guard lock(s->mutex);
    s->state = SessionState::error;
    s->error = e.what();
    s->running = false;
    persist(*s);
    s->idle.notify_all();
  }
}

void SessionManager::refresh_preview(Session& s) {
  const LatentCode z_e = s.stack->replay(model_->catalog, &model_->styles);
  s.preview_png = encode_png(render(*s.preview_generator, z_e));
}

nlohmann::json SessionManager::edit_response(const Session& s) const {
  return {{"history", s.stack->history_json()}, {"preview_png", base64_encode(s.preview_png)}};
}

nlohmann::json SessionManager::post_edit(const std::string& id, const nlohmann::json& op_json) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (s->state == SessionState::adapting) throw ConflictError("session is busy rendering");
  if (s->state != SessionState::ready && s->state != SessionState::done) {
    throw ConflictError("session is " + to_string(s->state) + ", edits need a ready session");
  }
  EditOp op = EditOp::from_json(op_json);
  s->stack->push(std::move(op), model_->catalog, &model_->styles);
  refresh_preview(*s);
  s->state = SessionState::ready;
  persist(*s);
  return edit_response(*s);
}

nlohmann::json SessionManager::delete_edit(const std::string& id, std::uint64_t edit_id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (s->state == SessionState::adapting) throw ConflictError("session is busy rendering");
  if (s->state != SessionState::ready && s->state != SessionState::done) {
    throw ConflictError("session is " + to_string(s->state) + ", edits need a ready session");
  }
  try {
    s->stack->remove(edit_id);
  } catch (const ValidationError& e) {
    throw NotFoundError(e.what());
  }
  refresh_preview(*s);
  s->state = SessionState::ready;
  persist(*s);
  return edit_response(*s);
}

nlohmann::json SessionManager::start_render(const std::string& id) {
  auto s = find(id);
  std::unique_lock lock(s->mutex);
  if (s->state == SessionState::adapting) throw ConflictError("a render is already running");
  if (s->state != SessionState::ready && s->state != SessionState::done) {
    throw ConflictError("session is " + to_string(s->state) + ", rendering needs a ready session");
  }
  const std::string key = s->stack->digest(model_->catalog);
  if (!s->final_png.empty() && s->final_key == key) {
    s->state = SessionState::done;
    persist(*s);
    return {{"job", s->job}, {"state", to_string(s->state)}, {"cached", true}};
  }
  const std::uint64_t job = ++s->job;
  s->state = SessionState::adapting;
  s->running = true;
  persist(*s);
  nlohmann::json reply = {{"job", job}, {"state", to_string(s->state)}, {"cached", false}};
  lock.unlock();
  launch(s, [this, s, job] { run_adaptation(s, job); });
  return reply;
}

void SessionManager::run_adaptation(const std::shared_ptr<Session>& s, std::uint64_t job) {
  const ModelBundle& m = *model_;
  LatentCode z_e;
  BinaryMask mask;
  std::string key;
  {
    std::lock_guard lock(s->mutex);
    z_e = s->stack->replay(m.catalog, &m.styles);
    mask = region_footprint(s->stack->edited_region(), s->image.height(), s->image.width(),
                            m.footprint_dilation);
    key = s->stack->digest(m.catalog);
  }
  try {
    AdaptationConfig config = m.adaptation;
    config.cancelled = [s, job](std::size_t) { return s->cancelled_through.load() >= job || s->shutdown.load(); };
    AdaptedGenerator adapted = optimize_adaptation(m.generator, z_e, s->image, mask, config);
    std::string png = encode_png(render(adapted, z_e));
    std::lock_guard lock(s->mutex);
    if (s->job == job && s->state == SessionState::adapting) {
      s->final_png = std::move(png);
      s->final_key = key;
      s->final_trace = adapted.loss_trace;
      s->state = SessionState::done;
      s->error.clear();
      persist(*s);
    }
  } catch (const CancelledError&) {
    std::lock_guard lock(s->mutex);
    if (s->job == job && s->state == SessionState::adapting) s->state = SessionState::ready;
  } catch (const std::exception& e) {
    std::lock_guard lock(s->mutex);
    if (s->job == job) {
      s->state = SessionState::ready;
      s->error = e.what();
      persist(*s);
    }
  }
  std::lock_guard lock(s->mutex);
  if (s->job == job) s->running = false;
  s->idle.notify_all();
}

nlohmann::json SessionManager::render_status(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  nlohmann::json reply = {{"state", to_string(s->state)}, {"job", s->job}};
  if (s->state == SessionState::done) {
    reply["image"] = base64_encode(s->final_png);
    reply["loss_trace"] = s->final_trace;
  }
  if (!s->error.empty()) reply["error"] = s->error;
  return reply;
}

void SessionManager::cancel_render(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (s->state != SessionState::adapting) throw ConflictError("no render is running");
  s->cancelled_through = s->job;
  ++s->job;
  s->running = false;
  s->state = SessionState::ready;
  persist(*s);
  s->idle.notify_all();
}

void SessionManager::wait(const std::string& id) const {
  auto s = find(id);
  std::unique_lock lock(s->mutex);
  s->idle.wait(lock, [&] { return !s->running; });
}

nlohmann::json SessionManager::describe(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  nlohmann::json reply = {{"id", s->id}, {"state", to_string(s->state)}};
  reply["history"] = s->stack ? s->stack->history_json() : nlohmann::json::array();
  if (s->z) reply["inversion"] = {{"psnr", s->inversion_psnr}, {"steps", s->inversion_trace.size()}};
  if (!s->preview_png.empty()) reply["preview_png"] = base64_encode(s->preview_png);
  if (!s->error.empty()) reply["error"] = s->error;
  reply["has_final"] = !s->final_png.empty();
  return reply;
}

nlohmann::json SessionManager::history(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  return s->stack ? s->stack->history_json() : nlohmann::json::array();
}

std::string SessionManager::preview_png(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  return s->preview_png;
}

std::optional<std::string> SessionManager::final_png(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (s->final_png.empty()) return std::nullopt;
  return s->final_png;
}

nlohmann::json SessionManager::catalog() const {
  const ModelBundle& m = *model_;
  nlohmann::json classes = nlohmann::json::array();
  for (const ClassUnits& c : m.catalog.classes) {
    classes.push_back({{"name", c.name}, {"units", c.channels().size()}, {"available", !c.empty()}});
  }
  nlohmann::json presets = nlohmann::json::object();
  for (auto mode : {EditMode::draw, EditMode::erase, EditMode::restyle}) {
    presets[to_string(mode)] = {{"low", strength_preset(StrengthLevel::low, mode)},
                                {"med", strength_preset(StrengthLevel::med, mode)},
                                {"high", strength_preset(StrengthLevel::high, mode)}};
  }
  std::vector<std::string> styles;
  for (const auto& [id, z] : m.styles) styles.push_back(id);
  const GridShape out = m.generator.output_shape();
  return {{"checkpoint_id", m.generator.checkpoint_id()},
          {"classes", classes},
          {"presets", presets},
          {"grid", {{"height", m.catalog.grid.height}, {"width", m.catalog.grid.width}}},
          {"image", {{"height", out.height}, {"width", out.width}}},
          {"styles", styles}};
}

void SessionManager::persist(const Session& s) const {
  if (!options_.storage) return;
  const fs::path dir = *options_.storage / s.id;
  fs::create_directories(dir);
  if (!fs::exists(dir / "image.png")) write_text(dir / "image.png", s.image_png);
  nlohmann::json manifest = {{"id", s.id},
                             {"state", to_string(s.state)},
                             {"error", s.error},
                             {"checkpoint_id", model_->generator.checkpoint_id()},
                             {"final_key", s.final_key},
                             {"inversion_psnr", s.inversion_psnr},
                             {"inversion_trace", s.inversion_trace},
                             {"final_trace", s.final_trace}};
  manifest["history"] = s.stack ? s.stack->history_json() : s.pending_history;
  if (s.z && !fs::exists(dir / "z.arc")) {
    latent_to_archive(*s.z, model_->generator.checkpoint_id()).save(dir / "z.arc");
  }
  if (s.preview_generator && !fs::exists(dir / "preview.arc")) {
    save_checkpoint(dir / "preview.arc", s.preview_generator->generator);
  }
  if (!s.final_png.empty()) write_text(dir / "final.png", s.final_png);
  const fs::path tmp = dir / "manifest.json.tmp";
  write_text(tmp, manifest.dump(2));
  fs::rename(tmp, dir / "manifest.json");
}

void SessionManager::restore() {
  for (const auto& entry : fs::directory_iterator(*options_.storage)) {
    const fs::path manifest_path = entry.path() / "manifest.json";
    if (!entry.is_directory() || !fs::exists(manifest_path)) continue;
    try {
      const nlohmann::json manifest = nlohmann::json::parse(read_file(manifest_path));
      if (manifest.at("checkpoint_id").get<std::string>() != model_->generator.checkpoint_id()) {
        std::clog << "[sessions] skipping " << entry.path() << ": other checkpoint\n";
        continue;
      }
      auto s = std::make_shared<Session>();
      s->id = manifest.at("id").get<std::string>();
      s->image_png = read_file(entry.path() / "image.png");
      s->image = decode_png(s->image_png);
      s->state = session_state_from_string(manifest.at("state").get<std::string>());
      s->error = manifest.value("error", "");
      s->inversion_psnr = manifest.value("inversion_psnr", 0.0);
      s->inversion_trace = manifest.value("inversion_trace", std::vector<double>{});
      s->final_key = manifest.value("final_key", "");
      s->final_trace = manifest.value("final_trace", std::vector<double>{});
      const nlohmann::json history = manifest.value("history", nlohmann::json());
      const bool set_up = fs::exists(entry.path() / "z.arc") && fs::exists(entry.path() / "preview.arc") &&
                          s->state != SessionState::inverting && s->state != SessionState::preview_fitting &&
                          s->state != SessionState::error;
      if (set_up) {
        s->z = latent_from_archive(Archive::load(entry.path() / "z.arc"), model_->generator.checkpoint_id());
        s->preview_generator = WeightAdaptedGenerator{load_checkpoint(entry.path() / "preview.arc"), 0, {}};
        s->stack.emplace(*s->z, model_->generator.checkpoint_id());
        if (history.is_array()) s->stack->load_history(history, model_->catalog, &model_->styles);
        refresh_preview(*s);
        if (fs::exists(entry.path() / "final.png")) s->final_png = read_file(entry.path() / "final.png");
        // An interrupted render is lost; the session goes back to editing.
        if (s->state == SessionState::adapting) s->state = SessionState::ready;
      }
      {
        std::lock_guard lock(mutex_);
        sessions_[s->id] = s;
      }
      if (!set_up && s->state != SessionState::error) {
        s->state = SessionState::inverting;
        s->pending_history = history;
        s->running = true;
        launch(s, [this, s] { run_setup(s); });
      }
    } catch (const std::exception& e) {
      std::clog << "[sessions] could not restore " << entry.path() << ": " << e.what() << '\n';
    }
  }
}

}  // namespace lpaint
