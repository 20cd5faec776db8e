#include "lpaint/editing.hpp"

#include <algorithm>
#include <cmath>

#include "lpaint/archive.hpp"
#include "lpaint/error.hpp"

namespace lpaint {

std::string to_string(EditMode mode) {
  switch (mode) {
    case EditMode::draw: return "draw";
    case EditMode::erase: return "erase";
    case EditMode::restyle: return "restyle";
  }
  return "draw";
}

EditMode edit_mode_from_string(const std::string& name) {
  if (name == "draw") return EditMode::draw;
  if (name == "erase") return EditMode::erase;
  if (name == "restyle") return EditMode::restyle;
  throw ValidationError("unknown edit mode '" + name + "'");
}

bool BinaryMask::any() const {
  return std::any_of(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; });
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

nlohmann::json BinaryMask::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t y = 0; y < height; ++y) {
    std::vector<std::size_t> runs;
    std::uint8_t current = 0;
    std::size_t run = 0;
    for (std::size_t x = 0; x < width; ++x) {
      if (at(y, x) != current) {
        runs.push_back(run);
        current = at(y, x);
        run = 0;
      }
      ++run;
    }
    if (run > 0 || runs.empty()) runs.push_back(run);
    rows.push_back(runs);
  }
  return {{"height", height}, {"width", width}, {"rows", rows}};
}

BinaryMask mask_from_json(const nlohmann::json& j) {
  try {
    const auto h = j.at("height").get<std::size_t>();
    const auto w = j.at("width").get<std::size_t>();
    const auto& rows = j.at("rows");
    if (rows.size() != h) throw ValidationError("mask has " + std::to_string(rows.size()) + " rows, expected " + std::to_string(h));
    BinaryMask mask(h, w);
    for (std::size_t y = 0; y < h; ++y) {
      std::size_t x = 0;
      std::uint8_t value = 0;
      for (const auto& r : rows[y]) {
        const auto len = r.get<std::size_t>();
        if (x + len > w) throw ValidationError("mask row " + std::to_string(y) + " overruns width");
        for (std::size_t k = 0; k < len; ++k) mask.set(y, x + k, value != 0);
        x += len;
        value ^= 1;
      }
      if (x != w) throw ValidationError("mask row " + std::to_string(y) + " covers " + std::to_string(x) + " of " + std::to_string(w) + " pixels");
    }
    return mask;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed mask: ") + e.what());
  }
}

StrokeMask rasterize_stroke(std::size_t height, std::size_t width,
                            const std::vector<std::pair<double, double>>& path_xy, double radius) {
  StrokeMask stroke{BinaryMask(height, width), radius, EditMode::draw};
  if (path_xy.empty()) return stroke;
  const double r2 = radius * radius;
  auto dist2 = [](double px, double py, std::pair<double, double> a, std::pair<double, double> b) {
    const double dx = b.first - a.first;
    const double dy = b.second - a.second;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - a.first) * dx + (py - a.second) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = a.first + t * dx - px;
    const double ey = a.second + t * dy - py;
    return ex * ex + ey * ey;
  };
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const auto px = static_cast<double>(x);
      const auto py = static_cast<double>(y);
      bool on = false;
      for (std::size_t k = 0; k < path_xy.size() && !on; ++k) {
        const auto& b = path_xy[std::min(k + 1, path_xy.size() - 1)];
        on = dist2(px, py, path_xy[k], b) <= r2 + 1e-9;
      }
      if (on) stroke.mask.set(y, x);
    }
  }
  return stroke;
}

RegionMask stroke_to_region(const StrokeMask& stroke, std::size_t grid_h, std::size_t grid_w,
                            double coverage_fraction) {
  const BinaryMask& m = stroke.mask;
  if (grid_h == 0 || grid_w == 0 || m.height % grid_h != 0 || m.width % grid_w != 0) {
    throw ShapeError("stroke " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                     " is not divisible by grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w));
  }
  const std::size_t bh = m.height / grid_h;
  const std::size_t bw = m.width / grid_w;
  std::vector<std::size_t> covered(grid_h * grid_w, 0);
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x)
      if (m.at(y, x)) ++covered[(y / bh) * grid_w + x / bw];
  RegionMask region(grid_h, grid_w);
  const double block = static_cast<double>(bh * bw);
  for (std::size_t k = 0; k < covered.size(); ++k) {
    region.bits[k] = covered[k] > 0 && static_cast<double>(covered[k]) >= coverage_fraction * block;
  }
  return region;
}

BinaryMask region_footprint(const RegionMask& region, std::size_t height, std::size_t width,
                            std::size_t dilate) {
  if (region.height == 0 || region.width == 0 || height % region.height != 0 ||
      width % region.width != 0) {
    throw ShapeError("image is not a multiple of the region grid");
  }
  const std::size_t bh = height / region.height;
  const std::size_t bw = width / region.width;
  BinaryMask out(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) out.set(y, x, region.at(y / bh, x / bw) != 0);
  if (dilate == 0) return out;
  BinaryMask grown(height, width);
  const auto d = static_cast<long>(dilate);
  for (long y = 0; y < static_cast<long>(height); ++y) {
    for (long x = 0; x < static_cast<long>(width); ++x) {
      bool on = false;
      for (long dy = -d; dy <= d && !on; ++dy) {
        for (long dx = -d; dx <= d && !on; ++dx) {
          const long yy = y + dy;
          const long xx = x + dx;
          on = yy >= 0 && xx >= 0 && yy < static_cast<long>(height) && xx < static_cast<long>(width) &&
               out.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
        }
      }
      grown.set(static_cast<std::size_t>(y), static_cast<std::size_t>(x), on);
    }
  }
  return grown;
}

Tensor channel_mask(const UnitCatalog& catalog, const std::string& class_name,
                    const RegionMask& region) {
  const ClassUnits& units = catalog.find(class_name);
  if (units.empty()) throw ValidationError("class '" + class_name + "' has no dissected units");
  const std::size_t channels = units.indicator.size();
  Tensor alpha({channels, region.height, region.width});
  for (std::size_t c = 0; c < channels; ++c) {
    if (!units.indicator[c]) continue;
    for (std::size_t y = 0; y < region.height; ++y)
      for (std::size_t x = 0; x < region.width; ++x)
        if (region.at(y, x)) alpha.at(c, y, x) = 1.0f;
  }
  return alpha;
}

StrengthLevel strength_level_from_string(const std::string& name) {
  if (name == "low") return StrengthLevel::low;
  if (name == "med") return StrengthLevel::med;
  if (name == "high") return StrengthLevel::high;
  throw ValidationError("unknown strength level '" + name + "'");
}

double strength_preset(StrengthLevel level, EditMode mode) {
  if (mode == EditMode::erase) return 0.0;
  switch (level) {
    case StrengthLevel::low: return 0.5;
    case StrengthLevel::med: return 1.0;
    case StrengthLevel::high: return 2.0;
  }
  return 1.0;
}

void EditOp::validate() const {
  if (class_name.empty()) throw ValidationError("edit has no class");
  if (!std::isfinite(strength) || strength < 0.0) throw ValidationError("edit strength must be finite and >= 0");
  if (mode == EditMode::erase && strength != 0.0) throw ValidationError("erase edits have strength 0");
  if (mode == EditMode::restyle && !style_source) throw ValidationError("restyle edits need a style_source");
  if (region.bits.size() != region.height * region.width) throw ShapeError("region size does not match its dims");
  for (auto b : region.bits)
    if (b > 1) throw ValidationError("region is not binary");
}

nlohmann::json EditOp::to_json() const {
  nlohmann::json j = {{"id", id},
                      {"mode", to_string(mode)},
                      {"class", class_name},
                      {"region", region.to_json()},
                      {"s", strength}};
  if (style_source) j["style_source"] = *style_source;
  return j;
}

EditOp EditOp::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("edit must be a JSON object");
  EditOp op;
  try {
    op.id = j.value("id", std::uint64_t{0});
    op.mode = edit_mode_from_string(j.at("mode").get<std::string>());
    op.class_name = j.at("class").get<std::string>();
    op.region = mask_from_json(j.at("region"));
    if (j.contains("s")) {
      op.strength = j.at("s").get<double>();
    } else if (j.contains("level")) {
      op.strength = strength_preset(strength_level_from_string(j.at("level").get<std::string>()), op.mode);
    } else {
      op.strength = strength_preset(StrengthLevel::med, op.mode);
    }
    if (j.contains("style_source") && !j.at("style_source").is_null()) {
      op.style_source = j.at("style_source").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed edit: ") + e.what());
  }
  op.validate();
  return op;
}

LatentCode apply_edit(const LatentCode& z, const EditOp& op, const UnitCatalog& catalog,
                      const StyleLibrary* styles) {
  op.validate();
  if (z.boundary != catalog.boundary) {
    throw ValidationError("latent boundary " + std::to_string(z.boundary) +
                          " does not match catalog boundary " + std::to_string(catalog.boundary));
  }
  if (z.values.shape() != catalog.grid.shape()) {
    throw ShapeError("latent " + shape_string(z.values.shape()) + " does not match catalog grid " +
                     shape_string(catalog.grid.shape()));
  }
  if (op.region.height != catalog.grid.height || op.region.width != catalog.grid.width) {
    throw ShapeError("edit region " + std::to_string(op.region.height) + "x" +
                     std::to_string(op.region.width) + " does not match the latent grid");
  }
  const ClassUnits& units = catalog.find(op.class_name);
  if (units.empty()) throw ValidationError("class '" + op.class_name + "' has no dissected units");

  Tensor target = units.activation;
  if (op.mode == EditMode::restyle) {
    if (!styles || !styles->contains(*op.style_source)) {
      throw ValidationError("unknown style source '" + *op.style_source + "'");
    }
    target = reference_style_vector(styles->at(*op.style_source), catalog, op.class_name);
  }

  LatentCode out = z;
  const std::size_t h = catalog.grid.height;
  const std::size_t w = catalog.grid.width;
  const auto s = static_cast<float>(op.strength);
  for (std::size_t c = 0; c < units.indicator.size(); ++c) {
    if (!units.indicator[c]) continue;
    const float value = s * target[c];
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (op.region.at(y, x)) out.values.at(c, y, x) = value;
  }
  return out;
}

EditStack::EditStack(LatentCode base, std::string checkpoint_id)
    : base_(std::move(base)), checkpoint_id_(std::move(checkpoint_id)) {}

std::uint64_t EditStack::push(EditOp op, const UnitCatalog& catalog, const StyleLibrary* styles) {
  if (catalog.checkpoint_id != checkpoint_id_) {
    throw ValidationError("catalog belongs to checkpoint " + catalog.checkpoint_id +
                          ", stack to " + checkpoint_id_);
  }
  op.id = next_id_;
  apply_edit(base_, op, catalog, styles);
  ops_.push_back(std::move(op));
  return next_id_++;
}

void EditStack::remove(std::uint64_t id) {
  auto it = std::find_if(ops_.begin(), ops_.end(), [&](const EditOp& op) { return op.id == id; });
  if (it == ops_.end()) throw ValidationError("no edit with id " + std::to_string(id));
  ops_.erase(it);
}

std::string EditStack::digest(const UnitCatalog& catalog) const {
  nlohmann::json j = {{"catalog", catalog.config_digest},
                      {"checkpoint", catalog.checkpoint_id},
                      {"base", sha256_hex(base_.values.values())},
                      {"ops", history_json()}};
  return sha256_hex(j.dump());
}

LatentCode EditStack::replay(const UnitCatalog& catalog, const StyleLibrary* styles) const {
  if (catalog.checkpoint_id != checkpoint_id_) {
    throw ValidationError("catalog belongs to checkpoint " + catalog.checkpoint_id +
                          ", stack to " + checkpoint_id_);
  }
  // Restyle results depend on the library too, so only cache style-free stacks.
  const bool cacheable = std::none_of(ops_.begin(), ops_.end(),
                                      [](const EditOp& op) { return op.mode == EditMode::restyle; });
  const std::string key = cacheable ? digest(catalog) : std::string();
  if (cacheable && key == cache_key_) return cache_;
  LatentCode z = base_;
  for (const EditOp& op : ops_) z = apply_edit(z, op, catalog, styles);
  if (cacheable) {
    cache_key_ = key;
    cache_ = z;
  }
  return z;
}

RegionMask EditStack::edited_region() const {
  RegionMask region(base_.values.height(), base_.values.width());
  for (const EditOp& op : ops_) {
    if (op.region.height != region.height || op.region.width != region.width) continue;
    for (std::size_t k = 0; k < region.bits.size(); ++k) region.bits[k] |= op.region.bits[k];
  }
  return region;
}

nlohmann::json EditStack::history_json() const {
  nlohmann::json ops = nlohmann::json::array();
  for (const EditOp& op : ops_) ops.push_back(op.to_json());
  return ops;
}

void EditStack::load_history(const nlohmann::json& history, const UnitCatalog& catalog,
                             const StyleLibrary* styles) {
  if (!history.is_array()) throw ValidationError("history must be a JSON array");
  std::vector<EditOp> ops;
  std::uint64_t next = 1;
  for (const auto& entry : history) {
    EditOp op = EditOp::from_json(entry);
    if (op.id < next) throw ValidationError("history ids must be strictly increasing");
    apply_edit(base_, op, catalog, styles);
    next = op.id + 1;
    ops.push_back(std::move(op));
  }
  ops_ = std::move(ops);
  next_id_ = next;
}

}  // namespace lpaint
