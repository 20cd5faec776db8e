#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpaint/dissection.hpp"
#include "lpaint/generator.hpp"

namespace lpaint {

enum class EditMode { draw, erase, restyle };
std::string to_string(EditMode mode);
EditMode edit_mode_from_string(const std::string& name);

// Binary mask with a row-run-length wire form: each row is a list of run
// lengths alternating 0s and 1s, starting with a (possibly empty) 0 run.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }
  void set(std::size_t y, std::size_t x, bool on = true) { bits[y * width + x] = on ? 1 : 0; }
  bool any() const;
  std::size_t count() const;

  nlohmann::json to_json() const;
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

BinaryMask mask_from_json(const nlohmann::json& j);

// Pixel-resolution stroke.
struct StrokeMask {
  BinaryMask mask;
  double radius = 0.0;
  EditMode mode = EditMode::draw;
};

// Latent-grid region U.
using RegionMask = BinaryMask;

// Pixels within L2 distance `radius` of the polyline through the path points.
StrokeMask rasterize_stroke(std::size_t height, std::size_t width,
                            const std::vector<std::pair<double, double>>& path_xy, double radius);

// Cell is set iff the stroke touches its pixel block and covers at least
// `coverage_fraction` of it; the default 0 means any overlap.
RegionMask stroke_to_region(const StrokeMask& stroke, std::size_t grid_h, std::size_t grid_w,
                            double coverage_fraction = 0.0);

// Block upsampling of a region to pixel resolution, optionally dilated.
BinaryMask region_footprint(const RegionMask& region, std::size_t height, std::size_t width,
                            std::size_t dilate = 0);

// alpha = i_c (x) U as a (C, h, w) 0/1 tensor.
Tensor channel_mask(const UnitCatalog& catalog, const std::string& class_name,
                    const RegionMask& region);

enum class StrengthLevel { low, med, high };
StrengthLevel strength_level_from_string(const std::string& name);
double strength_preset(StrengthLevel level, EditMode mode);

struct EditOp {
  std::uint64_t id = 0;
  EditMode mode = EditMode::draw;
  std::string class_name;
  RegionMask region;
  double strength = 1.0;
  std::optional<std::string> style_source;

  void validate() const;
  nlohmann::json to_json() const;
  static EditOp from_json(const nlohmann::json& j);
  friend bool operator==(const EditOp&, const EditOp&) = default;
};

// Reference latents available to restyle ops, keyed by style_source id.
using StyleLibrary = std::map<std::string, Tensor>;

// z_e = (1 - alpha) * z + alpha * (s * p_c).
LatentCode apply_edit(const LatentCode& z, const EditOp& op, const UnitCatalog& catalog,
                      const StyleLibrary* styles = nullptr);

class EditStack {
 public:
  EditStack() = default;
  EditStack(LatentCode base, std::string checkpoint_id);

  const LatentCode& base() const { return base_; }
  const std::vector<EditOp>& ops() const { return ops_; }
  std::uint64_t next_id() const { return next_id_; }

  // Validates against the catalog by applying to the current result; on
  // failure the stack is unchanged. Returns the assigned id.
  std::uint64_t push(EditOp op, const UnitCatalog& catalog, const StyleLibrary* styles = nullptr);
  // Throws ValidationError for an unknown id.
  void remove(std::uint64_t id);

  LatentCode replay(const UnitCatalog& catalog, const StyleLibrary* styles = nullptr) const;
  std::string digest(const UnitCatalog& catalog) const;

  // Union of all op regions.
  RegionMask edited_region() const;

  nlohmann::json history_json() const;
  // Rebuilds ops and the id counter from exported history.
  void load_history(const nlohmann::json& history, const UnitCatalog& catalog,
                    const StyleLibrary* styles = nullptr);

 private:
  LatentCode base_;
  std::string checkpoint_id_;
  std::vector<EditOp> ops_;
  std::uint64_t next_id_ = 1;
  mutable std::string cache_key_;
  mutable LatentCode cache_;
};

}  // namespace lpaint
