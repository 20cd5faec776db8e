#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lpaint/image.hpp"

namespace lpaint {

enum class SceneClass : std::uint8_t { sky = 0, ground, building, tree, dome, door };

inline constexpr std::size_t kSceneClassCount = 6;
inline constexpr std::array<const char*, kSceneClassCount> kSceneClassNames = {
    "sky", "ground", "building", "tree", "dome", "door"};

std::optional<std::size_t> scene_class_from_name(const std::string& name);

struct Rgb {
  float r = 0, g = 0, b = 0;
};

// Layout and palette of one procedurally drawn church-like scene. Everything
// is derived from `seed`; the remaining fields are kept so fixtures can be
// inspected and tweaked.
struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t size = 64;
  int horizon = 36;
  Rgb sky_top, sky_bottom, ground;
  int building_left = 20, building_right = 44, building_top = 20;
  Rgb building;
  bool has_dome = true;
  int dome_radius = 6;
  Rgb dome;
  bool has_door = true;
  int door_left = 29, door_width = 6, door_height = 10;
  Rgb door;
  bool has_tree = true;
  int tree_x = 10, tree_y = 30, tree_radius = 7;
  Rgb tree;
};

struct Scene {
  SceneSpec spec;
  Image image;  // labels always present
};

SceneSpec random_scene_spec(std::uint64_t seed, std::size_t size = 64);
Scene render_scene(const SceneSpec& spec);

// count scenes with per-scene seeds derived from `seed`.
std::vector<Scene> make_synthetic_dataset(std::uint64_t seed, std::size_t count,
                                          std::size_t size = 64);

std::array<std::size_t, kSceneClassCount> class_histogram(const LabelMap& labels);

}  // namespace lpaint
