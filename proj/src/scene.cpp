#include "lpaint/scene.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "lpaint/error.hpp"
#include "lpaint/nn.hpp"

namespace lpaint {

namespace {

Rgb random_color(std::mt19937_64& rng, Rgb lo, Rgb hi) {
  return {static_cast<float>(uniform(rng, lo.r, hi.r)), static_cast<float>(uniform(rng, lo.g, hi.g)),
          static_cast<float>(uniform(rng, lo.b, hi.b))};
}

int random_int(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(uniform01(rng) * (hi - lo + 1));
}

Rgb mix(Rgb a, Rgb b, float t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

Rgb shade(Rgb c, float amount) { return {c.r + amount, c.g + amount, c.b + amount}; }

}  // namespace

std::optional<std::size_t> scene_class_from_name(const std::string& name) {
  for (std::size_t i = 0; i < kSceneClassCount; ++i) {
    if (name == kSceneClassNames[i]) return i;
  }
  return std::nullopt;
}

SceneSpec random_scene_spec(std::uint64_t seed, std::size_t size) {
  if (size < 32) throw ValidationError("scene size must be at least 32 pixels");
  std::mt19937_64 rng(seed);
  SceneSpec s;
  s.seed = seed;
  s.size = size;
  const double k = static_cast<double>(size) / 64.0;
  auto scaled = [&](int v) { return static_cast<int>(std::lround(v * k)); };

  s.horizon = scaled(random_int(rng, 30, 44));
  s.sky_top = random_color(rng, {-0.4f, -0.1f, 0.3f}, {0.1f, 0.3f, 0.9f});
  s.sky_bottom = random_color(rng, {0.2f, 0.3f, 0.5f}, {0.7f, 0.8f, 0.95f});
  s.ground = random_color(rng, {-0.5f, -0.2f, -0.7f}, {0.0f, 0.3f, -0.2f});

  const int width = scaled(random_int(rng, 16, 34));
  s.building_left = random_int(rng, scaled(2), static_cast<int>(size) - width - scaled(2));
  s.building_right = s.building_left + width;
  s.building_top = s.horizon - scaled(random_int(rng, 10, 24));
  s.building = random_color(rng, {-0.3f, -0.4f, -0.5f}, {0.6f, 0.4f, 0.3f});

  s.has_dome = uniform01(rng) < 0.7;
  s.dome_radius = std::min(width / 2, scaled(random_int(rng, 5, 10)));
  s.dome = random_color(rng, {-0.2f, -0.6f, -0.6f}, {0.5f, 0.2f, 0.4f});

  s.has_door = uniform01(rng) < 0.85;
  s.door_width = scaled(random_int(rng, 4, 8));
  s.door_height = scaled(random_int(rng, 7, 12));
  s.door_left = s.building_left + (width - s.door_width) / 2 + random_int(rng, -2, 2);
  s.door = random_color(rng, {-0.9f, -0.9f, -0.9f}, {-0.4f, -0.5f, -0.5f});

  s.has_tree = uniform01(rng) < 0.8;
  s.tree_radius = scaled(random_int(rng, 5, 10));
  s.tree_x = random_int(rng, scaled(4), static_cast<int>(size) - scaled(4));
  s.tree_y = s.horizon - s.tree_radius / 2 + random_int(rng, -2, 3);
  s.tree = random_color(rng, {-0.8f, -0.2f, -0.8f}, {-0.3f, 0.4f, -0.3f});
  return s;
}

Scene render_scene(const SceneSpec& s) {
  const std::size_t n = s.size;
  const int size = static_cast<int>(n);
  Tensor pixels({3, n, n});
  LabelMap labels{n, n, std::vector<std::uint8_t>(n * n, 0)};
  std::mt19937_64 rng(mix_seed(s.seed, 0x7e47));

  // Per-pixel noise fields drawn in a fixed order so rendering is a pure
  // function of the seed.
  std::vector<float> fine(n * n);
  std::vector<float> blotch(n * n);
  for (auto& v : fine) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  for (std::size_t y = 0; y < n; y += 2) {
    for (std::size_t x = 0; x < n; x += 2) {
      const float v = static_cast<float>(uniform(rng, -1.0, 1.0));
      for (std::size_t dy = 0; dy < 2 && y + dy < n; ++dy)
        for (std::size_t dx = 0; dx < 2 && x + dx < n; ++dx) blotch[(y + dy) * n + x + dx] = v;
    }
  }

  auto put = [&](int x, int y, Rgb c, SceneClass cls) {
    if (x < 0 || y < 0 || x >= size || y >= size) return;
    pixels.at(0, y, x) = std::clamp(c.r, -1.0f, 1.0f);
    pixels.at(1, y, x) = std::clamp(c.g, -1.0f, 1.0f);
    pixels.at(2, y, x) = std::clamp(c.b, -1.0f, 1.0f);
    labels.labels[static_cast<std::size_t>(y) * n + x] = static_cast<std::uint8_t>(cls);
  };

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * n + x;
      if (y < s.horizon) {
        const float t = static_cast<float>(y) / static_cast<float>(std::max(1, s.horizon));
        put(x, y, shade(mix(s.sky_top, s.sky_bottom, t), 0.03f * fine[i]), SceneClass::sky);
      } else {
        const float stripe = ((y - s.horizon) % 3 == 0) ? -0.06f : 0.0f;
        put(x, y, shade(s.ground, stripe + 0.12f * fine[i]), SceneClass::ground);
      }
    }
  }

  const int building_bottom = std::min(size - 1, s.horizon + size / 16);
  for (int y = s.building_top; y <= building_bottom; ++y) {
    for (int x = s.building_left; x < s.building_right; ++x) {
      const std::size_t i = static_cast<std::size_t>(std::clamp(y, 0, size - 1)) * n + std::clamp(x, 0, size - 1);
      const int row = y - s.building_top;
      const bool mortar = row % 4 == 3 || ((x - s.building_left + (row / 4 % 2) * 4) % 8 == 0);
      put(x, y, shade(s.building, (mortar ? -0.25f : 0.0f) + 0.05f * fine[i]), SceneClass::building);
    }
  }

  if (s.has_dome) {
    const float cx = 0.5f * static_cast<float>(s.building_left + s.building_right - 1);
    const float cy = static_cast<float>(s.building_top);
    const float r = static_cast<float>(s.dome_radius);
    for (int y = s.building_top - s.dome_radius; y < s.building_top; ++y) {
      for (int x = s.building_left; x < s.building_right; ++x) {
        const float dx = static_cast<float>(x) - cx;
        const float dy = static_cast<float>(y) - cy;
        const float d = std::sqrt(dx * dx + dy * dy);
        if (d > r) continue;
        const std::size_t i = static_cast<std::size_t>(std::clamp(y, 0, size - 1)) * n + std::clamp(x, 0, size - 1);
        put(x, y, shade(s.dome, 0.25f * (-dx / r) - 0.1f * d / r + 0.04f * fine[i]), SceneClass::dome);
      }
    }
  }

  if (s.has_door) {
    for (int y = building_bottom - s.door_height + 1; y <= building_bottom; ++y) {
      for (int x = s.door_left; x < s.door_left + s.door_width; ++x) {
        const std::size_t i = static_cast<std::size_t>(std::clamp(y, 0, size - 1)) * n + std::clamp(x, 0, size - 1);
        const bool frame = x == s.door_left || x == s.door_left + s.door_width - 1;
        put(x, y, shade(s.door, (frame ? 0.15f : 0.0f) + 0.04f * fine[i]), SceneClass::door);
      }
    }
  }

  if (s.has_tree) {
    const int trunk_bottom = std::min(size - 1, s.tree_y + s.tree_radius + size / 10);
    for (int y = s.tree_y; y <= trunk_bottom; ++y) {
      for (int x = s.tree_x - 1; x <= s.tree_x; ++x) {
        put(x, y, Rgb{-0.3f, -0.5f, -0.7f}, SceneClass::tree);
      }
    }
    const float r = static_cast<float>(s.tree_radius);
    for (int y = s.tree_y - s.tree_radius; y <= s.tree_y + s.tree_radius; ++y) {
      for (int x = s.tree_x - s.tree_radius; x <= s.tree_x + s.tree_radius; ++x) {
        const float dx = static_cast<float>(x - s.tree_x);
        const float dy = static_cast<float>(y - s.tree_y);
        if (dx * dx + dy * dy > r * r) continue;
        const std::size_t i = static_cast<std::size_t>(std::clamp(y, 0, size - 1)) * n + std::clamp(x, 0, size - 1);
        put(x, y, shade(s.tree, 0.18f * blotch[i] - 0.1f * dy / r), SceneClass::tree);
      }
    }
  }

  return Scene{s, Image(std::move(pixels), std::move(labels))};
}

std::vector<Scene> make_synthetic_dataset(std::uint64_t seed, std::size_t count, std::size_t size) {
  if (count == 0) throw ValidationError("dataset count must be at least 1");
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    scenes.push_back(render_scene(random_scene_spec(mix_seed(seed, i), size)));
  }
  return scenes;
}

std::array<std::size_t, kSceneClassCount> class_histogram(const LabelMap& labels) {
  std::array<std::size_t, kSceneClassCount> hist{};
  for (auto l : labels.labels) ++hist.at(l);
  return hist;
}

}  // namespace lpaint
