#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lpaint/dissection.hpp"
#include "lpaint/error.hpp"
#include "lpaint/pipeline.hpp"
#include "oracles.hpp"

using namespace lpaint;

namespace {

// Pixel-level reference: upsample every map, threshold at the nearest-rank
// quantile of all cell values, average per-image IoU over non-empty unions.
double reference_iou(const std::vector<DissectionSample>& samples, std::size_t channel, std::size_t cls,
                     double q) {
  std::vector<float> all;
  float lo = std::numeric_limits<float>::infinity();
  for (const auto& s : samples) {
    const std::size_t plane = s.activations.height() * s.activations.width();
    for (std::size_t k = 0; k < plane; ++k) {
      all.push_back(s.activations[channel * plane + k]);
      lo = std::min(lo, all.back());
    }
  }
  std::sort(all.begin(), all.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(all.size())));
  const float t = all[std::max<std::size_t>(rank, 1) - 1];
  double sum = 0.0;
  int images = 0;
  for (const auto& s : samples) {
    const std::size_t h = s.labels.height, w = s.labels.width;
    const std::size_t bh = h / s.activations.height(), bw = w / s.activations.width();
    std::size_t inter = 0, uni = 0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const float a = s.activations.at(channel, y / bh, x / bw);
        const bool on = t == lo ? a > t : a >= t;
        const bool in = s.labels.at(y, x) == cls;
        inter += on && in;
        uni += on || in;
      }
    if (uni == 0) continue;
    sum += static_cast<double>(inter) / static_cast<double>(uni);
    ++images;
  }
  return images ? sum / images : 0.0;
}

std::vector<DissectionSample> random_samples(std::size_t n, std::size_t channels, std::mt19937_64& rng) {
  std::vector<DissectionSample> out;
  std::uniform_int_distribution<int> cls(0, 2);
  for (std::size_t i = 0; i < n; ++i) {
    DissectionSample s;
    s.activations = oracle::random_tensor({channels, 2, 3}, rng, -1.0f, 1.0f);
    // Quantize so ties occur.
    for (float& v : s.activations.values()) v = std::round(v * 4.0f) / 4.0f;
    s.labels = {4, 6, std::vector<std::uint8_t>(24)};
    for (auto& l : s.labels.labels) l = static_cast<std::uint8_t>(cls(rng));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_SUITE("dissection") {
  TEST_CASE("nearest-rank thresholds") {
    DissectionSample s;
    s.activations = Tensor({1, 2, 5}, std::vector<float>{5, 1, 9, 3, 7, 2, 8, 4, 6, 10});
    s.labels = {2, 5, std::vector<std::uint8_t>(10, 0)};
    CHECK(channel_thresholds({s}, 0.5)[0] == 5.0f);
    CHECK(channel_thresholds({s}, 0.99)[0] == 10.0f);
    CHECK(channel_thresholds({s}, 0.0)[0] == 1.0f);
    CHECK(channel_thresholds({s}, 0.91)[0] == 10.0f);
    CHECK(channel_thresholds({s}, 0.9)[0] == 9.0f);
  }

  TEST_CASE("iou matches the pixel-level reference") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const auto samples = random_samples(5, 4, rng);
      for (double q : {0.5, 0.8, 0.99}) {
        for (std::size_t cls = 0; cls < 3; ++cls) {
          const auto scores = channel_iou(samples, cls, q);
          for (std::size_t c = 0; c < 4; ++c)
            CHECK(scores.iou[c] == doctest::Approx(reference_iou(samples, c, cls, q)).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("a constant channel never fires") {
    DissectionSample s;
    s.activations = Tensor({1, 2, 2}, 0.5f);
    s.labels = {2, 2, {1, 1, 0, 0}};
    const auto scores = channel_iou({s}, 1, 0.99);
    CHECK(scores.iou[0] == 0.0);
  }

  TEST_CASE("hand-computed iou") {
    // Channel fires on the left column; class covers the top row.
    DissectionSample s;
    s.activations = Tensor({1, 2, 2}, std::vector<float>{1, 0, 1, 0});
    s.labels = {2, 2, {1, 1, 0, 0}};
    const auto scores = channel_iou({s}, 1, 0.5);
    CHECK(scores.thresholds[0] == 0.0f);  // median of {0,0,1,1} under nearest rank
    // Threshold equals the minimum, so the strict rule applies: left column on.
    CHECK(scores.iou[0] == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("absent class is a validation error") {
    std::mt19937_64 rng(1);
    const auto samples = random_samples(3, 2, rng);
    CHECK_THROWS_AS(channel_iou(samples, 7, 0.99, {"a", "b", "c"}), ValidationError);
  }

  TEST_CASE("selection honours floor, cap and top-k") {
    DissectionSample s;
    s.activations = Tensor({5, 1, 2}, std::vector<float>{1, 0, 2, 0, 3, 0, 4, 0, 5, 0});
    s.labels = {1, 2, {1, 0}};
    ChannelScores sc{1, {0.5, 0.03, 0.9, 0.2, 0.04}, {}};
    UnitCatalog cat = build_catalog({sc}, {s}, {"zero", "one"}, SelectionRule{}, "ck", "cfg");
    CHECK(cat.classes[0].name == "one");
    CHECK(cat.classes[0].channels() == std::vector<std::size_t>{0, 2, 3, 4});
    SelectionRule capped;
    capped.max_units = 2;
    cat = build_catalog({sc}, {s}, {"zero", "one"}, capped, "ck", "cfg");
    CHECK(cat.classes[0].channels() == std::vector<std::size_t>{0, 2});
    SelectionRule k;
    k.top_k = 5;
    cat = build_catalog({sc}, {s}, {"zero", "one"}, k, "ck", "cfg");
    CHECK(cat.classes[0].channels().size() == 5);
    // p_c: class-conditional mean over class pixels; only the left cell holds class 1.
    CHECK(cat.classes[0].activation[2] == 3.0f);
    SelectionRule strict;
    strict.iou_floor = 0.95;
    cat = build_catalog({sc}, {s}, {"zero", "one"}, strict, "ck", "cfg");
    CHECK(cat.classes[0].empty());
    CHECK(cat.warnings.size() == 1);
  }

  TEST_CASE("class-conditional mean weights cells by class pixels") {
    DissectionSample s;
    s.activations = Tensor({1, 1, 2}, std::vector<float>{2, 6});
    // Two class pixels fall in each cell.
    s.labels = {2, 4, {1, 1, 1, 0, 0, 0, 0, 1}};
    ChannelScores sc{1, {1.0}, {}};
    const UnitCatalog cat = build_catalog({sc}, {s}, {"a", "b"}, SelectionRule{}, "ck", "cfg");
    CHECK(cat.classes[0].activation[0] == doctest::Approx((2 * 2 + 2 * 6) / 4.0));
  }

  TEST_CASE("reference style vector averages positive activations") {
    UnitCatalog cat;
    cat.grid = {3, 1, 3};
    ClassUnits u;
    u.name = "tree";
    u.indicator = {1, 0, 1};
    u.activation = Tensor({3});
    u.iou = {1, 0, 1};
    cat.classes.push_back(u);
    const Tensor z({3, 1, 3}, std::vector<float>{1, 2, -3, 5, 5, 5, 0, 0, -1});
    const Tensor p = reference_style_vector(z, cat, "tree");
    CHECK(p[0] == doctest::Approx(1.5));
    CHECK(p[1] == 0.0f);
    CHECK(p[2] == 0.0f);
    CHECK_THROWS_AS(reference_style_vector(Tensor({2, 1, 3}), cat, "tree"), ShapeError);
    CHECK_THROWS_AS(reference_style_vector(z, cat, "lake"), ValidationError);
  }

  TEST_CASE("catalog archive round trip") {
    std::mt19937_64 rng(5);
    const auto samples = random_samples(4, 3, rng);
    std::vector<ChannelScores> scores;
    for (std::size_t c = 0; c < 3; ++c) scores.push_back(channel_iou(samples, c, 0.5));
    SelectionRule rule;
    rule.top_k = 2;
    UnitCatalog cat = build_catalog(scores, samples, {"a", "b", "c"}, rule, "ck", "cfg");
    cat.boundary = 2;
    testing::TempDir dir;
    cat.save(dir.path / "c.arc");
    const UnitCatalog back = UnitCatalog::load(dir.path / "c.arc");
    CHECK(back.checkpoint_id == "ck");
    CHECK(back.boundary == 2);
    CHECK(back.grid == cat.grid);
    REQUIRE(back.classes.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(back.classes[i].indicator == cat.classes[i].indicator);
      CHECK(back.classes[i].activation == cat.classes[i].activation);
    }
    CHECK(back.contains("b"));
    CHECK_THROWS_AS(back.find("z"), ValidationError);
  }

  TEST_CASE("planted coverage channels win on the toy model") {
    const ToyModel model = load_toy_model(testing::model_dir() / "generator.arc");
    const UnitCatalog cat = dissect(model.generator, toy_labeled_latents(model, 77, 256), scene_class_names(), {});
    for (const auto& units : cat.classes) {
      const auto best = std::max_element(units.iou.begin(), units.iou.end()) - units.iou.begin();
      CHECK(static_cast<std::size_t>(best) == model.layout.coverage_channel(units.name));
    }
  }

  TEST_CASE("dissect records absent classes as warnings") {
    const ToyModel model = load_toy_model(testing::model_dir() / "generator.arc");
    auto data = toy_labeled_latents(model, 5, 4);
    std::vector<std::string> names = scene_class_names();
    names.push_back("lake");  // id 6 never occurs
    const UnitCatalog cat = dissect(model.generator, data, names, {});
    CHECK(cat.find("lake").empty());
    CHECK(std::any_of(cat.warnings.begin(), cat.warnings.end(),
                      [](const std::string& w) { return w.find("lake") != std::string::npos; }));
  }
}
