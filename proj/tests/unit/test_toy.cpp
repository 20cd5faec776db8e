#include <doctest.h>

#include "lpaint/error.hpp"
#include "lpaint/image.hpp"
#include "lpaint/toy_model.hpp"
#include "oracles.hpp"

using namespace lpaint;

TEST_SUITE("toy") {
  TEST_CASE("standard layout uses disjoint channels") {
    const LatentLayout l = LatentLayout::standard(128);
    std::vector<int> seen(128, 0);
    for (auto c : l.coverage) ++seen[c];
    for (const auto& cs : l.color)
      for (auto c : cs) ++seen[c];
    for (std::size_t c = 0; c < 128; ++c) CHECK(seen[c] == (c < l.active_channels ? 1 : 0));
    CHECK(l.active_channels == 6 + 6 + 5 * 3);
    CHECK(l.coverage_channel("tree") == l.coverage[3]);
    CHECK_THROWS_AS(l.coverage_channel("lake"), ValidationError);
    CHECK_THROWS_AS(LatentLayout::standard(20), ShapeError);
  }

  TEST_CASE("coverage channels hold scaled class fractions per cell") {
    const LatentLayout l = LatentLayout::standard(128);
    const GridShape shape{128, 4, 4};
    for (const Scene& s : make_synthetic_dataset(17, 4)) {
      const Tensor z = scene_latent(l, s, shape);
      const LabelMap& labels = *s.image.labels;
      for (std::size_t cls = 0; cls < kSceneClassCount; ++cls)
        for (std::size_t gy = 0; gy < 4; ++gy)
          for (std::size_t gx = 0; gx < 4; ++gx) {
            double n = 0;
            for (std::size_t y = gy * 16; y < gy * 16 + 16; ++y)
              for (std::size_t x = gx * 16; x < gx * 16 + 16; ++x) n += labels.at(y, x) == cls;
            CHECK(z.at(l.coverage[cls], gy, gx) == doctest::Approx(l.scale * n / 256.0));
          }
      // Coverage sums to the scale in every cell; color never exceeds coverage.
      for (std::size_t gy = 0; gy < 4; ++gy)
        for (std::size_t gx = 0; gx < 4; ++gx) {
          double total = 0;
          for (std::size_t cls = 0; cls < kSceneClassCount; ++cls) {
            const float cover = z.at(l.coverage[cls], gy, gx);
            total += cover;
            for (auto ch : l.color[cls]) {
              CHECK(z.at(ch, gy, gx) >= -1e-6f);
              CHECK(z.at(ch, gy, gx) <= cover + 1e-6f);
            }
          }
          CHECK(total == doctest::Approx(l.scale));
        }
      for (std::size_t ch = l.active_channels; ch < 128; ++ch)
        for (std::size_t k = 0; k < 16; ++k) CHECK(z[ch * 16 + k] == 0.0f);
    }
  }

  TEST_CASE("latent grid must divide the label map") {
    const Scene s = make_synthetic_dataset(1, 1)[0];
    CHECK_THROWS_AS(scene_latent(LatentLayout::standard(128), s, {128, 5, 5}), ShapeError);
  }

  TEST_CASE("short training lowers the loss and round trips") {
    ToyTrainingConfig cfg;
    cfg.epochs = 3;
    cfg.architecture = {40, 4, {16, 8, 8, 8, 4}};
    cfg.perceptual_weight = 1.0f;
    ToyTrainingReport report;
    const ToyModel m = train_toy_generator(make_synthetic_dataset(1, 16), make_synthetic_dataset(2, 2), cfg, &report);
    CHECK(report.epoch_loss.size() == 3);
    CHECK(report.final_loss < report.initial_loss);
    CHECK(std::isfinite(report.holdout_psnr));

    testing::TempDir dir;
    save_toy_model(dir.path / "m.arc", m);
    const ToyModel back = load_toy_model(dir.path / "m.arc");
    CHECK(back.generator.checkpoint_id() == m.generator.checkpoint_id());
    CHECK(back.layout.coverage == m.layout.coverage);
    CHECK(back.layout.active_channels == m.layout.active_channels);
    // A plain checkpoint has no layout.
    save_checkpoint(dir.path / "plain.arc", m.generator);
    CHECK_THROWS_AS(load_toy_model(dir.path / "plain.arc"), ShapeError);
  }

  TEST_CASE("training rejects an empty set") {
    CHECK_THROWS_AS(train_toy_generator({}, {}, ToyTrainingConfig{}), ValidationError);
  }

  TEST_CASE("committed toy model reconstructs unseen scenes") {
    const ToyModel m = load_toy_model(testing::model_dir() / "generator.arc");
    double total = 0.0;
    const auto scenes = make_synthetic_dataset(9090, 8);
    for (const Scene& s : scenes) total += psnr(m.generator.forward({m.latent(s), 0}), s.image.pixels);
    CHECK(total / static_cast<double>(scenes.size()) >= 20.0);
  }

  TEST_CASE("committed model render matches the stored golden") {
    const ToyModel m = load_toy_model(lpaint::testing::model_dir() / "generator.arc");
    const Scene s = render_scene(random_scene_spec(31337));
    const Tensor got = quantize_8bit(m.generator.forward({m.latent(s), 0}));
    const Tensor want = read_png(lpaint::testing::data_dir() / "toy_render_31337.png");
    REQUIRE(got.shape() == want.shape());
    // One 8-bit step in [-1, 1] units.
    CHECK(max_abs_diff(got, want) <= 2.0f / 255.0f + 1e-6f);
  }
}
