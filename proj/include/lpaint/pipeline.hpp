#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lpaint/adaptation.hpp"
#include "lpaint/compositing.hpp"
#include "lpaint/dissection.hpp"
#include "lpaint/inversion.hpp"
#include "lpaint/session.hpp"
#include "lpaint/toy_model.hpp"

namespace lpaint {

// Labels of a rendered scene set, as generator latents and label maps.
struct LabeledLatents {
  std::vector<Tensor> latents;
  std::vector<LabelMap> labels;
};
LabeledLatents toy_labeled_latents(const ToyModel& model, std::uint64_t seed, std::size_t count);

struct DissectionConfig {
  std::size_t boundary = 0;
  double quantile = kDefaultQuantile;
  SelectionRule rule;
};

// Scores every class and builds the catalog. Classes absent from the sample
// get an empty unit set and a warning instead of an error.
UnitCatalog dissect(const LayeredGenerator& generator, const LabeledLatents& data,
                    const std::vector<std::string>& class_names, const DissectionConfig& config);

std::vector<std::string> scene_class_names();

// (G(z), z) pairs for encoder training.
std::vector<EncoderSample> toy_encoder_samples(const ToyModel& model, std::uint64_t seed,
                                               std::size_t count);

// Session settings stored next to a model as settings.json.
struct BundleSettings {
  RefineConfig refine;
  PreviewConfig preview;
  AdaptationConfig adaptation;
  std::size_t footprint_dilation = 0;

  static BundleSettings toy_defaults();
  nlohmann::json to_json() const;
  static BundleSettings from_json(const nlohmann::json& j);
  void apply(ModelBundle& bundle) const;
};

struct ToyBundleConfig {
  std::uint64_t seed = 1;
  std::size_t train_scenes = 1024;
  std::size_t holdout_scenes = 16;
  std::size_t generator_epochs = 20;
  std::size_t encoder_scenes = 1024;
  std::size_t encoder_epochs = 20;
  std::size_t dissection_scenes = 256;
  std::size_t style_count = 4;
  DissectionConfig dissection;
  BundleSettings settings = BundleSettings::toy_defaults();
  std::function<void(const std::string&)> log;
};

struct ToyBundleReport {
  ToyTrainingReport generator;
  EncoderTrainingReport encoder;
};

// Trains generator and encoder, dissects, draws reference styles and writes
// generator.arc, encoder.arc, catalog.arc, styles.arc, settings.json.
ToyBundleReport build_toy_bundle(const ToyBundleConfig& config, const std::filesystem::path& dir);

// A photograph (a rendered scene, not a generator sample) plus one edit.
struct EditFixture {
  std::string name;
  Scene scene;
  EditOp op;
};

// Draw and erase alternate; classes and 2x2 cell regions cycle.
std::vector<EditFixture> make_edit_fixtures(std::uint64_t seed, std::size_t count, const GridShape& grid);

struct FixtureRun {
  InversionResult inversion;
  LatentCode z_e;
  BinaryMask pixel_mask;  // 1 = edited footprint
};
FixtureRun prepare_fixture(const ModelBundle& bundle, const EditFixture& fixture);

// Latent code file: tensor "z" plus boundary and generator checkpoint id.
Archive latent_to_archive(const LatentCode& z, const std::string& checkpoint_id);
// Throws ValidationError when `checkpoint_id` is non-empty and differs.
LatentCode latent_from_archive(const Archive& archive, const std::string& checkpoint_id = "");

// Outside-mask PSNR of `output` against `target`.
double psnr_outside(const Tensor& output, const Tensor& target, const BinaryMask& pixel_mask);

// target.png, source.png, mask.png and edit.json per fixture directory.
void save_composite_fixture(const std::filesystem::path& dir, const CompositeFixture& fixture,
                            const EditOp* op = nullptr);
CompositeFixture load_composite_fixture(const std::filesystem::path& dir);
std::vector<std::filesystem::path> list_fixture_dirs(const std::filesystem::path& root);

}  // namespace lpaint
