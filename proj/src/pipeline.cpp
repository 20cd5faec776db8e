#include "lpaint/pipeline.hpp"

#include <algorithm>

#include "lpaint/error.hpp"
#include "lpaint/image.hpp"

namespace lpaint {

namespace fs = std::filesystem;

LabeledLatents toy_labeled_latents(const ToyModel& model, std::uint64_t seed, std::size_t count) {
  LabeledLatents data;
  for (const Scene& scene : make_synthetic_dataset(seed, count, model.generator.output_shape().height)) {
    data.latents.push_back(model.latent(scene));
    data.labels.push_back(*scene.image.labels);
  }
  return data;
}

std::vector<std::string> scene_class_names() {
  return {kSceneClassNames.begin(), kSceneClassNames.end()};
}

UnitCatalog dissect(const LayeredGenerator& generator, const LabeledLatents& data,
                    const std::vector<std::string>& class_names, const DissectionConfig& config) {
  const auto samples = collect_activations(generator, data.latents, data.labels, config.boundary);
  const std::size_t channels = samples.front().activations.shape()[0];
  std::vector<ChannelScores> scores;
  std::vector<std::string> absent;
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    try {
      scores.push_back(channel_iou(samples, c, config.quantile, class_names));
    } catch (const ValidationError&) {
      absent.push_back(class_names[c]);
      scores.push_back({c, std::vector<double>(channels, 0.0), channel_thresholds(samples, config.quantile)});
    }
  }
  const nlohmann::json digest_input = {{"boundary", config.boundary},
                                       {"quantile", config.quantile},
                                       {"iou_floor", config.rule.iou_floor},
                                       {"max_units", config.rule.max_units},
                                       {"top_k", config.rule.top_k ? nlohmann::json(*config.rule.top_k) : nullptr},
                                       {"samples", data.latents.size()}};
  UnitCatalog catalog = build_catalog(scores, samples, class_names, config.rule, generator.checkpoint_id(),
                                      sha256_hex(digest_input.dump()).substr(0, 16));
  catalog.boundary = config.boundary;
  for (const auto& name : absent) catalog.warnings.push_back("class '" + name + "' does not occur in the sample");
  return catalog;
}

std::vector<EncoderSample> toy_encoder_samples(const ToyModel& model, std::uint64_t seed, std::size_t count) {
  std::vector<EncoderSample> samples;
  for (const Scene& scene : make_synthetic_dataset(seed, count, model.generator.output_shape().height)) {
    Tensor z = model.latent(scene);
    samples.push_back({model.generator.forward({z, 0}), std::move(z)});
  }
  return samples;
}

BundleSettings BundleSettings::toy_defaults() {
  BundleSettings s;
  s.refine.steps = 100;
  s.refine.learning_rate = 0.003f;
  s.adaptation.lambda_reg = 1e-5f;
  return s;
}

nlohmann::json BundleSettings::to_json() const {
  return {{"refine",
           {{"steps", refine.steps},
            {"learning_rate", refine.learning_rate},
            {"final_lr_fraction", refine.final_lr_fraction}}},
          {"preview", {{"steps", preview.steps}, {"learning_rate", preview.learning_rate}}},
          {"adaptation",
           {{"lambda_reg", adaptation.lambda_reg},
            {"learning_rate", adaptation.learning_rate},
            {"steps", adaptation.steps},
            {"mode", to_string(adaptation.mode)}}},
          {"footprint_dilation", footprint_dilation}};
}

BundleSettings BundleSettings::from_json(const nlohmann::json& j) {
  BundleSettings s;
  if (j.contains("refine")) {
    const auto& r = j["refine"];
    s.refine.steps = r.value("steps", s.refine.steps);
    s.refine.learning_rate = r.value("learning_rate", s.refine.learning_rate);
    s.refine.final_lr_fraction = r.value("final_lr_fraction", s.refine.final_lr_fraction);
  }
  if (j.contains("preview")) {
    s.preview.steps = j["preview"].value("steps", s.preview.steps);
    s.preview.learning_rate = j["preview"].value("learning_rate", s.preview.learning_rate);
  }
  if (j.contains("adaptation")) {
    const auto& a = j["adaptation"];
    s.adaptation.lambda_reg = a.value("lambda_reg", s.adaptation.lambda_reg);
    s.adaptation.learning_rate = a.value("learning_rate", s.adaptation.learning_rate);
    s.adaptation.steps = a.value("steps", s.adaptation.steps);
    if (a.contains("mode")) s.adaptation.mode = perturbation_mode_from_string(a["mode"].get<std::string>());
  }
  s.footprint_dilation = j.value("footprint_dilation", s.footprint_dilation);
  return s;
}

void BundleSettings::apply(ModelBundle& bundle) const {
  bundle.refine = refine;
  bundle.preview = preview;
  bundle.adaptation = adaptation;
  bundle.footprint_dilation = footprint_dilation;
}

ToyBundleReport build_toy_bundle(const ToyBundleConfig& config, const fs::path& dir) {
  auto log = [&](const std::string& line) {
    if (config.log) config.log(line);
  };
  fs::create_directories(dir);
  ToyBundleReport report;
  const std::uint64_t base = config.seed * 1000;

  log("training generator");
  ToyTrainingConfig gen_config;
  gen_config.seed = config.seed;
  gen_config.epochs = config.generator_epochs;
  const ToyModel model = train_toy_generator(make_synthetic_dataset(base + 1, config.train_scenes),
                                             make_synthetic_dataset(base + 2, config.holdout_scenes),
                                             gen_config, &report.generator);
  save_toy_model(dir / "generator.arc", model);

  log("training encoder");
  EncoderTrainingConfig enc_config;
  enc_config.seed = config.seed + 2;
  enc_config.epochs = config.encoder_epochs;
  enc_config.resample = [&](std::size_t epoch) {
    return toy_encoder_samples(model, base + 100 + epoch, config.encoder_scenes);
  };
  const Encoder encoder = train_encoder(model.generator,
                                        toy_encoder_samples(model, base + 3, config.encoder_scenes + enc_config.holdout),
                                        PerceptualExtractor::random(), enc_config, &report.encoder);
  encoder.save(dir / "encoder.arc");

  log("dissecting");
  const UnitCatalog catalog = dissect(model.generator, toy_labeled_latents(model, base + 4, config.dissection_scenes),
                                      scene_class_names(), config.dissection);
  catalog.save(dir / "catalog.arc");

  StyleLibrary styles;
  const auto refs = make_synthetic_dataset(base + 5, config.style_count);
  for (std::size_t i = 0; i < refs.size(); ++i) styles["ref-" + std::to_string(i)] = model.latent(refs[i]);
  styles_to_archive(styles).save(dir / "styles.arc");

  write_file(dir / "settings.json", config.settings.to_json().dump(2) + "\n");
  return report;
}

std::vector<EditFixture> make_edit_fixtures(std::uint64_t seed, std::size_t count, const GridShape& grid) {
  static const char* kClasses[] = {"tree", "door", "dome", "building"};
  if (grid.height < 3 || grid.width < 3) throw ShapeError("edit fixtures need at least a 3x3 grid");
  const auto scenes = make_synthetic_dataset(seed, count);
  std::vector<EditFixture> fixtures;
  for (std::size_t i = 0; i < count; ++i) {
    EditFixture f;
    f.name = "fx" + std::to_string(i);
    f.scene = scenes[i];
    f.op.mode = i % 2 == 0 ? EditMode::draw : EditMode::erase;
    f.op.class_name = kClasses[(i / 2 + i) % 4];
    f.op.strength = strength_preset(StrengthLevel::med, f.op.mode);
    f.op.region = RegionMask(grid.height, grid.width);
    const std::size_t y0 = 1 + i % (grid.height - 2);
    const std::size_t x0 = i % (grid.width - 1);
    for (std::size_t y = y0; y < y0 + 2 && y < grid.height; ++y)
      for (std::size_t x = x0; x < x0 + 2; ++x) f.op.region.set(y, x);
    fixtures.push_back(std::move(f));
  }
  return fixtures;
}

FixtureRun prepare_fixture(const ModelBundle& bundle, const EditFixture& fixture) {
  const Tensor& image = fixture.scene.image.pixels;
  FixtureRun run;
  run.inversion = invert(bundle.generator, bundle.encoder, image, bundle.extractor, bundle.refine);
  run.z_e = apply_edit(run.inversion.z, fixture.op, bundle.catalog, &bundle.styles);
  run.pixel_mask = region_footprint(fixture.op.region, image.height(), image.width(), bundle.footprint_dilation);
  return run;
}

Archive latent_to_archive(const LatentCode& z, const std::string& checkpoint_id) {
  Archive archive;
  archive.meta = {{"format", "lpaint-latent"},
                  {"format_version", 1},
                  {"boundary", z.boundary},
                  {"checkpoint_id", checkpoint_id}};
  archive.put("z", z.values);
  return archive;
}

LatentCode latent_from_archive(const Archive& archive, const std::string& checkpoint_id) {
  if (archive.meta.value("format", "") != "lpaint-latent") throw VersionError("archive is not a latent code");
  const std::string saved = archive.meta.value("checkpoint_id", "");
  if (!checkpoint_id.empty() && saved != checkpoint_id) {
    throw ValidationError("latent was produced by checkpoint " + saved + ", not " + checkpoint_id);
  }
  return {archive.get("z"), archive.meta.at("boundary").get<std::size_t>()};
}

double psnr_outside(const Tensor& output, const Tensor& target, const BinaryMask& pixel_mask) {
  std::vector<float> include(pixel_mask.bits.size());
  for (std::size_t i = 0; i < include.size(); ++i) include[i] = pixel_mask.bits[i] ? 0.0f : 1.0f;
  return psnr(output, target, &include);
}

namespace {

Tensor mask_image(const BinaryMask& mask) {
  Tensor t({3, mask.height, mask.width});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < mask.height; ++y)
      for (std::size_t x = 0; x < mask.width; ++x) t.at(c, y, x) = mask.at(y, x) ? 1.0f : -1.0f;
  return t;
}

BinaryMask image_mask(const Tensor& t) {
  BinaryMask mask(t.height(), t.width());
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x) mask.set(y, x, t.at(0, y, x) > 0.0f);
  return mask;
}

}  // namespace

void save_composite_fixture(const fs::path& dir, const CompositeFixture& fixture, const EditOp* op) {
  fs::create_directories(dir);
  write_png(dir / "target.png", fixture.target);
  write_png(dir / "source.png", fixture.source);
  write_png(dir / "mask.png", mask_image(fixture.mask));
  if (op != nullptr) write_file(dir / "edit.json", op->to_json().dump(2) + "\n");
}

CompositeFixture load_composite_fixture(const fs::path& dir) {
  CompositeFixture f;
  f.name = dir.filename().string();
  f.target = read_png(dir / "target.png");
  f.source = read_png(dir / "source.png");
  f.mask = image_mask(read_png(dir / "mask.png"));
  if (f.target.shape() != f.source.shape() || f.mask.height != f.target.height() ||
      f.mask.width != f.target.width()) {
    throw ShapeError("fixture " + f.name + " has mismatched image sizes");
  }
  return f;
}

std::vector<fs::path> list_fixture_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("no fixture directory at " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "target.png")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace lpaint
