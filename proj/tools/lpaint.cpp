#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lpaint/archive.hpp"
#include "lpaint/error.hpp"
#include "lpaint/image.hpp"
#include "lpaint/pipeline.hpp"
#include "lpaint/service.hpp"

#ifndef LPAINT_DEFAULT_MODEL_DIR
#define LPAINT_DEFAULT_MODEL_DIR "models"
#endif

namespace fs = std::filesystem;
using namespace lpaint;

namespace {

// A checkpoint is a model directory path or a name under $LPAINT_MODEL_DIR
// (falling back to the build's models directory).
fs::path resolve_checkpoint(const std::string& name) {
  if (fs::is_directory(name)) return name;
  if (const char* root = std::getenv("LPAINT_MODEL_DIR"); root != nullptr && fs::is_directory(fs::path(root) / name)) {
    return fs::path(root) / name;
  }
  const fs::path fallback = fs::path(LPAINT_DEFAULT_MODEL_DIR) / name;
  if (fs::is_directory(fallback)) return fallback;
  throw IoError("no checkpoint '" + name + "' (looked in ., $LPAINT_MODEL_DIR and " LPAINT_DEFAULT_MODEL_DIR ")");
}

ModelBundle load_bundle(const std::string& checkpoint) { return ModelBundle::load(resolve_checkpoint(checkpoint)); }

std::vector<EditOp> load_ops(const fs::path& path) {
  const nlohmann::json j = nlohmann::json::parse(read_file(path));
  if (!j.is_array()) throw ValidationError(path.string() + " must hold a JSON array of edit ops");
  std::vector<EditOp> ops;
  for (const auto& item : j) ops.push_back(EditOp::from_json(item));
  return ops;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::stringstream in(text);
  for (std::string part; std::getline(in, part, sep);)
    if (!part.empty()) parts.push_back(part);
  return parts;
}

std::string format_db(double v) {
  std::ostringstream out;
  out.precision(4);
  out << std::fixed << v;
  return std::isfinite(v) ? out.str() : "inf";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-space photo editing toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();

  // train-toy
  auto* train = app.add_subcommand("train-toy", "Train the toy generator, encoder and catalog");
  ToyBundleConfig toy;
  std::string train_out = "models/toy-v1";
  train->add_option("--out", train_out, "Model directory to write")->capture_default_str();
  train->add_option("--scenes", toy.train_scenes, "Training scenes")->capture_default_str();
  train->add_option("--epochs", toy.generator_epochs, "Generator epochs")->capture_default_str();
  train->add_option("--encoder-scenes", toy.encoder_scenes, "Encoder scenes per epoch")->capture_default_str();
  train->add_option("--encoder-epochs", toy.encoder_epochs, "Encoder epochs")->capture_default_str();
  train->add_option("--dissection-scenes", toy.dissection_scenes)->capture_default_str();

  // dissect
  auto* dis = app.add_subcommand("dissect", "Score generator channels against scene labels");
  std::string dis_checkpoint = "toy-v1", dis_out = "catalog.arc";
  std::size_t dis_scenes = 256;
  DissectionConfig dis_config;
  std::size_t top_k = 0;
  dis->add_option("--checkpoint", dis_checkpoint)->capture_default_str();
  dis->add_option("--scenes", dis_scenes)->capture_default_str();
  dis->add_option("--boundary", dis_config.boundary)->capture_default_str();
  dis->add_option("--quantile", dis_config.quantile)->capture_default_str();
  dis->add_option("--iou-floor", dis_config.rule.iou_floor)->capture_default_str();
  dis->add_option("--max-units", dis_config.rule.max_units)->capture_default_str();
  dis->add_option("--top-k", top_k, "Take exactly k channels per class (0 = use the floor)");
  dis->add_option("--out", dis_out)->capture_default_str();

  // invert
  auto* inv = app.add_subcommand("invert", "Recover a latent code for a photograph");
  std::string inv_image, inv_checkpoint = "toy-v1", inv_out = "z.arc";
  std::optional<std::size_t> inv_steps;
  std::optional<float> inv_lr;
  inv->add_option("--image", inv_image)->required();
  inv->add_option("--checkpoint", inv_checkpoint)->capture_default_str();
  inv->add_option("--out", inv_out)->capture_default_str();
  inv->add_option("--steps", inv_steps, "Refinement steps (model default when omitted)");
  inv->add_option("--lr", inv_lr, "Refinement learning rate");

  // edit
  auto* edit = app.add_subcommand("edit", "Apply a list of edit ops to a latent code");
  std::string edit_z, edit_ops, edit_checkpoint = "toy-v1", edit_out = "ze.arc", edit_render;
  edit->add_option("--z", edit_z)->required();
  edit->add_option("--ops", edit_ops, "JSON array of edit ops")->required();
  edit->add_option("--checkpoint", edit_checkpoint)->capture_default_str();
  edit->add_option("--out", edit_out)->capture_default_str();
  edit->add_option("--render", edit_render, "Also write G(z_e) as PNG");

  // adapt
  auto* adapt = app.add_subcommand("adapt", "Fit image-specific perturbations and render");
  std::string ad_z, ad_image, ad_ops, ad_mask, ad_checkpoint = "toy-v1", ad_out = "final.png", ad_trace, ad_deltas;
  std::optional<std::size_t> ad_steps;
  std::optional<float> ad_lambda, ad_lr;
  bool ad_random = false;
  adapt->add_option("--z", ad_z, "Edited latent code")->required();
  adapt->add_option("--image", ad_image, "Original photograph")->required();
  adapt->add_option("--ops", ad_ops, "Edit ops; their regions form the mask");
  adapt->add_option("--mask", ad_mask, "Pixel mask PNG (white = edited)");
  adapt->add_option("--checkpoint", ad_checkpoint)->capture_default_str();
  adapt->add_option("--steps", ad_steps);
  adapt->add_option("--lambda", ad_lambda, "Perturbation penalty weight");
  adapt->add_option("--lr", ad_lr);
  adapt->add_flag("--random-init", ad_random, "Start deltas from small noise drawn from --seed");
  adapt->add_option("--out", ad_out)->capture_default_str();
  adapt->add_option("--trace", ad_trace, "Write the loss trace as CSV");
  adapt->add_option("--deltas", ad_deltas, "Write the fitted perturbations");

  // fixtures
  auto* fix = app.add_subcommand("fixtures", "Write compositing fixtures built from toy edits");
  std::string fx_checkpoint = "toy-v1", fx_out = "fixtures";
  std::size_t fx_count = 8;
  fix->add_option("--checkpoint", fx_checkpoint)->capture_default_str();
  fix->add_option("--count", fx_count)->capture_default_str();
  fix->add_option("--out", fx_out)->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "Compare compositing methods on fixtures");
  std::string ev_fixtures, ev_methods = "naive,color_transfer,laplacian,poisson,ours", ev_checkpoint = "toy-v1",
                           ev_out;
  ev->add_option("--fixtures", ev_fixtures)->required();
  ev->add_option("--methods", ev_methods)->capture_default_str();
  ev->add_option("--checkpoint", ev_checkpoint, "Model for the 'ours' and 'preview' methods")->capture_default_str();
  ev->add_option("--out", ev_out, "CSV path (stdout when omitted)");

  // serve
  auto* srv = app.add_subcommand("serve", "Run the HTTP session service");
  ServiceConfig service;
  std::string srv_checkpoint = "toy-v1", srv_storage;
  srv->add_option("--checkpoint", srv_checkpoint)->capture_default_str();
  srv->add_option("--host", service.host)->capture_default_str();
  srv->add_option("--port", service.port)->capture_default_str();
  srv->add_option("--capacity", service.capacity)->capture_default_str();
  srv->add_option("--storage", srv_storage, "Directory for persisted sessions");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      toy.seed = seed == 0 ? 1 : seed;
      toy.log = [](const std::string& line) { std::clog << "[train-toy] " << line << '\n'; };
      const auto report = build_toy_bundle(toy, train_out);
      std::cout << "generator holdout psnr " << format_db(report.generator.holdout_psnr) << " dB\n"
                << "encoder holdout pearson " << report.encoder.holdout_pearson << '\n'
                << "wrote " << train_out << '\n';
    } else if (*dis) {
      if (top_k > 0) dis_config.rule.top_k = top_k;
      const ToyModel model = load_toy_model(resolve_checkpoint(dis_checkpoint) / "generator.arc");
      const UnitCatalog catalog =
          dissect(model.generator, toy_labeled_latents(model, seed, dis_scenes), scene_class_names(), dis_config);
      catalog.save(dis_out);
      for (const auto& c : catalog.classes) {
        std::cout << c.name << ':';
        for (auto ch : c.channels()) std::cout << ' ' << ch;
        std::cout << '\n';
      }
      for (const auto& w : catalog.warnings) std::clog << "warning: " << w << '\n';
    } else if (*inv) {
      ModelBundle bundle = load_bundle(inv_checkpoint);
      if (inv_steps) bundle.refine.steps = *inv_steps;
      if (inv_lr) bundle.refine.learning_rate = *inv_lr;
      const Tensor image = read_png(inv_image);
      const InversionResult result = invert(bundle.generator, bundle.encoder, image, bundle.extractor, bundle.refine);
      latent_to_archive(result.z, bundle.generator.checkpoint_id()).save(inv_out);
      std::cout << "psnr " << format_db(result.psnr) << " dB\n";
    } else if (*edit) {
      const ModelBundle bundle = load_bundle(edit_checkpoint);
      const LatentCode z = latent_from_archive(Archive::load(edit_z), bundle.generator.checkpoint_id());
      EditStack stack(z, bundle.generator.checkpoint_id());
      for (auto& op : load_ops(edit_ops)) stack.push(op, bundle.catalog, &bundle.styles);
      const LatentCode z_e = stack.replay(bundle.catalog, &bundle.styles);
      latent_to_archive(z_e, bundle.generator.checkpoint_id()).save(edit_out);
      if (!edit_render.empty()) write_png(edit_render, bundle.generator.forward(z_e));
      std::cout << "applied " << stack.ops().size() << " ops\n";
    } else if (*adapt) {
      ModelBundle bundle = load_bundle(ad_checkpoint);
      AdaptationConfig config = bundle.adaptation;
      if (ad_steps) config.steps = *ad_steps;
      if (ad_lambda) config.lambda_reg = *ad_lambda;
      if (ad_lr) config.learning_rate = *ad_lr;
      config.random_init = ad_random;
      config.seed = seed;
      const LatentCode z_e = latent_from_archive(Archive::load(ad_z), bundle.generator.checkpoint_id());
      const Tensor image = read_png(ad_image);
      BinaryMask mask(image.height(), image.width());
      if (!ad_mask.empty()) {
        const Tensor m = read_png(ad_mask);
        for (std::size_t y = 0; y < mask.height; ++y)
          for (std::size_t x = 0; x < mask.width; ++x) mask.set(y, x, m.at(0, y, x) > 0.0f);
      } else if (!ad_ops.empty()) {
        RegionMask region(bundle.catalog.grid.height, bundle.catalog.grid.width);
        for (const auto& op : load_ops(ad_ops))
          for (std::size_t i = 0; i < region.bits.size(); ++i) region.bits[i] |= op.region.bits.at(i);
        mask = region_footprint(region, image.height(), image.width(), bundle.footprint_dilation);
      }
      const AdaptedGenerator adapted = optimize_adaptation(bundle.generator, z_e, image, mask, config);
      const Tensor out = render(adapted, z_e);
      write_png(ad_out, out);
      if (!ad_trace.empty()) write_file(ad_trace, loss_trace_csv(adapted.loss_trace));
      if (!ad_deltas.empty()) adapted.to_archive().save(ad_deltas);
      std::cout << "outside-mask psnr " << format_db(psnr_outside(out, image, mask)) << " dB\n";
    } else if (*fix) {
      const ModelBundle bundle = load_bundle(fx_checkpoint);
      for (const auto& f : make_edit_fixtures(seed, fx_count, bundle.catalog.grid)) {
        const FixtureRun run = prepare_fixture(bundle, f);
        CompositeFixture c{f.name, f.scene.image.pixels, bundle.generator.forward(run.z_e), run.pixel_mask, {}};
        save_composite_fixture(fs::path(fx_out) / f.name, c, &f.op);
        std::cout << f.name << ' ' << to_string(f.op.mode) << ' ' << f.op.class_name << '\n';
      }
    } else if (*ev) {
      const auto methods = split(ev_methods, ',');
      const bool needs_model = std::any_of(methods.begin(), methods.end(),
                                           [](const std::string& m) { return m == "ours" || m == "preview"; });
      std::optional<ModelBundle> bundle;
      if (needs_model) bundle = load_bundle(ev_checkpoint);
      std::vector<CompositeFixture> fixtures;
      std::map<std::pair<std::string, std::string>, double> model_ms;
      for (const auto& dir : list_fixture_dirs(ev_fixtures)) {
        CompositeFixture f = load_composite_fixture(dir);
        if (bundle) {
          if (!fs::exists(dir / "edit.json")) throw ValidationError(f.name + " has no edit.json for model methods");
          EditFixture ef{f.name, Scene{{}, Image(f.target)}, EditOp::from_json(nlohmann::json::parse(read_file(dir / "edit.json")))};
          const auto t0 = std::chrono::steady_clock::now();
          const FixtureRun run = prepare_fixture(*bundle, ef);
          const auto t1 = std::chrono::steady_clock::now();
          for (const auto& m : methods) {
            const auto start = std::chrono::steady_clock::now();
            if (m == "ours") {
              f.renders[m] = render(optimize_adaptation(bundle->generator, run.z_e, f.target, f.mask, bundle->adaptation), run.z_e);
            } else if (m == "preview") {
              f.renders[m] = render(fit_preview_generator(bundle->generator, run.inversion.z, f.target, bundle->preview), run.z_e);
            } else {
              continue;
            }
            const auto end = std::chrono::steady_clock::now();
            model_ms[{m, f.name}] = std::chrono::duration<double, std::milli>(end - start + (t1 - t0)).count();
          }
        }
        fixtures.push_back(std::move(f));
      }
      auto rows = evaluate(methods, fixtures);
      for (auto& row : rows)
        if (auto it = model_ms.find({row.method, row.fixture}); it != model_ms.end()) row.wall_ms = it->second;
      const std::string csv = metrics_csv(rows);
      if (ev_out.empty()) {
        std::cout << csv;
      } else {
        write_file(ev_out, csv);
      }
    } else if (*srv) {
      service.model_dir = resolve_checkpoint(srv_checkpoint);
      if (!srv_storage.empty()) service.storage = srv_storage;
      service = ServiceConfig::from_env(service);
      return serve(service);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
