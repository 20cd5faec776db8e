#include "lpaint/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>

#include "lpaint/error.hpp"

namespace lpaint {

namespace {

struct WeightOptimizer {
  std::vector<AdamState> weight_states;
  std::vector<AdamState> bias_states;
  std::vector<ConvGrad> grads;

  explicit WeightOptimizer(const LayeredGenerator& g)
      : weight_states(g.layer_count()), bias_states(g.layer_count()) {
    for (std::size_t i = 0; i < g.layer_count(); ++i) grads.emplace_back(g.layer(i));
  }

  void apply(LayeredGenerator& g, const AdamConfig& adam, float lr, float scale) {
    for (std::size_t i = 0; i < g.layer_count(); ++i) {
      for (float& v : grads[i].weight.values()) v *= scale;
      for (float& v : grads[i].bias.values()) v *= scale;
      adam_update(adam, lr, weight_states[i], g.layer(i).weight.values(), grads[i].weight.values());
      adam_update(adam, lr, bias_states[i], g.layer(i).bias.values(), grads[i].bias.values());
      grads[i].zero();
    }
  }
};

float cosine_lr(float base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double t = static_cast<double>(step) / static_cast<double>(total);
  return static_cast<float>(base * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * t))));
}

}  // namespace

LatentLayout LatentLayout::standard(std::size_t latent_channels) {
  LatentLayout layout;
  std::size_t next = 0;
  for (std::size_t c = 0; c < kSceneClassCount; ++c) layout.coverage.push_back(next++);
  for (std::size_t c = 0; c < kSceneClassCount; ++c) {
    const std::size_t count = c == static_cast<std::size_t>(SceneClass::sky) ? 6 : 3;
    std::vector<std::size_t> channels;
    for (std::size_t k = 0; k < count; ++k) channels.push_back(next++);
    layout.color.push_back(std::move(channels));
  }
  if (latent_channels < next) {
    throw ShapeError("toy latent needs at least " + std::to_string(next) + " channels, got " +
                     std::to_string(latent_channels));
  }
  layout.active_channels = next;
  return layout;
}

bool LatentLayout::is_coverage(std::size_t channel) const {
  return std::find(coverage.begin(), coverage.end(), channel) != coverage.end();
}

std::size_t LatentLayout::coverage_channel(const std::string& class_name) const {
  const auto cls = scene_class_from_name(class_name);
  if (!cls || *cls >= coverage.size()) throw ValidationError("unknown scene class '" + class_name + "'");
  return coverage[*cls];
}

Tensor scene_latent(const LatentLayout& layout, const Scene& scene, const GridShape& shape) {
  const LabelMap& labels = *scene.image.labels;
  const std::size_t gh = shape.height;
  const std::size_t gw = shape.width;
  if (labels.height % gh != 0 || labels.width % gw != 0) {
    throw ShapeError("label map " + std::to_string(labels.height) + "x" +
                     std::to_string(labels.width) + " is not a multiple of the latent grid");
  }
  if (shape.channels < layout.active_channels) throw ShapeError("latent has too few channels for the layout");
  const std::size_t bh = labels.height / gh;
  const std::size_t bw = labels.width / gw;
  const SceneSpec& s = scene.spec;
  const std::vector<std::vector<Rgb>> palette = {
      {s.sky_top, s.sky_bottom}, {s.ground}, {s.building}, {s.tree}, {s.dome}, {s.door}};

  Tensor z(shape.shape());
  const float unit = layout.scale / static_cast<float>(bh * bw);
  for (std::size_t cls = 0; cls < layout.coverage.size(); ++cls) {
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        std::size_t count = 0;
        for (std::size_t y = gy * bh; y < (gy + 1) * bh; ++y)
          for (std::size_t x = gx * bw; x < (gx + 1) * bw; ++x) count += labels.at(y, x) == cls;
        const float cover = unit * static_cast<float>(count);
        z.at(layout.coverage[cls], gy, gx) = cover;
        const auto& channels = layout.color[cls];
        for (std::size_t k = 0; k < channels.size(); ++k) {
          const Rgb& c = palette[cls][k / 3];
          const float v = k % 3 == 0 ? c.r : (k % 3 == 1 ? c.g : c.b);
          z.at(channels[k], gy, gx) = cover * 0.5f * (v + 1.0f);
        }
      }
    }
  }
  return z;
}

ToyModel train_toy_generator(const std::vector<Scene>& train, const std::vector<Scene>& holdout,
                             const ToyTrainingConfig& config, ToyTrainingReport* report) {
  if (train.empty()) throw ValidationError("toy training needs at least one scene");
  ToyModel model{make_toy_generator(config.architecture),
                 LatentLayout::standard(config.architecture.latent_channels)};
  LayeredGenerator& g = model.generator;
  g.init_weights(config.seed);
  const std::size_t n = g.layer_count();
  const auto extractor = PerceptualExtractor::random(config.perceptual_seed, config.perceptual_weight);

  std::vector<Tensor> latents;
  for (const Scene& scene : train) latents.push_back(model.latent(scene));

  auto dataset_loss = [&]() {
    double total = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      total += reconstruction_loss(train[i].image.pixels, g.run(0, n, latents[i]), extractor);
    }
    return total / static_cast<double>(train.size());
  };

  ToyTrainingReport local;
  local.initial_loss = dataset_loss();
  WeightOptimizer optimizer(g);
  AdamConfig adam;
  std::mt19937_64 rng(mix_seed(config.seed, 0x1a7e));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::size_t total_steps = config.epochs * train.size();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    std::size_t in_batch = 0;
    for (std::size_t idx : order) {
      const float lr = cosine_lr(config.learning_rate, step, total_steps);
      ++step;
      ForwardTrace trace;
      const Tensor y = g.run(0, n, latents[idx], nullptr, &trace);
      auto lg = reconstruction_loss_grad(train[idx].image.pixels, y, extractor);
      if (!std::isfinite(lg.loss)) {
        throw NumericalError("toy training loss became non-finite at epoch " +
                             std::to_string(epoch));
      }
      epoch_total += lg.loss;
      BackwardOptions options;
      options.input_grad = false;
      options.weight_grads = &optimizer.grads;
      g.backward(trace, lg.grad, nullptr, options);
      if (++in_batch == config.batch_size) {
        optimizer.apply(g, adam, lr, 1.0f / static_cast<float>(in_batch));
        in_batch = 0;
      }
    }
    if (in_batch > 0) optimizer.apply(g, adam, cosine_lr(config.learning_rate, step, total_steps),
                                      1.0f / static_cast<float>(in_batch));
    local.epoch_loss.push_back(epoch_total / static_cast<double>(train.size()));
    std::clog << "[train-toy] epoch " << epoch + 1 << "/" << config.epochs << " loss "
              << local.epoch_loss.back() << '\n';
  }
  local.final_loss = config.epochs == 0 ? local.initial_loss : dataset_loss();

  double psnr_total = 0.0;
  for (const Scene& scene : holdout) psnr_total += psnr(scene.image.pixels, g.run(0, n, model.latent(scene)));
  local.holdout_psnr = holdout.empty() ? 0.0 : psnr_total / static_cast<double>(holdout.size());
  local.converged = holdout.empty() || local.holdout_psnr >= config.holdout_psnr_threshold;

  g.metadata = {{"name", "toy"},
                {"training_seed", config.seed},
                {"epochs", config.epochs},
                {"train_scenes", train.size()},
                {"holdout_psnr", local.holdout_psnr},
                {"final_loss", local.final_loss}};
  if (report != nullptr) *report = local;
  if (config.require_convergence && !local.converged) {
    throw NumericalError("toy generator did not converge: held-out PSNR " +
                         std::to_string(local.holdout_psnr) + " dB below threshold " +
                         std::to_string(config.holdout_psnr_threshold) + " dB (final loss " +
                         std::to_string(local.final_loss) + ")");
  }
  return model;
}

Archive toy_model_to_archive(const ToyModel& model) {
  Archive archive = generator_to_archive(model.generator);
  archive.meta["layout"] = {{"coverage", model.layout.coverage},
                            {"color", model.layout.color},
                            {"scale", model.layout.scale},
                            {"active_channels", model.layout.active_channels}};
  return archive;
}

ToyModel toy_model_from_archive(const Archive& archive) {
  ToyModel model;
  model.generator = generator_from_archive(archive);
  const std::size_t channels = model.generator.latent_shape().channels;
  if (!archive.meta.contains("layout")) throw ShapeError("checkpoint has no latent layout");
  const auto& l = archive.meta.at("layout");
  model.layout.coverage = l.at("coverage").get<std::vector<std::size_t>>();
  model.layout.color = l.at("color").get<std::vector<std::vector<std::size_t>>>();
  model.layout.scale = l.at("scale").get<float>();
  model.layout.active_channels = l.at("active_channels").get<std::size_t>();
  if (model.layout.active_channels > channels || model.layout.coverage.size() != kSceneClassCount ||
      model.layout.color.size() != kSceneClassCount) {
    throw ShapeError("latent layout does not fit a " + std::to_string(channels) + "-channel latent");
  }
  return model;
}

void save_toy_model(const std::filesystem::path& path, const ToyModel& model) {
  toy_model_to_archive(model).save(path);
}

ToyModel load_toy_model(const std::filesystem::path& path) {
  return toy_model_from_archive(Archive::load(path));
}

}  // namespace lpaint
