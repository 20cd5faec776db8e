#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lpaint/generator.hpp"
#include "lpaint/perceptual.hpp"
#include "lpaint/scene.hpp"

namespace lpaint {

// How a synthetic scene is written into the toy latent grid. Channel
// `coverage[c]` holds the fraction of each cell covered by class c (times
// `scale`); the color channels of class c hold that coverage times the
// class's palette color mapped to [0, 1]. Sky carries two colors (top and
// bottom of its gradient). Channels from `active_channels` on are zero.
struct LatentLayout {
  std::vector<std::size_t> coverage;              // one per scene class
  std::vector<std::vector<std::size_t>> color;    // per class, 3 or 6 channels
  float scale = 2.0f;
  std::size_t active_channels = 0;

  static LatentLayout standard(std::size_t latent_channels);
  bool is_coverage(std::size_t channel) const;
  bool is_active(std::size_t channel) const { return channel < active_channels; }
  // Coverage channel of a class name, for dissection checks.
  std::size_t coverage_channel(const std::string& class_name) const;
};

// Deterministic latent of a rendered scene.
Tensor scene_latent(const LatentLayout& layout, const Scene& scene, const GridShape& shape);

struct ToyTrainingConfig {
  std::uint64_t seed = 1;
  std::size_t epochs = 60;
  std::size_t batch_size = 8;
  float learning_rate = 2e-3f;
  float perceptual_weight = kDefaultPerceptualWeight;
  std::uint64_t perceptual_seed = 7;
  double holdout_psnr_threshold = 20.0;
  bool require_convergence = false;
  ToyArchitecture architecture{};
};

struct ToyTrainingReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_loss;
  double holdout_psnr = 0.0;
  bool converged = false;
};

struct ToyModel {
  LayeredGenerator generator;
  LatentLayout layout;

  Tensor latent(const Scene& scene) const { return scene_latent(layout, scene, generator.latent_shape()); }
};

// Reconstruction training (pixel + perceptual loss) of the generator on
// scene latents. Throws NumericalError on a non-finite loss, and on a
// held-out PSNR below threshold when require_convergence is set.
ToyModel train_toy_generator(const std::vector<Scene>& train, const std::vector<Scene>& holdout,
                             const ToyTrainingConfig& config, ToyTrainingReport* report = nullptr);

void save_toy_model(const std::filesystem::path& path, const ToyModel& model);
ToyModel load_toy_model(const std::filesystem::path& path);
Archive toy_model_to_archive(const ToyModel& model);
ToyModel toy_model_from_archive(const Archive& archive);

}  // namespace lpaint
