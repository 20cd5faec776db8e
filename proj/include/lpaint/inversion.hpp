#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "lpaint/generator.hpp"
#include "lpaint/perceptual.hpp"

namespace lpaint {

double pearson(std::span<const float> a, std::span<const float> b);

// Residual convolutional regressor from an image to the generator's latent
// grid: strided stem down to the latent resolution, residual blocks, 1x1 head.
struct EncoderArchitecture {
  std::vector<std::size_t> stem_widths = {16, 32, 64, 128};
  std::size_t residual_blocks = 2;
};

class Encoder {
 public:
  Encoder() = default;
  // Builds an encoder whose output matches `latent`; the image must be
  // latent.height * 2^stem stages in each dimension.
  Encoder(const EncoderArchitecture& arch, const GridShape& latent, std::uint64_t seed);

  const GridShape& latent_shape() const { return latent_; }
  std::uint64_t seed() const { return seed_; }
  const EncoderArchitecture& architecture() const { return arch_; }

  Tensor encode(const Tensor& image) const;

  struct Trace {
    std::vector<Tensor> inputs;
    std::vector<Tensor> pre;
  };
  Tensor encode(const Tensor& image, Trace& trace) const;

  // Accumulates parameter gradients (same order as parameters()).
  void backward(const Trace& trace, const Tensor& grad_output, std::vector<ConvGrad>& grads) const;

  std::vector<Conv2d>& convs() { return convs_; }
  const std::vector<Conv2d>& convs() const { return convs_; }

  Archive to_archive() const;
  static Encoder from_archive(const Archive& archive);
  void save(const std::filesystem::path& path) const { to_archive().save(path); }
  static Encoder load(const std::filesystem::path& path) { return from_archive(Archive::load(path)); }

 private:
  // convs_ = stem..., (block a, block b)..., head
  EncoderArchitecture arch_;
  GridShape latent_;
  std::uint64_t seed_ = 0;
  std::vector<Conv2d> convs_;
};

struct EncoderSample {
  Tensor image;
  std::optional<Tensor> latent;  // known for generator samples
};

struct EncoderTrainingConfig {
  std::uint64_t seed = 3;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  float learning_rate = 1e-3f;
  // Weight of mean squared latent error (only where the true latent is known).
  float latent_weight = 1.0f;
  // Weight of L_r(x, G(E(x))).
  float reconstruction_weight = 0.0f;
  std::size_t holdout = 32;
  // When set, called before every epoch after the first to draw a fresh
  // training set (the held-out tail of `samples` stays fixed).
  std::function<std::vector<EncoderSample>(std::size_t epoch)> resample;
  // Held-out mean L_r must fall below this, or training is reported as
  // diverged. Non-positive disables the check.
  double holdout_loss_threshold = 0.0;
  EncoderArchitecture architecture{};
};

struct EncoderTrainingReport {
  std::vector<double> epoch_loss;
  double holdout_reconstruction_loss = 0.0;
  double holdout_pearson = 0.0;  // mean over held-out samples with known latents
};

Encoder train_encoder(const LayeredGenerator& generator, const std::vector<EncoderSample>& samples,
                      const PerceptualExtractor& extractor, const EncoderTrainingConfig& config,
                      EncoderTrainingReport* report = nullptr);

struct RefineConfig {
  std::size_t steps = 500;
  float learning_rate = 0.05f;
  // Cosine decay from learning_rate to learning_rate * final_lr_fraction.
  float final_lr_fraction = 0.01f;
  // Boundary of the returned code. When larger than the initial code's
  // boundary, the earlier code is optimized and pushed forward.
  std::optional<std::size_t> target_boundary;
  std::function<bool(std::size_t)> cancelled;  // polled between steps
};

struct InversionResult {
  LatentCode z;
  std::vector<double> loss_trace;      // best-so-far, non-increasing
  std::vector<double> raw_loss_trace;  // loss at each evaluated iterate
  double psnr = 0.0;
  std::optional<double> pearson_r;

  nlohmann::json to_json() const;
};

// Gradient descent on L_r(x, G(z)) from z0.
InversionResult refine_latent(const LayeredGenerator& generator, const Tensor& image,
                              const LatentCode& z0, const PerceptualExtractor& extractor,
                              const RefineConfig& config);

// Encoder prediction followed by refinement.
InversionResult invert(const LayeredGenerator& generator, const Encoder& encoder,
                       const Tensor& image, const PerceptualExtractor& extractor,
                       const RefineConfig& config);

}  // namespace lpaint
