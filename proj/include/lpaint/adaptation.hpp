#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lpaint/editing.hpp"
#include "lpaint/generator.hpp"

namespace lpaint {

struct AdaptationConfig {
  float lambda_reg = 0.1f;
  float learning_rate = 0.1f;
  std::size_t steps = 1000;
  PerturbationMode mode = PerturbationMode::multiplicative;
  // Zero init gives G' == G at step 0; the random variant draws
  // N(0, init_scale^2) from `seed`.
  bool random_init = false;
  float init_scale = 0.01f;
  std::uint64_t seed = 0;
  // Polled before every step; returning true raises CancelledError.
  std::function<bool(std::size_t)> cancelled;
  // Called after every step with (step, total loss).
  std::function<void(std::size_t, double)> progress;
};

struct PreviewConfig {
  std::size_t steps = 200;
  float learning_rate = 1e-3f;
};

// Mean |output - target| over pixel-channel entries whose mask is 0.
double match_loss(const Tensor& output, const Tensor& target, const BinaryMask& pixel_mask);
// Adds d match_loss / d output into `grad` (same shape as output).
double match_loss_grad(const Tensor& output, const Tensor& target, const BinaryMask& pixel_mask,
                       Tensor& grad);

// Sum of squared entries across all deltas.
double reg_loss(const PerturbationSet& perturbations);

// One delta per fine layer except the last, shaped like that layer's output.
PerturbationSet make_perturbations(const LayeredGenerator& generator, const AdaptationConfig& config);

// L_match(G'(z_h), x) + lambda * L_reg with optional gradient w.r.t. every delta.
// `z_h` sits at the generator's split boundary.
double adaptation_objective(const LayeredGenerator& generator, const Tensor& z_h,
                            const Tensor& target, const BinaryMask& pixel_mask,
                            const PerturbationSet& perturbations, float lambda_reg,
                            std::vector<Tensor>* grads = nullptr);

struct AdaptedGenerator {
  LayeredGenerator base;
  PerturbationSet perturbations;
  LatentCode z_e;
  BinaryMask pixel_mask;
  std::string target_digest;
  std::vector<double> loss_trace;  // total loss before each step, then final
  std::size_t best_step = 0;

  std::string binding_digest() const;
  Archive to_archive() const;
  // Reattaches saved deltas to `base`; throws if the checkpoint id differs.
  static AdaptedGenerator from_archive(const Archive& archive, LayeredGenerator base);
};

// Fits the deltas with the base weights frozen and returns the best iterate.
AdaptedGenerator optimize_adaptation(const LayeredGenerator& generator, const LatentCode& z_e,
                                     const Tensor& target, const BinaryMask& pixel_mask,
                                     const AdaptationConfig& config);

// G'_w: fine-layer weights fine-tuned on all pixels of the unedited image.
struct WeightAdaptedGenerator {
  LayeredGenerator generator;
  std::size_t steps = 0;
  std::vector<double> loss_trace;
};

WeightAdaptedGenerator fit_preview_generator(const LayeredGenerator& generator, const LatentCode& z,
                                             const Tensor& target, const PreviewConfig& config);

Tensor render(const AdaptedGenerator& adapted, const LatentCode& z_e);
Tensor render(const WeightAdaptedGenerator& adapted, const LatentCode& z_e);

// "step,loss" rows.
std::string loss_trace_csv(const std::vector<double>& trace);

}  // namespace lpaint
