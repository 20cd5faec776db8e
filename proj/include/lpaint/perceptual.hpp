#pragma once

#include <cstdint>
#include <vector>

#include "lpaint/nn.hpp"
#include "lpaint/tensor.hpp"

namespace lpaint {

inline constexpr float kDefaultPerceptualWeight = 10.0f;

// Ordered feature stages F(1)..F(N); each stage is a strided convolution and
// a nonlinearity applied to the previous stage's output. The default stack
// is a fixed-seed random network so that tests never download weights.
class PerceptualExtractor {
 public:
  PerceptualExtractor() = default;
  explicit PerceptualExtractor(std::vector<Conv2d> stages, float weight = kDefaultPerceptualWeight);

  // Three stride-2 stages 3->8->16->32 with He-normal weights from `seed`.
  static PerceptualExtractor random(std::uint64_t seed = 7, float weight = kDefaultPerceptualWeight);
  // Pixel loss only.
  static PerceptualExtractor none();

  std::size_t stage_count() const { return stages_.size(); }
  float weight() const { return weight_; }
  void set_weight(float w) { weight_ = w; }

  // Activations of every stage (pre- and post-nonlinearity kept for backprop).
  struct Features {
    std::vector<Tensor> inputs;
    std::vector<Tensor> pre;
    std::vector<Tensor> post;
  };
  Features extract(const Tensor& image) const;

  // Backpropagates per-stage output gradients to the image.
  Tensor backward(const Features& features, std::vector<Tensor> stage_grads) const;

 private:
  std::vector<Conv2d> stages_;
  float weight_ = kDefaultPerceptualWeight;
};

// L_r(x, y) = mean|x - y| + weight * sum_i mean|F_i(x) - F_i(y)|.
// The per-stage mean is the 1/M_i normalization.
double reconstruction_loss(const Tensor& x, const Tensor& y, const PerceptualExtractor& extractor);

// Same value plus d L_r / d y. Pass precomputed target features to avoid
// re-extracting x on every optimizer step.
struct LossWithGrad {
  double loss = 0.0;
  Tensor grad;
};
LossWithGrad reconstruction_loss_grad(const Tensor& x, const Tensor& y,
                                      const PerceptualExtractor& extractor,
                                      const PerceptualExtractor::Features* x_features = nullptr);

}  // namespace lpaint
