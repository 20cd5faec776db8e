#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lpaint/tensor.hpp"

namespace lpaint {

enum class Activation { linear, leaky_relu, relu };

std::string to_string(Activation activation);
Activation activation_from_string(const std::string& name);

inline constexpr float kLeakySlope = 0.2f;

// Square-kernel convolution with "same" zero padding (kernel / 2).
// weight: (out, in, k, k); bias: (out).
struct Conv2d {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  Tensor weight;
  Tensor bias;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel_size, std::size_t stride_ = 1);

  std::size_t output_extent(std::size_t extent) const;
};

struct ConvGrad {
  Tensor weight;
  Tensor bias;

  explicit ConvGrad(const Conv2d& conv);
  ConvGrad() = default;
  void zero();
};

// He-normal weights, zero bias.
void init_conv(Conv2d& conv, std::mt19937_64& rng, float gain = 1.0f);

Tensor conv2d(const Conv2d& conv, const Tensor& input);

// Accumulates weight/bias gradients into `grad` when non-null. Returns the
// input gradient when `need_input_grad`, otherwise an empty tensor.
Tensor conv2d_backward(const Conv2d& conv, const Tensor& input, const Tensor& grad_output,
                       ConvGrad* grad, bool need_input_grad);

void activate(Activation activation, Tensor& values);
// grad *= f'(pre)
void activation_backward(Activation activation, const Tensor& pre, Tensor& grad);

Tensor upsample_nearest(const Tensor& input, std::size_t factor);
// Adjoint of upsample_nearest: sums each factor x factor block.
Tensor upsample_nearest_backward(const Tensor& grad, std::size_t factor);

// Adam with per-parameter-block state so sparse updates (one latent per
// sample) keep independent step counters.
struct AdamConfig {
  float learning_rate = 0.1f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

struct AdamState {
  std::vector<float> m;
  std::vector<float> v;
  std::uint64_t step = 0;
};

void adam_update(const AdamConfig& config, float learning_rate, AdamState& state,
                 std::span<float> params, std::span<const float> grads);

// Deterministic sampling helpers; standard distributions are not bit-stable
// across standard library implementations.
double uniform01(std::mt19937_64& rng);
double uniform(std::mt19937_64& rng, double lo, double hi);
double standard_normal(std::mt19937_64& rng);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace lpaint
