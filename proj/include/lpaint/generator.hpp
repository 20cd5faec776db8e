#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpaint/archive.hpp"
#include "lpaint/nn.hpp"
#include "lpaint/tensor.hpp"

namespace lpaint {

// One generator stage g_i: optional nearest upsampling, convolution,
// nonlinearity.
struct LayerSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t upsample = 1;
  Activation activation = Activation::leaky_relu;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct GridShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  Shape shape() const { return {channels, height, width}; }
  std::size_t size() const { return channels * height * width; }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

// Activation grid at an inter-layer boundary. Boundary b is the input of
// layer b (0-based), so boundary 0 is the network input and boundary n the
// image.
struct LatentCode {
  Tensor values;
  std::size_t boundary = 0;
};

enum class PerturbationMode { multiplicative, additive };
std::string to_string(PerturbationMode mode);
PerturbationMode perturbation_mode_from_string(const std::string& name);

// Gain fields applied to fine-layer outputs: layer `first_layer + k` has its
// output replaced by (1 + deltas[k]) * output (or output + deltas[k]).
struct PerturbationSet {
  std::size_t first_layer = 0;
  std::vector<Tensor> deltas;
  PerturbationMode mode = PerturbationMode::multiplicative;
  std::uint64_t seed = 0;

  const Tensor* delta_for(std::size_t layer) const;
};

// Per-layer activations cached by a forward run for backpropagation.
struct ForwardTrace {
  std::size_t first = 0;
  std::vector<Tensor> conv_inputs;
  std::vector<Tensor> pre_activation;
  std::vector<Tensor> post_activation;
};

struct BackwardOptions {
  bool input_grad = true;
  // Indexed by absolute layer; only layers >= weight_grad_from accumulate.
  std::vector<ConvGrad>* weight_grads = nullptr;
  std::size_t weight_grad_from = 0;
  // Indexed like PerturbationSet::deltas; accumulated.
  std::vector<Tensor>* perturbation_grads = nullptr;
};

// G(z) = g_n(...g_1(z)), split at h into G_H = g_1..g_h and G_F = g_{h+1}..g_n.
class LayeredGenerator {
 public:
  LayeredGenerator() = default;
  // Weights start at zero.
  LayeredGenerator(std::vector<LayerSpec> specs, std::size_t split, std::size_t latent_height,
                   std::size_t latent_width);

  std::size_t layer_count() const { return specs_.size(); }
  std::size_t split() const { return split_; }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  const Conv2d& layer(std::size_t i) const { return layers_.at(i); }
  Conv2d& layer(std::size_t i) { return layers_.at(i); }

  GridShape boundary_shape(std::size_t boundary) const;
  GridShape latent_shape() const { return boundary_shape(0); }
  GridShape output_shape() const { return boundary_shape(layer_count()); }

  // Runs layers [first, last) on `input`, which must sit at boundary `first`.
  Tensor run(std::size_t first, std::size_t last, const Tensor& input,
             const PerturbationSet* perturbations = nullptr, ForwardTrace* trace = nullptr) const;

  // Backpropagates `grad_output` (at boundary trace.first + trace length)
  // through a traced run. Returns the gradient at boundary trace.first when
  // options.input_grad is set.
  Tensor backward(const ForwardTrace& trace, const Tensor& grad_output,
                  const PerturbationSet* perturbations, const BackwardOptions& options) const;

  // z at boundary 0 runs the whole network; z at boundary h runs G_F only.
  Tensor forward(const LatentCode& z) const;
  LatentCode forward_high(const LatentCode& z) const;
  Tensor forward_fine(const LatentCode& z_h) const;

  void init_weights(std::uint64_t seed);
  std::string weights_digest() const;
  // Short stable identifier derived from the weights.
  std::string checkpoint_id() const { return weights_digest().substr(0, 16); }

  // Free-form provenance stored in the checkpoint manifest.
  nlohmann::json metadata = nlohmann::json::object();

 private:
  void check_boundary(const Tensor& values, std::size_t boundary) const;

  std::vector<LayerSpec> specs_;
  std::vector<Conv2d> layers_;
  std::size_t split_ = 1;
  std::size_t latent_height_ = 0;
  std::size_t latent_width_ = 0;
};

// Six-stage desk-scale generator: 4x4x128 latent, 64x64x3 output, split at
// h = 1 so the fine section spans four x2 upsampling scales.
struct ToyArchitecture {
  std::size_t latent_channels = 128;
  std::size_t latent_size = 4;
  std::vector<std::size_t> widths = {128, 64, 32, 16, 8};
};
LayeredGenerator make_toy_generator(const ToyArchitecture& arch = {});

Archive generator_to_archive(const LayeredGenerator& generator);
LayeredGenerator generator_from_archive(const Archive& archive);
void save_checkpoint(const std::filesystem::path& path, const LayeredGenerator& generator);
LayeredGenerator load_checkpoint(const std::filesystem::path& path);

}  // namespace lpaint
