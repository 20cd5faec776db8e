#include "lpaint/generator.hpp"

#include <algorithm>

#include "lpaint/error.hpp"

namespace lpaint {

std::string to_string(PerturbationMode mode) {
  return mode == PerturbationMode::multiplicative ? "multiplicative" : "additive";
}

PerturbationMode perturbation_mode_from_string(const std::string& name) {
  if (name == "multiplicative") return PerturbationMode::multiplicative;
  if (name == "additive") return PerturbationMode::additive;
  throw ValidationError("unknown perturbation mode '" + name + "'");
}

const Tensor* PerturbationSet::delta_for(std::size_t layer) const {
  if (layer < first_layer || layer - first_layer >= deltas.size()) return nullptr;
  return &deltas[layer - first_layer];
}

LayeredGenerator::LayeredGenerator(std::vector<LayerSpec> specs, std::size_t split,
                                   std::size_t latent_height, std::size_t latent_width)
    : specs_(std::move(specs)),
      split_(split),
      latent_height_(latent_height),
      latent_width_(latent_width) {
  if (specs_.size() < 2) throw ShapeError("generator needs at least two layers");
  if (split_ < 1 || split_ >= specs_.size()) {
    throw ShapeError("split index must satisfy 1 <= h < n (h = " + std::to_string(split_) +
                     ", n = " + std::to_string(specs_.size()) + ")");
  }
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const LayerSpec& s = specs_[i];
    if (i > 0 && s.in_channels != specs_[i - 1].out_channels) {
      throw ShapeError("layer " + std::to_string(i + 1) + " expects " +
                       std::to_string(s.in_channels) + " channels but layer " +
                       std::to_string(i) + " produces " +
                       std::to_string(specs_[i - 1].out_channels));
    }
    if (s.upsample == 0) throw ShapeError("upsampling factor must be positive");
    layers_.emplace_back(s.in_channels, s.out_channels, s.kernel, 1);
  }
}

GridShape LayeredGenerator::boundary_shape(std::size_t boundary) const {
  if (boundary > specs_.size()) {
    throw ShapeError("boundary " + std::to_string(boundary) + " beyond layer count " +
                     std::to_string(specs_.size()));
  }
  GridShape shape{specs_.front().in_channels, latent_height_, latent_width_};
  for (std::size_t i = 0; i < boundary; ++i) {
    shape.channels = specs_[i].out_channels;
    shape.height *= specs_[i].upsample;
    shape.width *= specs_[i].upsample;
  }
  return shape;
}

void LayeredGenerator::check_boundary(const Tensor& values, std::size_t boundary) const {
  const GridShape expected = boundary_shape(boundary);
  if (values.shape() != expected.shape()) {
    throw ShapeError("boundary " + std::to_string(boundary) + " expects shape " +
                     shape_string(expected.shape()) + ", got " + shape_string(values.shape()));
  }
}

Tensor LayeredGenerator::run(std::size_t first, std::size_t last, const Tensor& input,
                             const PerturbationSet* perturbations, ForwardTrace* trace) const {
  if (first > last || last > specs_.size()) throw ShapeError("invalid layer range");
  check_boundary(input, first);
  if (trace != nullptr) {
    trace->first = first;
    trace->conv_inputs.clear();
    trace->pre_activation.clear();
    trace->post_activation.clear();
  }
  Tensor x = input;
  for (std::size_t i = first; i < last; ++i) {
    const LayerSpec& spec = specs_[i];
    Tensor u = upsample_nearest(x, spec.upsample);
    Tensor pre = conv2d(layers_[i], u);
    Tensor post = pre;
    activate(spec.activation, post);
    x = post;
    if (const Tensor* delta = perturbations ? perturbations->delta_for(i) : nullptr) {
      require_same_shape(*delta, x, "perturbation for layer " + std::to_string(i + 1));
      if (perturbations->mode == PerturbationMode::multiplicative) {
        for (std::size_t k = 0; k < x.size(); ++k) x[k] *= 1.0f + (*delta)[k];
      } else {
        for (std::size_t k = 0; k < x.size(); ++k) x[k] += (*delta)[k];
      }
    }
    if (trace != nullptr) {
      trace->conv_inputs.push_back(std::move(u));
      trace->pre_activation.push_back(std::move(pre));
      trace->post_activation.push_back(std::move(post));
    }
  }
  return x;
}

Tensor LayeredGenerator::backward(const ForwardTrace& trace, const Tensor& grad_output,
                                  const PerturbationSet* perturbations,
                                  const BackwardOptions& options) const {
  const std::size_t first = trace.first;
  const std::size_t last = first + trace.conv_inputs.size();
  check_boundary(grad_output, last);

  std::size_t lowest_delta = last;
  if (options.perturbation_grads != nullptr && perturbations != nullptr) {
    for (std::size_t i = first; i < last; ++i) {
      if (perturbations->delta_for(i) != nullptr) {
        lowest_delta = i;
        break;
      }
    }
  }
  // Does anything at or below the input of layer i still need a gradient?
  auto needed_below = [&](std::size_t i) {
    if (options.input_grad) return true;
    if (options.weight_grads != nullptr && options.weight_grad_from < i) return true;
    return lowest_delta < i;
  };

  Tensor g = grad_output;
  for (std::size_t step = last; step > first; --step) {
    const std::size_t i = step - 1;
    const std::size_t local = i - first;
    if (const Tensor* delta = perturbations ? perturbations->delta_for(i) : nullptr) {
      const bool mult = perturbations->mode == PerturbationMode::multiplicative;
      if (options.perturbation_grads != nullptr) {
        Tensor& pg = (*options.perturbation_grads).at(i - perturbations->first_layer);
        const Tensor& post = trace.post_activation[local];
        for (std::size_t k = 0; k < g.size(); ++k) pg[k] += mult ? g[k] * post[k] : g[k];
      }
      if (mult) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] *= 1.0f + (*delta)[k];
      }
    }
    const bool weights_here = options.weight_grads != nullptr && i >= options.weight_grad_from;
    const bool below = needed_below(i);
    if (!weights_here && !below) return {};
    activation_backward(specs_[i].activation, trace.pre_activation[local], g);
    ConvGrad* wg = weights_here ? &(*options.weight_grads).at(i) : nullptr;
    Tensor gu = conv2d_backward(layers_[i], trace.conv_inputs[local], g, wg, below);
    if (!below) return {};
    g = upsample_nearest_backward(gu, specs_[i].upsample);
  }
  return options.input_grad ? g : Tensor{};
}

Tensor LayeredGenerator::forward(const LatentCode& z) const {
  if (z.boundary != 0 && z.boundary != split_) {
    throw ShapeError("forward accepts codes at boundary 0 or at the split boundary " +
                     std::to_string(split_) + ", got boundary " + std::to_string(z.boundary));
  }
  return run(z.boundary, layer_count(), z.values);
}

LatentCode LayeredGenerator::forward_high(const LatentCode& z) const {
  if (z.boundary != 0) {
    throw ShapeError("forward_high expects a code at boundary 0, got boundary " +
                     std::to_string(z.boundary));
  }
  return {run(0, split_, z.values), split_};
}

Tensor LayeredGenerator::forward_fine(const LatentCode& z_h) const {
  if (z_h.boundary != split_) {
    throw ShapeError("forward_fine expects a code at boundary " + std::to_string(split_) +
                     ", got boundary " + std::to_string(z_h.boundary));
  }
  return run(split_, layer_count(), z_h.values);
}

void LayeredGenerator::init_weights(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const bool last = i + 1 == layers_.size();
    init_conv(layers_[i], rng, last ? 0.5f : 1.0f);
  }
}

std::string LayeredGenerator::weights_digest() const {
  std::string bytes;
  for (const Conv2d& conv : layers_) {
    bytes += sha256_hex(conv.weight.values());
    bytes += sha256_hex(conv.bias.values());
  }
  return sha256_hex(bytes);
}

LayeredGenerator make_toy_generator(const ToyArchitecture& arch) {
  std::vector<LayerSpec> specs;
  std::size_t in = arch.latent_channels;
  for (std::size_t i = 0; i < arch.widths.size(); ++i) {
    specs.push_back({in, arch.widths[i], 3, i == 0 ? 1u : 2u, Activation::leaky_relu});
    in = arch.widths[i];
  }
  specs.push_back({in, 3, 3, 1, Activation::linear});
  return LayeredGenerator(std::move(specs), 1, arch.latent_size, arch.latent_size);
}

Archive generator_to_archive(const LayeredGenerator& generator) {
  Archive archive;
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& s : generator.specs()) {
    layers.push_back({{"op", "conv"},
                      {"in_channels", s.in_channels},
                      {"out_channels", s.out_channels},
                      {"kernel", s.kernel},
                      {"upsample", s.upsample},
                      {"activation", to_string(s.activation)}});
  }
  const GridShape latent = generator.latent_shape();
  archive.meta = {{"format", "lpaint-generator"},
                  {"format_version", 1},
                  {"layers", layers},
                  {"split", generator.split()},
                  {"latent", {{"channels", latent.channels},
                              {"height", latent.height},
                              {"width", latent.width}}},
                  {"checkpoint_id", generator.checkpoint_id()},
                  {"metadata", generator.metadata}};
  for (std::size_t i = 0; i < generator.layer_count(); ++i) {
    archive.put("layer" + std::to_string(i) + ".weight", generator.layer(i).weight);
    archive.put("layer" + std::to_string(i) + ".bias", generator.layer(i).bias);
  }
  return archive;
}

LayeredGenerator generator_from_archive(const Archive& archive) {
  const auto& meta = archive.meta;
  if (meta.value("format", "") != "lpaint-generator") {
    throw VersionError("archive is not a generator checkpoint");
  }
  if (meta.value("format_version", 0) != 1) {
    throw VersionError("unsupported generator checkpoint version " +
                       meta.value("format_version", nlohmann::json(0)).dump());
  }
  std::vector<LayerSpec> specs;
  for (const auto& l : meta.at("layers")) {
    if (l.value("op", "conv") != "conv") {
      throw VersionError("unsupported layer op " + l.value("op", std::string()));
    }
    specs.push_back({l.at("in_channels").get<std::size_t>(),
                     l.at("out_channels").get<std::size_t>(), l.at("kernel").get<std::size_t>(),
                     l.at("upsample").get<std::size_t>(),
                     activation_from_string(l.at("activation").get<std::string>())});
  }
  const auto& latent = meta.at("latent");
  if (specs.empty() || latent.at("channels").get<std::size_t>() != specs.front().in_channels) {
    throw ShapeError("manifest latent channel count does not match the first layer");
  }
  LayeredGenerator generator(specs, meta.at("split").get<std::size_t>(),
                             latent.at("height").get<std::size_t>(),
                             latent.at("width").get<std::size_t>());
  for (std::size_t i = 0; i < generator.layer_count(); ++i) {
    Conv2d& conv = generator.layer(i);
    conv.weight = archive.get("layer" + std::to_string(i) + ".weight", conv.weight.shape());
    conv.bias = archive.get("layer" + std::to_string(i) + ".bias", conv.bias.shape());
  }
  generator.metadata = meta.value("metadata", nlohmann::json::object());
  return generator;
}

void save_checkpoint(const std::filesystem::path& path, const LayeredGenerator& generator) {
  generator_to_archive(generator).save(path);
}

LayeredGenerator load_checkpoint(const std::filesystem::path& path) {
  return generator_from_archive(Archive::load(path));
}

}  // namespace lpaint
