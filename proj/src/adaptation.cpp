#include "lpaint/adaptation.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "lpaint/archive.hpp"
#include "lpaint/error.hpp"

namespace lpaint {

namespace {

void check_mask(const Tensor& output, const Tensor& target, const BinaryMask& mask) {
  require_same_shape(output, target, "match loss");
  if (output.rank() != 3 || mask.height != output.height() || mask.width != output.width()) {
    throw ShapeError("pixel mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                     " does not match image " + shape_string(output.shape()));
  }
}

std::size_t unmasked_entries(const Tensor& image, const BinaryMask& mask) {
  return image.channels() * (mask.bits.size() - mask.count());
}

}  // namespace

double match_loss(const Tensor& output, const Tensor& target, const BinaryMask& pixel_mask) {
  check_mask(output, target, pixel_mask);
  const std::size_t n = unmasked_entries(output, pixel_mask);
  if (n == 0) return 0.0;
  const std::size_t plane = pixel_mask.bits.size();
  double total = 0.0;
  for (std::size_t c = 0; c < output.channels(); ++c)
    for (std::size_t k = 0; k < plane; ++k)
      if (!pixel_mask.bits[k]) total += std::abs(output[c * plane + k] - target[c * plane + k]);
  return total / static_cast<double>(n);
}

double match_loss_grad(const Tensor& output, const Tensor& target, const BinaryMask& pixel_mask,
                       Tensor& grad) {
  check_mask(output, target, pixel_mask);
  require_same_shape(output, grad, "match loss gradient");
  const std::size_t n = unmasked_entries(output, pixel_mask);
  if (n == 0) return 0.0;
  const std::size_t plane = pixel_mask.bits.size();
  const float inv = 1.0f / static_cast<float>(n);
  double total = 0.0;
  for (std::size_t c = 0; c < output.channels(); ++c) {
    for (std::size_t k = 0; k < plane; ++k) {
      if (pixel_mask.bits[k]) continue;
      const float d = output[c * plane + k] - target[c * plane + k];
      total += std::abs(d);
      grad[c * plane + k] += d > 0.0f ? inv : (d < 0.0f ? -inv : 0.0f);
    }
  }
  return total / static_cast<double>(n);
}

double reg_loss(const PerturbationSet& perturbations) {
  double total = 0.0;
  for (const Tensor& d : perturbations.deltas)
    for (float v : d.values()) total += static_cast<double>(v) * v;
  return total;
}

PerturbationSet make_perturbations(const LayeredGenerator& generator, const AdaptationConfig& config) {
  PerturbationSet set;
  set.first_layer = generator.split();
  set.mode = config.mode;
  set.seed = config.seed;
  std::mt19937_64 rng(config.seed);
  for (std::size_t layer = generator.split(); layer + 1 < generator.layer_count(); ++layer) {
    Tensor delta(generator.boundary_shape(layer + 1).shape());
    if (config.random_init) {
      for (float& v : delta.values()) v = static_cast<float>(config.init_scale * standard_normal(rng));
    }
    set.deltas.push_back(std::move(delta));
  }
  return set;
}

double adaptation_objective(const LayeredGenerator& generator, const Tensor& z_h,
                            const Tensor& target, const BinaryMask& pixel_mask,
                            const PerturbationSet& perturbations, float lambda_reg,
                            std::vector<Tensor>* grads) {
  const std::size_t n = generator.layer_count();
  ForwardTrace trace;
  const Tensor y = generator.run(generator.split(), n, z_h, &perturbations, grads ? &trace : nullptr);
  if (grads == nullptr) return match_loss(y, target, pixel_mask) + lambda_reg * reg_loss(perturbations);

  Tensor gy(y.shape());
  const double match = match_loss_grad(y, target, pixel_mask, gy);
  grads->clear();
  for (const Tensor& d : perturbations.deltas) grads->emplace_back(d.shape());
  BackwardOptions options;
  options.input_grad = false;
  options.perturbation_grads = grads;
  generator.backward(trace, gy, &perturbations, options);
  for (std::size_t i = 0; i < perturbations.deltas.size(); ++i) {
    const auto d = perturbations.deltas[i].values();
    auto g = (*grads)[i].values();
    for (std::size_t k = 0; k < d.size(); ++k) g[k] += 2.0f * lambda_reg * d[k];
  }
  return match + lambda_reg * reg_loss(perturbations);
}

AdaptedGenerator optimize_adaptation(const LayeredGenerator& generator, const LatentCode& z_e,
                                     const Tensor& target, const BinaryMask& pixel_mask,
                                     const AdaptationConfig& config) {
  if (z_e.boundary != 0 && z_e.boundary != generator.split()) {
    throw ShapeError("adaptation needs a code at boundary 0 or " + std::to_string(generator.split()));
  }
  const Tensor z_h = z_e.boundary == 0 ? generator.run(0, generator.split(), z_e.values) : z_e.values;

  AdaptedGenerator out;
  out.base = generator;
  out.perturbations = make_perturbations(generator, config);
  out.z_e = z_e;
  out.pixel_mask = pixel_mask;
  out.target_digest = sha256_hex(target.values());

  PerturbationSet current = out.perturbations;
  std::vector<AdamState> states(current.deltas.size());
  AdamConfig adam;
  std::vector<Tensor> grads;
  double best = std::numeric_limits<double>::infinity();

  for (std::size_t step = 0; step <= config.steps; ++step) {
    const bool last = step == config.steps;
    const double loss = adaptation_objective(generator, z_h, target, pixel_mask, current,
                                             config.lambda_reg, last ? nullptr : &grads);
    if (!std::isfinite(loss)) {
      throw NumericalError("adaptation loss became non-finite at step " + std::to_string(step));
    }
    out.loss_trace.push_back(loss);
    if (loss < best) {
      best = loss;
      out.best_step = step;
      out.perturbations = current;
    }
    if (last) break;
    if (config.cancelled && config.cancelled(step)) {
      throw CancelledError("adaptation cancelled at step " + std::to_string(step));
    }
    for (std::size_t i = 0; i < current.deltas.size(); ++i) {
      adam_update(adam, config.learning_rate, states[i], current.deltas[i].values(), grads[i].values());
    }
    if (config.progress) config.progress(step, loss);
  }
  return out;
}

WeightAdaptedGenerator fit_preview_generator(const LayeredGenerator& generator, const LatentCode& z,
                                             const Tensor& target, const PreviewConfig& config) {
  if (z.boundary != 0 && z.boundary != generator.split()) {
    throw ShapeError("preview fitting needs a code at boundary 0 or " + std::to_string(generator.split()));
  }
  WeightAdaptedGenerator out{generator, config.steps, {}};
  LayeredGenerator& g = out.generator;
  const std::size_t n = g.layer_count();
  const std::size_t h = g.split();
  const Tensor z_h = z.boundary == 0 ? g.run(0, h, z.values) : z.values;
  const BinaryMask everything(target.height(), target.width());

  std::vector<ConvGrad> grads;
  for (std::size_t i = 0; i < n; ++i) grads.emplace_back(g.layer(i));
  std::vector<AdamState> wstate(n);
  std::vector<AdamState> bstate(n);
  AdamConfig adam;
  for (std::size_t step = 0; step < config.steps; ++step) {
    ForwardTrace trace;
    const Tensor y = g.run(h, n, z_h, nullptr, &trace);
    Tensor gy(y.shape());
    const double loss = match_loss_grad(y, target, everything, gy);
    if (!std::isfinite(loss)) {
      throw NumericalError("preview fitting diverged at step " + std::to_string(step));
    }
    out.loss_trace.push_back(loss);
    BackwardOptions options;
    options.input_grad = false;
    options.weight_grads = &grads;
    options.weight_grad_from = h;
    g.backward(trace, gy, nullptr, options);
    for (std::size_t i = h; i < n; ++i) {
      adam_update(adam, config.learning_rate, wstate[i], g.layer(i).weight.values(), grads[i].weight.values());
      adam_update(adam, config.learning_rate, bstate[i], g.layer(i).bias.values(), grads[i].bias.values());
      grads[i].zero();
    }
  }
  out.loss_trace.push_back(match_loss(g.run(h, n, z_h), target, everything));
  return out;
}

namespace {

Tensor run_code(const LayeredGenerator& g, const LatentCode& z, const PerturbationSet* perturbations) {
  if (z.boundary != 0 && z.boundary != g.split()) {
    throw ShapeError("render needs a code at boundary 0 or " + std::to_string(g.split()) +
                     ", got boundary " + std::to_string(z.boundary));
  }
  return g.run(z.boundary, g.layer_count(), z.values, perturbations);
}

}  // namespace

Tensor render(const AdaptedGenerator& adapted, const LatentCode& z_e) {
  return run_code(adapted.base, z_e, &adapted.perturbations);
}

Tensor render(const WeightAdaptedGenerator& adapted, const LatentCode& z_e) {
  return run_code(adapted.generator, z_e, nullptr);
}

std::string AdaptedGenerator::binding_digest() const {
  return sha256_hex(sha256_hex(z_e.values.values()) + std::to_string(z_e.boundary) +
                    pixel_mask.to_json().dump() + target_digest);
}

Archive AdaptedGenerator::to_archive() const {
  Archive archive;
  archive.meta = {{"format", "lpaint-adapted"},
                  {"format_version", 1},
                  {"checkpoint_id", base.checkpoint_id()},
                  {"binding_digest", binding_digest()},
                  {"target_digest", target_digest},
                  {"mode", perturbations.mode == PerturbationMode::multiplicative ? "multiplicative" : "additive"},
                  {"first_layer", perturbations.first_layer},
                  {"seed", perturbations.seed},
                  {"delta_count", perturbations.deltas.size()},
                  {"z_boundary", z_e.boundary},
                  {"pixel_mask", pixel_mask.to_json()},
                  {"best_step", best_step},
                  {"loss_trace", loss_trace}};
  archive.put("z_e", z_e.values);
  for (std::size_t i = 0; i < perturbations.deltas.size(); ++i) {
    archive.put("delta" + std::to_string(i), perturbations.deltas[i]);
  }
  return archive;
}

AdaptedGenerator AdaptedGenerator::from_archive(const Archive& archive, LayeredGenerator base) {
  const auto& m = archive.meta;
  if (m.value("format", "") != "lpaint-adapted") throw VersionError("archive is not an adapted generator");
  if (m.value("format_version", 0) != 1) throw VersionError("unsupported adapted generator version");
  if (m.at("checkpoint_id").get<std::string>() != base.checkpoint_id()) {
    throw ValidationError("adapted generator was fitted to checkpoint " +
                          m.at("checkpoint_id").get<std::string>() + ", not " + base.checkpoint_id());
  }
  AdaptedGenerator out;
  AdaptationConfig config;
  config.mode = m.at("mode").get<std::string>() == "additive" ? PerturbationMode::additive
                                                              : PerturbationMode::multiplicative;
  config.seed = m.at("seed").get<std::uint64_t>();
  out.perturbations = make_perturbations(base, config);
  if (out.perturbations.deltas.size() != m.at("delta_count").get<std::size_t>()) {
    throw ShapeError("adapted generator delta count does not match the checkpoint");
  }
  for (std::size_t i = 0; i < out.perturbations.deltas.size(); ++i) {
    out.perturbations.deltas[i] =
        archive.get("delta" + std::to_string(i), out.perturbations.deltas[i].shape());
  }
  const std::size_t boundary = m.at("z_boundary").get<std::size_t>();
  out.z_e = {archive.get("z_e", base.boundary_shape(boundary).shape()), boundary};
  out.pixel_mask = mask_from_json(m.at("pixel_mask"));
  out.target_digest = m.at("target_digest").get<std::string>();
  out.best_step = m.at("best_step").get<std::size_t>();
  out.loss_trace = m.at("loss_trace").get<std::vector<double>>();
  out.base = std::move(base);
  if (out.binding_digest() != m.at("binding_digest").get<std::string>()) {
    throw ValidationError("adapted generator binding digest mismatch");
  }
  return out;
}

std::string loss_trace_csv(const std::vector<double>& trace) {
  std::ostringstream out;
  out.precision(9);
  out << "step,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out << i << ',' << trace[i] << '\n';
  return out.str();
}

}  // namespace lpaint
