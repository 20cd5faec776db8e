#include "lpaint/inversion.hpp"

#include <cmath>
#include <numbers>

#include "lpaint/error.hpp"
#include "lpaint/image.hpp"

namespace lpaint {

double pearson(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("pearson needs equal non-empty inputs");
  const double n = static_cast<double>(a.size());
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

nlohmann::json InversionResult::to_json() const {
  nlohmann::json j = {{"boundary", z.boundary},
                      {"shape", z.values.shape()},
                      {"loss_trace", loss_trace},
                      {"psnr", std::isfinite(psnr) ? nlohmann::json(psnr) : nlohmann::json("inf")}};
  if (pearson_r) j["pearson_r"] = *pearson_r;
  return j;
}

InversionResult refine_latent(const LayeredGenerator& generator, const Tensor& image,
                              const LatentCode& z0, const PerceptualExtractor& extractor,
                              const RefineConfig& config) {
  const std::size_t start = z0.boundary;
  const std::size_t target = config.target_boundary.value_or(start);
  if (target < start || target >= generator.layer_count()) {
    throw ShapeError("refinement target boundary " + std::to_string(target) +
                     " must lie between the initial boundary " + std::to_string(start) +
                     " and the last layer");
  }
  const std::size_t n = generator.layer_count();
  const auto target_features = extractor.extract(image);

  Tensor variable = z0.values;
  Tensor best = variable;
  double best_loss = std::numeric_limits<double>::infinity();
  InversionResult result;
  AdamConfig adam;
  AdamState state;

  for (std::size_t step = 0; step <= config.steps; ++step) {
    ForwardTrace trace;
    const Tensor y = generator.run(start, n, variable, nullptr, &trace);
    auto lg = reconstruction_loss_grad(image, y, extractor, &target_features);
    if (!std::isfinite(lg.loss)) {
      throw NumericalError("latent refinement loss non-finite at step " + std::to_string(step));
    }
    result.raw_loss_trace.push_back(lg.loss);
    if (lg.loss < best_loss) {
      best_loss = lg.loss;
      best = variable;
    }
    result.loss_trace.push_back(best_loss);
    if (step == config.steps) break;
    if (config.cancelled && config.cancelled(step)) break;
    const Tensor grad = generator.backward(trace, lg.grad, nullptr, BackwardOptions{});
    const double t = static_cast<double>(step) / static_cast<double>(std::max<std::size_t>(1, config.steps));
    const double lo = config.learning_rate * config.final_lr_fraction;
    const float lr = static_cast<float>(lo + (config.learning_rate - lo) * 0.5 *
                                                  (1.0 + std::cos(std::numbers::pi * t)));
    adam_update(adam, lr, state, variable.values(), grad.values());
  }

  result.z = {target > start ? generator.run(start, target, best) : best, target};
  result.psnr = lpaint::psnr(image, generator.run(start, n, best));
  return result;
}

InversionResult invert(const LayeredGenerator& generator, const Encoder& encoder,
                       const Tensor& image, const PerceptualExtractor& extractor,
                       const RefineConfig& config) {
  return refine_latent(generator, image, {encoder.encode(image), 0}, extractor, config);
}

}  // namespace lpaint
