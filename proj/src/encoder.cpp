#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>

#include "lpaint/error.hpp"
#include "lpaint/inversion.hpp"

namespace lpaint {

namespace {

constexpr Activation kAct = Activation::leaky_relu;

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Encoder::Encoder(const EncoderArchitecture& arch, const GridShape& latent, std::uint64_t seed)
    : arch_(arch), latent_(latent), seed_(seed) {
  if (arch.stem_widths.empty()) throw ShapeError("encoder needs at least one stem stage");
  std::mt19937_64 rng(seed);
  std::size_t in = 3;
  for (std::size_t w : arch.stem_widths) {
    convs_.emplace_back(in, w, 3, 2);
    init_conv(convs_.back(), rng);
    in = w;
  }
  for (std::size_t b = 0; b < arch.residual_blocks; ++b) {
    convs_.emplace_back(in, in, 3, 1);
    init_conv(convs_.back(), rng);
    convs_.emplace_back(in, in, 3, 1);
    init_conv(convs_.back(), rng, 0.1f);
  }
  convs_.emplace_back(in, latent.channels, 1, 1);
  init_conv(convs_.back(), rng, 0.5f);
}

Tensor Encoder::encode(const Tensor& image) const {
  Trace trace;
  return encode(image, trace);
}

Tensor Encoder::encode(const Tensor& image, Trace& trace) const {
  trace.inputs.clear();
  trace.pre.clear();
  const std::size_t stem = arch_.stem_widths.size();
  const std::size_t scale = std::size_t{1} << stem;
  if (image.rank() != 3 || image.channels() != 3 || image.height() != latent_.height * scale ||
      image.width() != latent_.width * scale) {
    throw ShapeError("encoder expects a (3, " + std::to_string(latent_.height * scale) + ", " +
                     std::to_string(latent_.width * scale) + ") image, got " +
                     shape_string(image.shape()));
  }
  auto apply = [&](std::size_t j, const Tensor& in) {
    trace.inputs.push_back(in);
    trace.pre.push_back(conv2d(convs_[j], in));
    return trace.pre.back();
  };
  Tensor x = image;
  for (std::size_t j = 0; j < stem; ++j) {
    x = apply(j, x);
    activate(kAct, x);
  }
  for (std::size_t b = 0; b < arch_.residual_blocks; ++b) {
    Tensor h = apply(stem + 2 * b, x);
    activate(kAct, h);
    const Tensor r = apply(stem + 2 * b + 1, h);
    add_into(x, r);
  }
  return apply(convs_.size() - 1, x);
}

void Encoder::backward(const Trace& trace, const Tensor& grad_output,
                       std::vector<ConvGrad>& grads) const {
  const std::size_t stem = arch_.stem_widths.size();
  const std::size_t head = convs_.size() - 1;
  Tensor g = conv2d_backward(convs_[head], trace.inputs[head], grad_output, &grads[head], true);
  for (std::size_t b = arch_.residual_blocks; b > 0; --b) {
    const std::size_t ja = stem + 2 * (b - 1);
    const std::size_t jb = ja + 1;
    Tensor gh = conv2d_backward(convs_[jb], trace.inputs[jb], g, &grads[jb], true);
    activation_backward(kAct, trace.pre[ja], gh);
    add_into(g, conv2d_backward(convs_[ja], trace.inputs[ja], gh, &grads[ja], true));
  }
  for (std::size_t j = stem; j > 0; --j) {
    activation_backward(kAct, trace.pre[j - 1], g);
    g = conv2d_backward(convs_[j - 1], trace.inputs[j - 1], g, &grads[j - 1], j > 1);
  }
}

Archive Encoder::to_archive() const {
  Archive archive;
  archive.meta = {{"format", "lpaint-encoder"},
                  {"format_version", 1},
                  {"stem_widths", arch_.stem_widths},
                  {"residual_blocks", arch_.residual_blocks},
                  {"latent", {{"channels", latent_.channels},
                              {"height", latent_.height},
                              {"width", latent_.width}}},
                  {"seed", seed_}};
  for (std::size_t j = 0; j < convs_.size(); ++j) {
    archive.put("conv" + std::to_string(j) + ".weight", convs_[j].weight);
    archive.put("conv" + std::to_string(j) + ".bias", convs_[j].bias);
  }
  return archive;
}

Encoder Encoder::from_archive(const Archive& archive) {
  const auto& m = archive.meta;
  if (m.value("format", "") != "lpaint-encoder") throw VersionError("archive is not an encoder");
  if (m.value("format_version", 0) != 1) throw VersionError("unsupported encoder version");
  EncoderArchitecture arch;
  arch.stem_widths = m.at("stem_widths").get<std::vector<std::size_t>>();
  arch.residual_blocks = m.at("residual_blocks").get<std::size_t>();
  const auto& l = m.at("latent");
  GridShape latent{l.at("channels").get<std::size_t>(), l.at("height").get<std::size_t>(),
                   l.at("width").get<std::size_t>()};
  Encoder encoder(arch, latent, m.at("seed").get<std::uint64_t>());
  for (std::size_t j = 0; j < encoder.convs_.size(); ++j) {
    Conv2d& conv = encoder.convs_[j];
    conv.weight = archive.get("conv" + std::to_string(j) + ".weight", conv.weight.shape());
    conv.bias = archive.get("conv" + std::to_string(j) + ".bias", conv.bias.shape());
  }
  return encoder;
}

Encoder train_encoder(const LayeredGenerator& generator, const std::vector<EncoderSample>& samples,
                      const PerceptualExtractor& extractor, const EncoderTrainingConfig& config,
                      EncoderTrainingReport* report) {
  if (samples.size() <= config.holdout) {
    throw ValidationError("encoder training needs more samples than the held-out split");
  }
  Encoder encoder(config.architecture, generator.latent_shape(), config.seed);
  const std::size_t train_count = samples.size() - config.holdout;
  std::vector<ConvGrad> grads;
  for (const Conv2d& c : encoder.convs()) grads.emplace_back(c);
  std::vector<AdamState> wstate(grads.size());
  std::vector<AdamState> bstate(grads.size());
  AdamConfig adam;
  std::mt19937_64 rng(mix_seed(config.seed, 0xe7c));
  std::vector<std::size_t> order(train_count);
  for (std::size_t i = 0; i < train_count; ++i) order[i] = i;

  EncoderTrainingReport local;
  const std::size_t total = std::max<std::size_t>(1, config.epochs * train_count);
  std::size_t step = 0;
  std::vector<EncoderSample> fresh;
  const EncoderSample* pool = samples.data();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (epoch > 0 && config.resample) {
      fresh = config.resample(epoch);
      if (fresh.size() != train_count) throw ValidationError("resampled training set changed size");
      pool = fresh.data();
    }
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    std::size_t in_batch = 0;
    for (std::size_t n = 0; n < order.size(); ++n) {
      const EncoderSample& sample = pool[order[n]];
      Encoder::Trace trace;
      const Tensor z = encoder.encode(sample.image, trace);
      Tensor gz(z.shape());
      double loss = 0.0;
      if (config.latent_weight > 0.0f && sample.latent) {
        const float scale = 2.0f * config.latent_weight / static_cast<float>(z.size());
        for (std::size_t k = 0; k < z.size(); ++k) {
          const float d = z[k] - (*sample.latent)[k];
          loss += config.latent_weight * d * d / static_cast<double>(z.size());
          gz[k] += scale * d;
        }
      }
      if (config.reconstruction_weight > 0.0f) {
        ForwardTrace gtrace;
        const Tensor y = generator.run(0, generator.layer_count(), z, nullptr, &gtrace);
        auto lg = reconstruction_loss_grad(sample.image, y, extractor);
        loss += config.reconstruction_weight * lg.loss;
        for (float& v : lg.grad.values()) v *= config.reconstruction_weight;
        add_into(gz, generator.backward(gtrace, lg.grad, nullptr, BackwardOptions{}));
      }
      if (!std::isfinite(loss)) {
        throw NumericalError("encoder training diverged at epoch " + std::to_string(epoch) +
                             " (loss trace length " + std::to_string(local.epoch_loss.size()) +
                             ")");
      }
      epoch_total += loss;
      encoder.backward(trace, gz, grads);
      if (++in_batch == config.batch_size || n + 1 == order.size()) {
        const double t = static_cast<double>(step) / static_cast<double>(total);
        const float lr = static_cast<float>(config.learning_rate * 0.5 *
                                            (1.0 + std::cos(std::numbers::pi * t)));
        for (std::size_t j = 0; j < grads.size(); ++j) {
          for (float& v : grads[j].weight.values()) v /= static_cast<float>(in_batch);
          for (float& v : grads[j].bias.values()) v /= static_cast<float>(in_batch);
          adam_update(adam, lr, wstate[j], encoder.convs()[j].weight.values(), grads[j].weight.values());
          adam_update(adam, lr, bstate[j], encoder.convs()[j].bias.values(), grads[j].bias.values());
          grads[j].zero();
        }
        in_batch = 0;
      }
      ++step;
    }
    local.epoch_loss.push_back(epoch_total / static_cast<double>(train_count));
    std::clog << "[train-encoder] epoch " << epoch + 1 << "/" << config.epochs << " loss "
              << local.epoch_loss.back() << '\n';
  }

  double recon = 0.0;
  double r_total = 0.0;
  std::size_t r_count = 0;
  for (std::size_t i = train_count; i < samples.size(); ++i) {
    const Tensor z = encoder.encode(samples[i].image);
    recon += reconstruction_loss(samples[i].image, generator.run(0, generator.layer_count(), z),
                                 extractor);
    if (samples[i].latent) {
      r_total += pearson(z.values(), samples[i].latent->values());
      ++r_count;
    }
  }
  local.holdout_reconstruction_loss = recon / static_cast<double>(config.holdout);
  local.holdout_pearson = r_count ? r_total / static_cast<double>(r_count) : 0.0;
  if (report != nullptr) *report = local;
  if (config.holdout_loss_threshold > 0.0 &&
      !(local.holdout_reconstruction_loss < config.holdout_loss_threshold)) {
    std::string trace;
    for (double v : local.epoch_loss) trace += " " + std::to_string(v);
    throw NumericalError("encoder held-out loss " + std::to_string(local.holdout_reconstruction_loss) +
                         " above threshold; epoch losses:" + trace);
  }
  return encoder;
}

}  // namespace lpaint
