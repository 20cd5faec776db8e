#include "lpaint/perceptual.hpp"

#include <cmath>
#include <random>

#include "lpaint/error.hpp"

namespace lpaint {

namespace {

constexpr Activation kStageActivation = Activation::leaky_relu;

// Mean absolute difference; when `grad` is non-null writes scale * sign(b - a) / N.
double l1_mean(const Tensor& a, const Tensor& b, Tensor* grad, double scale) {
  const double n = static_cast<double>(a.size());
  double sum = 0.0;
  if (grad != nullptr) *grad = Tensor(b.shape());
  const float g = static_cast<float>(scale / n);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const float d = b[i] - a[i];
    sum += std::abs(static_cast<double>(d));
    if (grad != nullptr) (*grad)[i] = d > 0.0f ? g : (d < 0.0f ? -g : 0.0f);
  }
  return sum / n;
}

}  // namespace

PerceptualExtractor::PerceptualExtractor(std::vector<Conv2d> stages, float weight)
    : stages_(std::move(stages)), weight_(weight) {}

PerceptualExtractor PerceptualExtractor::random(std::uint64_t seed, float weight) {
  std::mt19937_64 rng(seed);
  std::vector<Conv2d> stages;
  const std::size_t widths[] = {3, 8, 16, 32};
  for (std::size_t i = 0; i + 1 < std::size(widths); ++i) {
    Conv2d conv(widths[i], widths[i + 1], 3, 2);
    init_conv(conv, rng);
    stages.push_back(std::move(conv));
  }
  return PerceptualExtractor(std::move(stages), weight);
}

PerceptualExtractor PerceptualExtractor::none() { return PerceptualExtractor({}, 0.0f); }

PerceptualExtractor::Features PerceptualExtractor::extract(const Tensor& image) const {
  Features f;
  const Tensor* x = &image;
  for (const Conv2d& stage : stages_) {
    f.inputs.push_back(*x);
    Tensor pre = conv2d(stage, *x);
    Tensor post = pre;
    activate(kStageActivation, post);
    f.pre.push_back(std::move(pre));
    f.post.push_back(std::move(post));
    x = &f.post.back();
  }
  return f;
}

Tensor PerceptualExtractor::backward(const Features& features,
                                     std::vector<Tensor> stage_grads) const {
  Tensor g;
  for (std::size_t step = stages_.size(); step > 0; --step) {
    const std::size_t i = step - 1;
    Tensor total = std::move(stage_grads[i]);
    if (!g.empty()) {
      for (std::size_t k = 0; k < total.size(); ++k) total[k] += g[k];
    }
    activation_backward(kStageActivation, features.pre[i], total);
    g = conv2d_backward(stages_[i], features.inputs[i], total, nullptr, true);
  }
  return g;
}

double reconstruction_loss(const Tensor& x, const Tensor& y, const PerceptualExtractor& extractor) {
  require_same_shape(x, y, "reconstruction_loss");
  double loss = l1_mean(x, y, nullptr, 1.0);
  if (extractor.stage_count() == 0 || extractor.weight() == 0.0f) return loss;
  const auto fx = extractor.extract(x);
  const auto fy = extractor.extract(y);
  for (std::size_t i = 0; i < fx.post.size(); ++i) {
    loss += extractor.weight() * l1_mean(fx.post[i], fy.post[i], nullptr, 1.0);
  }
  return loss;
}

LossWithGrad reconstruction_loss_grad(const Tensor& x, const Tensor& y,
                                      const PerceptualExtractor& extractor,
                                      const PerceptualExtractor::Features* x_features) {
  require_same_shape(x, y, "reconstruction_loss");
  LossWithGrad out;
  out.loss = l1_mean(x, y, &out.grad, 1.0);
  if (extractor.stage_count() == 0 || extractor.weight() == 0.0f) return out;

  PerceptualExtractor::Features own;
  if (x_features == nullptr) {
    own = extractor.extract(x);
    x_features = &own;
  }
  const auto fy = extractor.extract(y);
  std::vector<Tensor> stage_grads(fy.post.size());
  for (std::size_t i = 0; i < fy.post.size(); ++i) {
    out.loss += extractor.weight() *
                l1_mean(x_features->post[i], fy.post[i], &stage_grads[i], extractor.weight());
  }
  const Tensor g = extractor.backward(fy, std::move(stage_grads));
  for (std::size_t k = 0; k < g.size(); ++k) out.grad[k] += g[k];
  return out;
}

}  // namespace lpaint
