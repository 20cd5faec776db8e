#include "lpaint/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "lpaint/error.hpp"

namespace lpaint {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// cols: (in * k * k, out_h * out_w)
void im2col(const Conv2d& conv, const Tensor& input, std::size_t out_h, std::size_t out_w,
            std::vector<float>& cols) {
  const std::size_t k = conv.kernel;
  const long pad = static_cast<long>(k / 2);
  const long h = static_cast<long>(input.height());
  const long w = static_cast<long>(input.width());
  const std::size_t spatial = out_h * out_w;
  cols.assign(conv.in_channels * k * k * spatial, 0.0f);
  for (std::size_t c = 0; c < conv.in_channels; ++c) {
    const float* plane = input.data() + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        float* row = cols.data() + ((c * k + ky) * k + kx) * spatial;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * conv.stride + ky) - pad;
          if (iy < 0 || iy >= h) continue;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * conv.stride + kx) - pad;
            if (ix < 0 || ix >= w) continue;
            row[oy * out_w + ox] = plane[iy * w + ix];
          }
        }
      }
    }
  }
}

void col2im(const Conv2d& conv, const std::vector<float>& cols, std::size_t out_h,
            std::size_t out_w, Tensor& grad_input) {
  const std::size_t k = conv.kernel;
  const long pad = static_cast<long>(k / 2);
  const long h = static_cast<long>(grad_input.height());
  const long w = static_cast<long>(grad_input.width());
  const std::size_t spatial = out_h * out_w;
  for (std::size_t c = 0; c < conv.in_channels; ++c) {
    float* plane = grad_input.data() + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const float* row = cols.data() + ((c * k + ky) * k + kx) * spatial;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * conv.stride + ky) - pad;
          if (iy < 0 || iy >= h) continue;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * conv.stride + kx) - pad;
            if (ix < 0 || ix >= w) continue;
            plane[iy * w + ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

void check_input(const Conv2d& conv, const Tensor& input) {
  if (input.rank() != 3 || input.channels() != conv.in_channels) {
    throw ShapeError("conv2d expects " + std::to_string(conv.in_channels) +
                     " input channels, got shape " + shape_string(input.shape()));
  }
}

}  // namespace

std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::linear:
      return "linear";
    case Activation::leaky_relu:
      return "leaky_relu";
    case Activation::relu:
      return "relu";
  }
  return "linear";
}

Activation activation_from_string(const std::string& name) {
  if (name == "linear") return Activation::linear;
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "relu") return Activation::relu;
  throw ValidationError("unknown activation '" + name + "'");
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel_size, std::size_t stride_)
    : in_channels(in),
      out_channels(out),
      kernel(kernel_size),
      stride(stride_),
      weight({out, in, kernel_size, kernel_size}),
      bias({out}) {
  if (kernel_size % 2 == 0 || stride_ == 0) {
    throw ShapeError("conv2d needs an odd kernel and positive stride");
  }
}

std::size_t Conv2d::output_extent(std::size_t extent) const {
  const std::size_t pad = kernel / 2;
  return (extent + 2 * pad - kernel) / stride + 1;
}

ConvGrad::ConvGrad(const Conv2d& conv) : weight(conv.weight.shape()), bias(conv.bias.shape()) {}

void ConvGrad::zero() {
  weight.fill(0.0f);
  bias.fill(0.0f);
}

void init_conv(Conv2d& conv, std::mt19937_64& rng, float gain) {
  const double fan_in = static_cast<double>(conv.in_channels * conv.kernel * conv.kernel);
  const double std_dev = gain * std::sqrt(2.0 / fan_in);
  for (float& w : conv.weight.values()) w = static_cast<float>(std_dev * standard_normal(rng));
  conv.bias.fill(0.0f);
}

Tensor conv2d(const Conv2d& conv, const Tensor& input) {
  check_input(conv, input);
  const std::size_t out_h = conv.output_extent(input.height());
  const std::size_t out_w = conv.output_extent(input.width());
  const std::size_t spatial = out_h * out_w;
  const std::size_t patch = conv.in_channels * conv.kernel * conv.kernel;
  Tensor output({conv.out_channels, out_h, out_w});

  MatrixMap out(output.data(), static_cast<long>(conv.out_channels), static_cast<long>(spatial));
  ConstMatrixMap weights(conv.weight.data(), static_cast<long>(conv.out_channels),
                         static_cast<long>(patch));
  if (conv.kernel == 1 && conv.stride == 1) {
    ConstMatrixMap in(input.data(), static_cast<long>(patch), static_cast<long>(spatial));
    out.noalias() = weights * in;
  } else {
    std::vector<float> cols;
    im2col(conv, input, out_h, out_w, cols);
    ConstMatrixMap in(cols.data(), static_cast<long>(patch), static_cast<long>(spatial));
    out.noalias() = weights * in;
  }
  for (std::size_t o = 0; o < conv.out_channels; ++o) {
    out.row(static_cast<long>(o)).array() += conv.bias[o];
  }
  return output;
}

Tensor conv2d_backward(const Conv2d& conv, const Tensor& input, const Tensor& grad_output,
                       ConvGrad* grad, bool need_input_grad) {
  check_input(conv, input);
  const std::size_t out_h = grad_output.height();
  const std::size_t out_w = grad_output.width();
  const std::size_t spatial = out_h * out_w;
  const std::size_t patch = conv.in_channels * conv.kernel * conv.kernel;
  const bool direct = conv.kernel == 1 && conv.stride == 1;

  ConstMatrixMap gout(grad_output.data(), static_cast<long>(conv.out_channels),
                      static_cast<long>(spatial));
  ConstMatrixMap weights(conv.weight.data(), static_cast<long>(conv.out_channels),
                         static_cast<long>(patch));

  if (grad != nullptr) {
    std::vector<float> cols;
    const float* col_data = input.data();
    if (!direct) {
      im2col(conv, input, out_h, out_w, cols);
      col_data = cols.data();
    }
    ConstMatrixMap in(col_data, static_cast<long>(patch), static_cast<long>(spatial));
    MatrixMap gw(grad->weight.data(), static_cast<long>(conv.out_channels),
                 static_cast<long>(patch));
    gw.noalias() += gout * in.transpose();
    for (std::size_t o = 0; o < conv.out_channels; ++o) {
      grad->bias[o] += gout.row(static_cast<long>(o)).sum();
    }
  }

  if (!need_input_grad) return {};
  Tensor grad_input(input.shape());
  if (direct) {
    MatrixMap gin(grad_input.data(), static_cast<long>(patch), static_cast<long>(spatial));
    gin.noalias() = weights.transpose() * gout;
  } else {
    std::vector<float> cols(patch * spatial);
    MatrixMap gcols(cols.data(), static_cast<long>(patch), static_cast<long>(spatial));
    gcols.noalias() = weights.transpose() * gout;
    col2im(conv, cols, out_h, out_w, grad_input);
  }
  return grad_input;
}

void activate(Activation activation, Tensor& values) {
  switch (activation) {
    case Activation::linear:
      return;
    case Activation::leaky_relu:
      for (float& v : values.values()) v = v > 0.0f ? v : kLeakySlope * v;
      return;
    case Activation::relu:
      for (float& v : values.values()) v = v > 0.0f ? v : 0.0f;
      return;
  }
}

void activation_backward(Activation activation, const Tensor& pre, Tensor& grad) {
  switch (activation) {
    case Activation::linear:
      return;
    case Activation::leaky_relu:
      for (std::size_t i = 0; i < grad.size(); ++i) {
        if (pre[i] <= 0.0f) grad[i] *= kLeakySlope;
      }
      return;
    case Activation::relu:
      for (std::size_t i = 0; i < grad.size(); ++i) {
        if (pre[i] <= 0.0f) grad[i] = 0.0f;
      }
      return;
  }
}

Tensor upsample_nearest(const Tensor& input, std::size_t factor) {
  if (factor == 1) return input;
  const std::size_t c = input.channels();
  const std::size_t h = input.height();
  const std::size_t w = input.width();
  Tensor out({c, h * factor, w * factor});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h * factor; ++y) {
      for (std::size_t x = 0; x < w * factor; ++x) {
        out.at(ch, y, x) = input.at(ch, y / factor, x / factor);
      }
    }
  }
  return out;
}

Tensor upsample_nearest_backward(const Tensor& grad, std::size_t factor) {
  if (factor == 1) return grad;
  const std::size_t c = grad.channels();
  const std::size_t h = grad.height() / factor;
  const std::size_t w = grad.width() / factor;
  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h * factor; ++y) {
      for (std::size_t x = 0; x < w * factor; ++x) {
        out.at(ch, y / factor, x / factor) += grad.at(ch, y, x);
      }
    }
  }
  return out;
}

void adam_update(const AdamConfig& config, float learning_rate, AdamState& state,
                 std::span<float> params, std::span<const float> grads) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0f);
    state.v.assign(params.size(), 0.0f);
    state.step = 0;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const float c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(config.beta1), t));
  const float c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(config.beta2), t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grads[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0f - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0f - config.beta2) * g * g;
    const float m_hat = state.m[i] / c1;
    const float v_hat = state.v[i] / c2;
    params[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

double standard_normal(std::mt19937_64& rng) {
  // Box-Muller, one draw per call.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace lpaint
