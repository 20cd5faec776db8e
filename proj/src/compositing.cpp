#include "lpaint/compositing.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include "lpaint/error.hpp"
#include "lpaint/image.hpp"

namespace lpaint {

const double kRgbToLms[3][3] = {{0.3811, 0.5783, 0.0402},
                                {0.1967, 0.7244, 0.0782},
                                {0.0241, 0.1288, 0.8444}};

const double kLogLmsToLab[3][3] = {
    {1.0 / 1.7320508075688772, 1.0 / 1.7320508075688772, 1.0 / 1.7320508075688772},
    {1.0 / 2.449489742783178, 1.0 / 2.449489742783178, -2.0 / 2.449489742783178},
    {1.0 / 1.4142135623730951, -1.0 / 1.4142135623730951, 0.0}};

namespace {

Eigen::Matrix3d to_matrix(const double m[3][3]) {
  Eigen::Matrix3d out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out(r, c) = m[r][c];
  return out;
}

void require_rgb(const Tensor& t, const char* what) {
  if (t.rank() != 3 || t.channels() != 3) throw ShapeError(std::string(what) + " must be (3, H, W)");
}

void require_mask(const Tensor& image, const BinaryMask& mask) {
  if (mask.height != image.height() || mask.width != image.width()) {
    throw ShapeError("mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                     " does not match image " + shape_string(image.shape()));
  }
}

std::size_t mirror(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<long>(n) ? i : period - i);
}

constexpr float kTaps[5] = {1.0f / 16, 4.0f / 16, 6.0f / 16, 4.0f / 16, 1.0f / 16};

}  // namespace

Tensor rgb_to_lab(const Tensor& rgb) {
  require_rgb(rgb, "rgb image");
  const Eigen::Matrix3d lms = to_matrix(kRgbToLms);
  const Eigen::Matrix3d lab = to_matrix(kLogLmsToLab);
  const std::size_t plane = rgb.height() * rgb.width();
  Tensor out(rgb.shape());
  for (std::size_t k = 0; k < plane; ++k) {
    Eigen::Vector3d v((rgb[k] + 1.0) / 2.0, (rgb[plane + k] + 1.0) / 2.0, (rgb[2 * plane + k] + 1.0) / 2.0);
    Eigen::Vector3d l = lms * v;
    for (int c = 0; c < 3; ++c) l(c) = std::log10(std::max(l(c) + kColorLogOffset, 1e-12));
    const Eigen::Vector3d o = lab * l;
    for (int c = 0; c < 3; ++c) out[c * plane + k] = static_cast<float>(o(c));
  }
  return out;
}

Tensor lab_to_rgb(const Tensor& lab_image) {
  require_rgb(lab_image, "lab image");
  const Eigen::Matrix3d lms_inv = to_matrix(kRgbToLms).inverse();
  const Eigen::Matrix3d lab_inv = to_matrix(kLogLmsToLab).inverse();
  const std::size_t plane = lab_image.height() * lab_image.width();
  Tensor out(lab_image.shape());
  for (std::size_t k = 0; k < plane; ++k) {
    const Eigen::Vector3d o(lab_image[k], lab_image[plane + k], lab_image[2 * plane + k]);
    Eigen::Vector3d l = lab_inv * o;
    for (int c = 0; c < 3; ++c) l(c) = std::pow(10.0, l(c)) - kColorLogOffset;
    const Eigen::Vector3d v = lms_inv * l;
    for (int c = 0; c < 3; ++c) out[c * plane + k] = static_cast<float>(v(c) * 2.0 - 1.0);
  }
  return out;
}

Tensor color_transfer(const Tensor& source, const Tensor& target) {
  require_rgb(source, "source");
  require_rgb(target, "target");
  const Tensor s = rgb_to_lab(source);
  const Tensor t = rgb_to_lab(target);
  auto moments = [](const Tensor& x, std::size_t c) {
    const std::size_t plane = x.height() * x.width();
    double sum = 0.0;
    for (std::size_t k = 0; k < plane; ++k) sum += x[c * plane + k];
    const double mean = sum / static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t k = 0; k < plane; ++k) var += (x[c * plane + k] - mean) * (x[c * plane + k] - mean);
    return std::pair{mean, std::sqrt(var / static_cast<double>(plane))};
  };
  Tensor out(s.shape());
  const std::size_t plane = s.height() * s.width();
  for (std::size_t c = 0; c < 3; ++c) {
    const auto [ms, ss] = moments(s, c);
    const auto [mt, st] = moments(t, c);
    const double scale = ss > 1e-12 ? st / ss : 1.0;
    for (std::size_t k = 0; k < plane; ++k) {
      out[c * plane + k] = static_cast<float>((s[c * plane + k] - ms) * scale + mt);
    }
  }
  return lab_to_rgb(out);
}

Tensor blur(const Tensor& image) {
  const std::size_t channels = image.channels();
  const std::size_t h = image.height();
  const std::size_t w = image.width();
  Tensor tmp(image.shape());
  Tensor out(image.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int k = -2; k <= 2; ++k) acc += kTaps[k + 2] * image.at(c, y, mirror(static_cast<long>(x) + k, w));
        tmp.at(c, y, x) = acc;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int k = -2; k <= 2; ++k) acc += kTaps[k + 2] * tmp.at(c, mirror(static_cast<long>(y) + k, h), x);
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

Tensor pyramid_reduce(const Tensor& image) {
  if (image.height() % 2 != 0 || image.width() % 2 != 0) {
    throw ShapeError("pyramid level " + shape_string(image.shape()) + " is not divisible by 2");
  }
  const Tensor b = blur(image);
  Tensor out({image.channels(), image.height() / 2, image.width() / 2});
  for (std::size_t c = 0; c < out.channels(); ++c)
    for (std::size_t y = 0; y < out.height(); ++y)
      for (std::size_t x = 0; x < out.width(); ++x) out.at(c, y, x) = b.at(c, 2 * y, 2 * x);
  return out;
}

Tensor pyramid_expand(const Tensor& image, std::size_t height, std::size_t width) {
  Tensor up({image.channels(), height, width});
  for (std::size_t c = 0; c < image.channels(); ++c)
    for (std::size_t y = 0; y < image.height() && 2 * y < height; ++y)
      for (std::size_t x = 0; x < image.width() && 2 * x < width; ++x)
        up.at(c, 2 * y, 2 * x) = 4.0f * image.at(c, y, x);
  return blur(up);
}

std::vector<Tensor> laplacian_decompose(const Tensor& image, std::size_t levels) {
  const std::size_t factor = std::size_t{1} << levels;
  if (image.rank() != 3 || image.height() % factor != 0 || image.width() % factor != 0) {
    throw ShapeError("image " + shape_string(image.shape()) + " is not divisible by 2^" +
                     std::to_string(levels));
  }
  std::vector<Tensor> pyramid;
  Tensor current = image;
  for (std::size_t l = 0; l < levels; ++l) {
    Tensor next = pyramid_reduce(current);
    Tensor band = current;
    const Tensor e = pyramid_expand(next, current.height(), current.width());
    for (std::size_t k = 0; k < band.size(); ++k) band[k] -= e[k];
    pyramid.push_back(std::move(band));
    current = std::move(next);
  }
  pyramid.push_back(std::move(current));
  return pyramid;
}

Tensor laplacian_reconstruct(const std::vector<Tensor>& pyramid) {
  if (pyramid.empty()) throw ShapeError("empty pyramid");
  Tensor current = pyramid.back();
  for (std::size_t l = pyramid.size() - 1; l-- > 0;) {
    const Tensor& band = pyramid[l];
    Tensor e = pyramid_expand(current, band.height(), band.width());
    for (std::size_t k = 0; k < e.size(); ++k) e[k] += band[k];
    current = std::move(e);
  }
  return current;
}

Tensor laplacian_blend(const Tensor& source, const Tensor& target, const BinaryMask& mask,
                       std::size_t levels) {
  require_same_shape(source, target, "laplacian blend");
  require_mask(target, mask);
  const auto ps = laplacian_decompose(source, levels);
  const auto pt = laplacian_decompose(target, levels);
  Tensor m({1, mask.height, mask.width});
  for (std::size_t k = 0; k < mask.bits.size(); ++k) m[k] = mask.bits[k];
  // Blend only the difference so pixels the blurred mask never reaches come
  // back as the exact target.
  std::vector<Tensor> diff;
  for (std::size_t l = 0; l <= levels; ++l) {
    if (l > 0) m = pyramid_reduce(m);
    Tensor d = ps[l];
    const std::size_t plane = d.height() * d.width();
    for (std::size_t c = 0; c < d.channels(); ++c)
      for (std::size_t k = 0; k < plane; ++k)
        d[c * plane + k] = m[k] == 0.0f ? 0.0f : m[k] * (ps[l][c * plane + k] - pt[l][c * plane + k]);
    diff.push_back(std::move(d));
  }
  Tensor out = laplacian_reconstruct(diff);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = out[k] == 0.0f ? target[k] : target[k] + out[k];
  return out;
}

Tensor poisson_blend(const Tensor& source, const Tensor& target, const BinaryMask& mask,
                     const PoissonOptions& options) {
  require_same_shape(source, target, "poisson blend");
  require_mask(target, mask);
  const std::size_t h = target.height();
  const std::size_t w = target.width();
  const std::size_t plane = h * w;

  std::vector<std::size_t> pixels;
  auto consider = [&](std::size_t y, std::size_t x) {
    if (y > 0 && x > 0 && y + 1 < h && x + 1 < w && mask.at(y, x)) pixels.push_back(y * w + x);
  };
  if (options.order == UnknownOrder::column_major) {
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t y = 0; y < h; ++y) consider(y, x);
  } else {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) consider(y, x);
    if (options.order == UnknownOrder::reversed) std::reverse(pixels.begin(), pixels.end());
  }
  Tensor out = target;
  if (pixels.empty()) return out;

  std::vector<long> index(plane, -1);
  for (std::size_t i = 0; i < pixels.size(); ++i) index[pixels[i]] = static_cast<long>(i);
  const auto n = static_cast<Eigen::Index>(pixels.size());
  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const std::size_t p = pixels[i];
    triplets.emplace_back(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i), 4.0);
    for (const std::size_t q : {p - 1, p + 1, p - w, p + w}) {
      if (index[q] >= 0) triplets.emplace_back(static_cast<Eigen::Index>(i), index[q], -1.0);
    }
  }
  Eigen::SparseMatrix<double> a(n, n);
  a.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> solver;
  solver.setTolerance(options.tolerance);
  solver.setMaxIterations(static_cast<Eigen::Index>(options.max_iterations));
  solver.compute(a);

  for (std::size_t c = 0; c < target.channels(); ++c) {
    const float* s = source.data() + c * plane;
    const float* t = target.data() + c * plane;
    Eigen::VectorXd b(n);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      const std::size_t p = pixels[i];
      double rhs = 0.0;
      for (const std::size_t q : {p - 1, p + 1, p - w, p + w}) {
        rhs += static_cast<double>(s[p]) - s[q];
        if (index[q] < 0) rhs += t[q];
      }
      b(static_cast<Eigen::Index>(i)) = rhs;
    }
    const Eigen::VectorXd f = solver.solve(b);
    if (solver.info() != Eigen::Success) {
      throw NumericalError("poisson solve did not converge after " +
                           std::to_string(solver.iterations()) + " iterations");
    }
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      out[c * plane + pixels[i]] = static_cast<float>(f(static_cast<Eigen::Index>(i)));
    }
  }
  return out;
}

Tensor naive_paste(const Tensor& source, const Tensor& target, const BinaryMask& mask) {
  require_same_shape(source, target, "paste");
  require_mask(target, mask);
  Tensor out = target;
  const std::size_t plane = mask.bits.size();
  for (std::size_t c = 0; c < target.channels(); ++c)
    for (std::size_t k = 0; k < plane; ++k)
      if (mask.bits[k]) out[c * plane + k] = source[c * plane + k];
  return out;
}

double seam_energy(const Tensor& image, const BinaryMask& mask) {
  require_mask(image, mask);
  const std::size_t h = image.height();
  const std::size_t w = image.width();
  double total = 0.0;
  std::size_t pairs = 0;
  auto visit = [&](std::size_t p, std::size_t q) {
    if (mask.bits[p] == mask.bits[q]) return;
    for (std::size_t c = 0; c < image.channels(); ++c) {
      const double d = image[c * h * w + p] - image[c * h * w + q];
      total += d * d;
    }
    ++pairs;
  };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (x + 1 < w) visit(y * w + x, y * w + x + 1);
      if (y + 1 < h) visit(y * w + x, (y + 1) * w + x);
    }
  }
  return pairs ? total / static_cast<double>(pairs * image.channels()) : 0.0;
}

Tensor composite(const std::string& method, const CompositeFixture& f) {
  if (method == "identity") return f.target;
  if (method == "naive") return naive_paste(f.source, f.target, f.mask);
  if (method == "color_transfer") return naive_paste(color_transfer(f.source, f.target), f.target, f.mask);
  if (method == "laplacian") return laplacian_blend(f.source, f.target, f.mask);
  if (method == "poisson") return poisson_blend(f.source, f.target, f.mask);
  if (auto it = f.renders.find(method); it != f.renders.end()) return it->second;
  throw ValidationError("unknown compositing method '" + method + "' for fixture " + f.name);
}

std::vector<MetricRow> evaluate(const std::vector<std::string>& methods,
                                const std::vector<CompositeFixture>& fixtures) {
  std::vector<MetricRow> rows;
  for (const CompositeFixture& f : fixtures) {
    std::vector<float> outside(f.mask.bits.size());
    for (std::size_t k = 0; k < outside.size(); ++k) outside[k] = f.mask.bits[k] ? 0.0f : 1.0f;
    for (const std::string& m : methods) {
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor out = composite(m, f);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      rows.push_back({m, f.name, psnr(out, f.target, &outside), seam_energy(out, f.mask), ms});
    }
  }
  return rows;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream out;
  out.precision(8);
  out << "method,fixture,psnr_out,seam_energy,wall_ms\n";
  for (const MetricRow& r : rows) {
    out << r.method << ',' << r.fixture << ',';
    if (std::isinf(r.psnr_out)) {
      out << "inf";
    } else {
      out << r.psnr_out;
    }
    out << ',' << r.seam_energy << ',' << r.wall_ms << '\n';
  }
  return out.str();
}

}  // namespace lpaint
