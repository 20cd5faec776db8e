#include "oracles.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "lpaint/image.hpp"
#include "lpaint/scene.hpp"

namespace lpaint::oracle {

Grid::Grid(const Tensor& t) : c(t.dim(0)), h(t.dim(1)), w(t.dim(2)), v(t.values().begin(), t.values().end()) {}

Grid conv(const Conv2d& layer, const Grid& in) {
  const std::size_t k = layer.kernel;
  const long pad = static_cast<long>(k / 2);
  const std::size_t s = layer.stride;
  const std::size_t oh = (in.h + s - 1) / s;
  const std::size_t ow = (in.w + s - 1) / s;
  Grid out(layer.out_channels, oh, ow);
  for (std::size_t o = 0; o < layer.out_channels; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < layer.in_channels; ++i)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long sy = static_cast<long>(y * s + ky) - pad;
              const long sx = static_cast<long>(x * s + kx) - pad;
              if (sy < 0 || sx < 0 || sy >= static_cast<long>(in.h) || sx >= static_cast<long>(in.w)) continue;
              acc += static_cast<double>(layer.weight[((o * layer.in_channels + i) * k + ky) * k + kx]) *
                     in.at(i, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
        out.at(o, y, x) = acc;
      }
  return out;
}

Grid upsample(const Grid& in, std::size_t f) {
  Grid out(in.c, in.h * f, in.w * f);
  for (std::size_t ch = 0; ch < in.c; ++ch)
    for (std::size_t y = 0; y < out.h; ++y)
      for (std::size_t x = 0; x < out.w; ++x) out.at(ch, y, x) = in.at(ch, y / f, x / f);
  return out;
}

void activate(Activation a, Grid& g) {
  for (double& x : g.v) {
    if (a == Activation::relu && x < 0) x = 0;
    if (a == Activation::leaky_relu && x < 0) x *= kLeakySlope;
  }
}

Grid generator_forward(const LayeredGenerator& gen, std::size_t first, const Grid& input,
                       const PerturbationSet* perts, const std::vector<std::vector<double>>* deltas) {
  Grid x = input;
  for (std::size_t i = first; i < gen.layer_count(); ++i) {
    x = conv(gen.layer(i), upsample(x, gen.specs()[i].upsample));
    activate(gen.specs()[i].activation, x);
    if (perts != nullptr && i >= perts->first_layer && i - perts->first_layer < perts->deltas.size()) {
      const std::size_t k = i - perts->first_layer;
      for (std::size_t j = 0; j < x.v.size(); ++j) {
        const double d = deltas ? (*deltas)[k][j] : perts->deltas[k][j];
        x.v[j] = perts->mode == PerturbationMode::multiplicative ? x.v[j] * (1.0 + d) : x.v[j] + d;
      }
    }
  }
  return x;
}

double adaptation_loss(const LayeredGenerator& gen, const Tensor& z_h, const Tensor& target,
                       const BinaryMask& mask, const PerturbationSet& perts, double lambda,
                       const std::vector<std::vector<double>>& deltas) {
  const Grid y = generator_forward(gen, gen.split(), Grid(z_h), &perts, &deltas);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t ch = 0; ch < y.c; ++ch)
    for (std::size_t r = 0; r < y.h; ++r)
      for (std::size_t q = 0; q < y.w; ++q) {
        if (mask.at(r, q)) continue;
        sum += std::abs(y.at(ch, r, q) - target.at(ch, r, q));
        ++count;
      }
  double reg = 0.0;
  for (const auto& d : deltas)
    for (double v : d) reg += v * v;
  return (count ? sum / static_cast<double>(count) : 0.0) + lambda * reg;
}

Tensor poisson_dense(const Tensor& source, const Tensor& target, const BinaryMask& mask) {
  const std::size_t h = target.height(), w = target.width();
  std::vector<long> index(h * w, -1);
  std::size_t n = 0;
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x)
      if (mask.at(y, x)) index[y * w + x] = static_cast<long>(n++);
  Tensor out = target;
  if (n == 0) return out;
  for (std::size_t ch = 0; ch < target.channels(); ++ch) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    for (std::size_t y = 1; y + 1 < h; ++y)
      for (std::size_t x = 1; x + 1 < w; ++x) {
        const long row = index[y * w + x];
        if (row < 0) continue;
        a(row, row) = 4.0;
        b(row) = 4.0 * source.at(ch, y, x);
        const std::size_t ny[4] = {y - 1, y + 1, y, y};
        const std::size_t nx[4] = {x, x, x - 1, x + 1};
        for (int k = 0; k < 4; ++k) {
          b(row) -= source.at(ch, ny[k], nx[k]);
          const long col = index[ny[k] * w + nx[k]];
          if (col >= 0) {
            a(row, col) = -1.0;
          } else {
            b(row) += target.at(ch, ny[k], nx[k]);
          }
        }
      }
    const Eigen::VectorXd f = a.fullPivLu().solve(b);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (index[y * w + x] >= 0) out.at(ch, y, x) = static_cast<float>(f(index[y * w + x]));
  }
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

LayeredGenerator micro_generator(std::uint64_t seed) {
  LayeredGenerator gen({{4, 6, 3, 1, Activation::leaky_relu},
                        {6, 5, 3, 2, Activation::leaky_relu},
                        {5, 3, 3, 1, Activation::linear}},
                       1, 2, 2);
  gen.init_weights(seed);
  // Nonzero biases so no gradient path is trivially zero.
  std::mt19937_64 rng(seed + 17);
  std::uniform_real_distribution<float> u(-0.1f, 0.1f);
  for (std::size_t i = 0; i < gen.layer_count(); ++i)
    for (float& b : gen.layer(i).bias.values()) b = u(rng);
  return gen;
}

UnitCatalog random_catalog(std::size_t channels, std::size_t h, std::size_t w, std::size_t classes,
                           std::mt19937_64& rng) {
  UnitCatalog cat;
  cat.checkpoint_id = "ck-random";
  cat.config_digest = "cfg-random";
  cat.grid = {channels, h, w};
  std::bernoulli_distribution pick(0.3);
  std::uniform_int_distribution<std::size_t> any(0, channels - 1);
  for (std::size_t k = 0; k < classes; ++k) {
    ClassUnits u;
    u.name = "c" + std::to_string(k);
    u.indicator.assign(channels, 0);
    for (auto& b : u.indicator) b = pick(rng) ? 1 : 0;
    u.indicator[any(rng)] = 1;
    u.activation = Tensor({channels});
    u.iou.assign(channels, 0.0);
    for (std::size_t c = 0; c < channels; ++c)
      if (u.indicator[c]) {
        u.activation[c] = std::uniform_real_distribution<float>(0.1f, 3.0f)(rng);
        u.iou[c] = 0.5;
      }
    cat.classes.push_back(std::move(u));
  }
  return cat;
}

EditOp random_op(const UnitCatalog& catalog, std::mt19937_64& rng, const std::vector<std::string>& style_ids,
                 double region_density) {
  EditOp op;
  std::uniform_int_distribution<std::size_t> cls(0, catalog.classes.size() - 1);
  op.class_name = catalog.classes[cls(rng)].name;
  const int modes = style_ids.empty() ? 2 : 3;
  const int m = std::uniform_int_distribution<int>(0, modes - 1)(rng);
  op.mode = m == 0 ? EditMode::draw : (m == 1 ? EditMode::erase : EditMode::restyle);
  if (op.mode == EditMode::erase) {
    op.strength = 0.0;
  } else {
    const double levels[] = {0.5, 1.0, 2.0};
    op.strength = levels[std::uniform_int_distribution<int>(0, 2)(rng)];
  }
  if (op.mode == EditMode::restyle) {
    op.style_source = style_ids[std::uniform_int_distribution<std::size_t>(0, style_ids.size() - 1)(rng)];
  }
  op.region = random_mask(catalog.grid.height, catalog.grid.width, region_density, rng);
  return op;
}

Tensor blend_reference(const Tensor& z, const Tensor& alpha, double s, const Tensor& p) {
  Tensor out(z.shape());
  const std::size_t plane = z.height() * z.width();
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double a = alpha[i];
    out[i] = static_cast<float>((1.0 - a) * z[i] + a * (s * p[i / plane]));
  }
  return out;
}

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, float lo, float hi) {
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t(shape);
  for (float& v : t.values()) v = u(rng);
  return t;
}

BinaryMask random_mask(std::size_t h, std::size_t w, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution b(p);
  BinaryMask m(h, w);
  for (auto& bit : m.bits) bit = b(rng) ? 1 : 0;
  return m;
}

}  // namespace lpaint::oracle

namespace lpaint::testing {

std::filesystem::path model_dir() { return std::filesystem::path(LPAINT_TEST_MODEL_DIR) / "toy-v1"; }
std::filesystem::path data_dir() { return LPAINT_TEST_DATA_DIR; }

ModelBundle fast_bundle(std::size_t adaptation_steps) {
  ModelBundle m = ModelBundle::load(model_dir());
  m.refine.steps = 20;
  m.preview.steps = 10;
  m.adaptation.steps = adaptation_steps;
  return m;
}

std::string scene_png(std::uint64_t seed) { return encode_png(render_scene(random_scene_spec(seed)).image.pixels); }

nlohmann::json block_op(const std::string& mode, const std::string& class_name, std::size_t cells) {
  BinaryMask region(4, 4);
  for (std::size_t y = 0; y < cells; ++y)
    for (std::size_t x = 0; x < cells; ++x) region.set(y, x);
  return {{"mode", mode}, {"class", class_name}, {"region", region.to_json()}};
}

TempDir::TempDir() {
  static std::mt19937_64 rng{std::random_device{}()};
  path = std::filesystem::temp_directory_path() / ("lpaint-test-" + std::to_string(rng()));
  std::filesystem::create_directories(path);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path, ec);
}

}  // namespace lpaint::testing
