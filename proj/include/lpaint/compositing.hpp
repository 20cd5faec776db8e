#pragma once

#include <map>
#include <string>
#include <vector>

#include "lpaint/editing.hpp"
#include "lpaint/tensor.hpp"

namespace lpaint {

// Fixed log-opponent transform used by color_transfer: RGB -> LMS (3x3),
// log10(LMS + kColorLogOffset), then the decorrelating l-alpha-beta matrix.
inline constexpr double kColorLogOffset = 1.0 / 255.0;
extern const double kRgbToLms[3][3];
extern const double kLogLmsToLab[3][3];

Tensor rgb_to_lab(const Tensor& rgb);
Tensor lab_to_rgb(const Tensor& lab);

// Per-channel mean/std matching in l-alpha-beta space. A channel whose source
// std is zero keeps scale 1 and only shifts.
Tensor color_transfer(const Tensor& source, const Tensor& target);

// 5-tap binomial (1, 4, 6, 4, 1) / 16 with mirrored borders.
Tensor blur(const Tensor& image);
Tensor pyramid_reduce(const Tensor& image);
Tensor pyramid_expand(const Tensor& image, std::size_t height, std::size_t width);

// levels band-pass images followed by the coarsest Gaussian level.
std::vector<Tensor> laplacian_decompose(const Tensor& image, std::size_t levels);
Tensor laplacian_reconstruct(const std::vector<Tensor>& pyramid);

Tensor laplacian_blend(const Tensor& source, const Tensor& target, const BinaryMask& mask,
                       std::size_t levels = 4);

enum class UnknownOrder { row_major, column_major, reversed };

struct PoissonOptions {
  UnknownOrder order = UnknownOrder::row_major;
  double tolerance = 1e-10;
  std::size_t max_iterations = 10000;
};

// Guided interpolation: inside the mask (image border excluded) the output's
// 5-point Laplacian equals the source's, with the target as Dirichlet
// boundary. Pixels outside the solved set are copied from the target.
Tensor poisson_blend(const Tensor& source, const Tensor& target, const BinaryMask& mask,
                     const PoissonOptions& options = {});

// Source inside the mask, target elsewhere.
Tensor naive_paste(const Tensor& source, const Tensor& target, const BinaryMask& mask);

// Mean squared output difference across 4-neighbor pairs that straddle the
// mask boundary.
double seam_energy(const Tensor& image, const BinaryMask& mask);

struct CompositeFixture {
  std::string name;
  Tensor target;  // x
  Tensor source;  // G(z_e)
  BinaryMask mask;
  // Precomputed images addressable as methods (e.g. "ours", "preview").
  std::map<std::string, Tensor> renders;
};

struct MetricRow {
  std::string method;
  std::string fixture;
  double psnr_out = 0.0;
  double seam_energy = 0.0;
  double wall_ms = 0.0;
};

// Built-in methods: identity, naive, color_transfer, laplacian, poisson.
// Any other name is looked up in the fixture's renders.
Tensor composite(const std::string& method, const CompositeFixture& fixture);
std::vector<MetricRow> evaluate(const std::vector<std::string>& methods,
                                const std::vector<CompositeFixture>& fixtures);
std::string metrics_csv(const std::vector<MetricRow>& rows);

}  // namespace lpaint
