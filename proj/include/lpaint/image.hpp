#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lpaint/tensor.hpp"

namespace lpaint {

// Per-pixel class ids, row-major (height, width).
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

// RGB image, pixels (3, H, W) in [-1, 1]. Values are only clamped when
// converted to 8-bit at the file boundary.
struct Image {
  Tensor pixels;
  std::optional<LabelMap> labels;

  Image() = default;
  explicit Image(Tensor p, std::optional<LabelMap> l = std::nullopt);

  std::size_t height() const { return pixels.height(); }
  std::size_t width() const { return pixels.width(); }
};

// 8-bit RGB PNG <-> [-1, 1] floats.
std::string encode_png(const Tensor& pixels);
Tensor decode_png(const std::string& bytes);
void write_png(const std::filesystem::path& path, const Tensor& pixels);
Tensor read_png(const std::filesystem::path& path);

// Quantizes like a PNG round trip would.
Tensor quantize_8bit(const Tensor& pixels);

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

// PSNR in dB for [-1, 1] images, peak-to-peak range 2. `mask` (H, W) selects
// pixels to include when non-null (1 = include). Returns +inf for identical
// inputs.
double psnr(const Tensor& a, const Tensor& b, const std::vector<float>* include = nullptr);

}  // namespace lpaint
