#include "lpaint/image.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "lpaint/archive.hpp"
#include "lpaint/error.hpp"

namespace lpaint {

Image::Image(Tensor p, std::optional<LabelMap> l) : pixels(std::move(p)), labels(std::move(l)) {
  if (pixels.rank() != 3 || pixels.channels() != 3) {
    throw ShapeError("image pixels must be (3, H, W), got " + shape_string(pixels.shape()));
  }
}

namespace {

std::uint8_t to_byte(float v) {
  const float clamped = std::clamp(v, -1.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround((clamped + 1.0f) * 127.5f));
}

float from_byte(std::uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }

struct PngReadState {
  const std::string* bytes;
  std::size_t offset;
};

void png_read_callback(png_structp png, png_bytep out, png_size_t count) {
  auto* state = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (state->offset + count > state->bytes->size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, state->bytes->data() + state->offset, count);
  state->offset += count;
}

void png_write_callback(png_structp png, png_bytep data, png_size_t count) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), count);
}

void png_flush_callback(png_structp) {}

}  // namespace

std::string encode_png(const Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.channels() != 3) {
    throw ShapeError("encode_png expects (3, H, W), got " + shape_string(pixels.shape()));
  }
  const std::size_t h = pixels.height();
  const std::size_t w = pixels.width();
  std::vector<std::uint8_t> rows(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) rows[(y * w + x) * 3 + c] = to_byte(pixels.at(c, y, x));

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw IoError("libpng initialization failed");
  std::string out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, png_write_callback, png_flush_callback);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y) png_write_row(png, rows.data() + y * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

Tensor decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8)) {
    throw ValidationError("not a PNG image");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw IoError("libpng initialization failed");
  PngReadState state{&bytes, 0};
  std::vector<std::uint8_t> rows;
  png_uint_32 w = 0;
  png_uint_32 h = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("corrupt PNG image");
  }
  png_set_read_fn(png, &state, png_read_callback);
  png_read_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  if (png_get_channels(png, info) != 3) png_error(png, "unsupported channel layout");
  rows.resize(static_cast<std::size_t>(w) * h * 3);
  std::vector<png_bytep> pointers(h);
  for (png_uint_32 y = 0; y < h; ++y) pointers[y] = rows.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, pointers.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor pixels({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) pixels.at(c, y, x) = from_byte(rows[(y * w + x) * 3 + c]);
  return pixels;
}

void write_png(const std::filesystem::path& path, const Tensor& pixels) {
  write_file(path, encode_png(pixels));
}

Tensor read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

Tensor quantize_8bit(const Tensor& pixels) {
  Tensor out = pixels;
  for (float& v : out.values()) v = from_byte(to_byte(v));
  return out;
}

std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(const std::string& text) {
  std::string clean;
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) clean.push_back(c);
  }
  if (clean.size() % 4 != 0) throw ValidationError("base64 length not a multiple of 4");
  std::string out(3 * clean.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw ValidationError("invalid base64");
  std::size_t padding = 0;
  if (!clean.empty() && clean.back() == '=') ++padding;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

double psnr(const Tensor& a, const Tensor& b, const std::vector<float>* include) {
  require_same_shape(a, b, "psnr");
  const std::size_t c = a.channels();
  const std::size_t plane = a.height() * a.width();
  if (include != nullptr && include->size() != plane) {
    throw ShapeError("psnr mask has " + std::to_string(include->size()) + " entries, expected " +
                     std::to_string(plane));
  }
  double sum = 0.0;
  double count = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) {
      if (include != nullptr && (*include)[i] == 0.0f) continue;
      const double d = static_cast<double>(a[ch * plane + i]) - b[ch * plane + i];
      sum += d * d;
      count += 1.0;
    }
  }
  if (count == 0.0 || sum == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = sum / count;
  return 10.0 * std::log10(4.0 / mse);
}

}  // namespace lpaint
