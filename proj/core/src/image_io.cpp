// SPDX-License-Identifier: Apache-2.0
#include "gbt/synth/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "gbt/error.hpp"

namespace gbt::synth {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

[[noreturn]] void io_fail(const std::filesystem::path& path, const std::string& what) {
  throw Error(ErrorCode::kIoError, path.string() + ": " + what);
}

}  // namespace

void write_png(const std::filesystem::path& path, const nn::Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw Error(ErrorCode::kShapeMismatch, "expected [3,H,W] image, got " + nn::shape_str(image.shape()));
  }
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  std::vector<std::uint8_t> rgb(h * w * 3);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < h * w; ++p) rgb[p * 3 + c] = to_byte(image[c * h * w + p]);
  }

  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) io_fail(path, "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    io_fail(path, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    io_fail(path, "libpng write failed");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t row = 0; row < h; ++row) png_write_row(png, rgb.data() + row * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

nn::Tensor<float> read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) io_fail(path, "cannot open for reading");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) io_fail(path, "not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    io_fail(path, "libpng init failed");
  }
  std::vector<std::uint8_t> rgb;
  png_uint_32 w = 0;
  png_uint_32 h = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail(path, "libpng read failed");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (png_get_bit_depth(png, info) < 8) png_set_expand(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  rgb.resize(static_cast<std::size_t>(w) * h * 3);
  for (png_uint_32 row = 0; row < h; ++row) png_read_row(png, rgb.data() + static_cast<std::size_t>(row) * w * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  nn::Tensor<float> image({3, h, w});
  const std::size_t hw = static_cast<std::size_t>(w) * h;
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t c = 0; c < 3; ++c) image[c * hw + p] = static_cast<float>(rgb[p * 3 + c]) / 255.0f;
  }
  return image;
}

nn::Tensor<float> quantize8(const nn::Tensor<float>& image) {
  nn::Tensor<float> out = image;
  for (float& v : out.values()) v = static_cast<float>(to_byte(v)) / 255.0f;
  return out;
}

}  // namespace gbt::synth
