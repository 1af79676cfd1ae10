#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "compogauss/core/check.hpp"
#include "compogauss/core/tensor.hpp"

namespace cg::io {

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double linear_to_srgb(double c) {
  c = c < 0 ? 0 : (c > 1 ? 1 : c);
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

// rgb8: H*W*3 bytes, row-major.
inline void write_png_rgb8(const std::string& path, int64_t h, int64_t w,
                           const std::vector<uint8_t>& rgb8) {
  CG_CHECK(static_cast<int64_t>(rgb8.size()) == h * w * 3, "write_png_rgb8: size mismatch");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw io_error(IoErrorKind::FileSystem, "cannot open for write: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw io_error(IoErrorKind::FileSystem, "libpng write error: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int64_t i = 0; i < h; ++i)
    png_write_row(png, const_cast<png_bytep>(rgb8.data() + i * w * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

// Tonemap a linear [3,H,W] image to sRGB and write it.
template <class T>
void write_png_linear(const std::string& path, const Tensor<T>& img_chw) {
  CG_CHECK(img_chw.ndim() == 3 && img_chw.dim(0) == 3, "write_png_linear: expected [3,H,W]");
  int64_t h = img_chw.dim(1), w = img_chw.dim(2);
  std::vector<uint8_t> rgb8(static_cast<size_t>(h * w * 3));
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t c = 0; c < 3; ++c) {
        double v = linear_to_srgb(static_cast<double>(img_chw.at(c, i, j)));
        rgb8[static_cast<size_t>((i * w + j) * 3 + c)] =
            static_cast<uint8_t>(std::lround(v * 255.0));
      }
  write_png_rgb8(path, h, w, rgb8);
}

// Reads an 8-bit PNG as linear float [C,H,W] (sRGB decoded; C = 1 or 3).
inline Tensor<float> read_png_linear(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw io_error(IoErrorKind::MissingComponent, "missing image file: " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, fp) != 8 || png_sig_cmp(header, 0, 8)) {
    std::fclose(fp);
    throw io_error(IoErrorKind::BadMagic, "not a PNG file: " + path);
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw io_error(IoErrorKind::BadData, "libpng read error: " + path);
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  int channels = png_get_channels(png, info);
  std::vector<uint8_t> row(static_cast<size_t>(w) * static_cast<size_t>(channels));
  Tensor<float> out({channels == 1 ? 1 : 3, static_cast<int64_t>(h), static_cast<int64_t>(w)});
  for (png_uint_32 i = 0; i < h; ++i) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 j = 0; j < w; ++j)
      for (int c = 0; c < (channels == 1 ? 1 : 3); ++c)
        out.at(c, i, j) = static_cast<float>(
            srgb_to_linear(row[static_cast<size_t>(j) * channels + c] / 255.0));
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return out;
}

}  // namespace cg::io
