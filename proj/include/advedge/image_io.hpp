#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "advedge/tensor.hpp"

namespace advedge {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline unsigned char to_byte(float v) {
  const long b = std::lround(static_cast<double>(v) * 255.0);
  return static_cast<unsigned char>(std::min(255L, std::max(0L, b)));
}

/// Decodes an 8-bit PNG to a [1,H,W] tensor in [0,1]; color inputs are
/// reduced to luminance.
inline Tensor<float> read_png_gray(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open PNG file '" + path + "'");
  unsigned char header[8];
  if (std::fread(header, 1, 8, fp) != 8 || png_sig_cmp(header, 0, 8)) {
    std::fclose(fp);
    throw IoError("'" + path + "' is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng initialization failed for '" + path + "'");
  }
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("failed to decode PNG file '" + path + "'");
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray(png, 1 /* silent */, -1.0, -1.0);
  png_read_update_info(png, info);
  pixels.assign(static_cast<std::size_t>(width) * height, 0);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  Tensor<float> out({1, static_cast<int>(height), static_cast<int>(width)});
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(pixels[static_cast<std::size_t>(i)]) / 255.0f;
  return out;
}

/// Writes a [1,H,W] or [3,H,W] tensor in [0,1] as an 8-bit PNG.
inline void write_png(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
    throw IoError("write_png: expected [1,H,W] or [3,H,W], got " + shape_str(image.shape()));
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng initialization failed for '" + path + "'");
  }
  std::vector<unsigned char> rowbuf(static_cast<std::size_t>(w) * c);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("failed to encode PNG file '" + path + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) rowbuf[static_cast<std::size_t>(x) * c + ch] = to_byte(image.at3(ch, y, x));
    png_write_row(png, rowbuf.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

/// 8-bit binary PGM (values scaled by 255 and rounded); used for map dumps.
inline void write_pgm(const std::string& path, const Tensor<float>& map) {
  if (map.rank() != 2) throw IoError("write_pgm: expected [H,W] map, got " + shape_str(map.shape()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "P5\n" << map.dim(1) << " " << map.dim(0) << "\n255\n";
  for (std::int64_t i = 0; i < map.size(); ++i) {
    const unsigned char b = to_byte(map[i]);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!out) throw IoError("short write to '" + path + "'");
}

}  // namespace advedge
