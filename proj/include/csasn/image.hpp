#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "csasn/error.hpp"

namespace csasn {

// Row-major grayscale image; pixels nominally in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0)
      : height(h), width(w), pixels(h * w, fill) {}
  Image(std::size_t h, std::size_t w, std::vector<double> px)
      : height(h), width(w), pixels(std::move(px)) {
    if (pixels.size() != h * w) {
      throw DimensionError("image: pixel count does not match " +
                           std::to_string(h) + "x" + std::to_string(w));
    }
  }

  double& operator()(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return pixels[r * width + c];
  }

  bool operator==(const Image&) const = default;
};

inline void clamp_unit(Image& img) {
  for (auto& p : img.pixels) p = std::clamp(p, 0.0, 1.0);
}

inline double image_mean(const Image& img) {
  double s = 0.0;
  for (double p : img.pixels) s += p;
  return s / static_cast<double>(img.pixels.size());
}

// ---------------------------------------------------------------------------
// PNG (8-bit grayscale) via libpng. Pixels are quantised as round(255 * p).

inline void write_png(const std::filesystem::path& path, const Image& img) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"),
                                           &std::fclose);
  if (!fp) throw IoError("cannot write image: " + path.string());
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng: cannot allocate writer");
  }
  std::vector<png_byte> row(img.width);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng: failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < img.height; ++r) {
    for (std::size_t c = 0; c < img.width; ++c) {
      const double v = std::clamp(img(r, c), 0.0, 1.0);
      row[c] = static_cast<png_byte>(std::lround(v * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"),
                                           &std::fclose);
  if (!fp) throw IoError("missing image file: " + path.string());
  std::array<unsigned char, 8> sig{};
  if (std::fread(sig.data(), 1, 8, fp.get()) != 8 ||
      png_sig_cmp(sig.data(), 0, 8) != 0) {
    throw IoError("not a PNG file: " + path.string());
  }
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng: cannot allocate reader");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng: failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  // Normalise every variant to 8-bit single-channel gray.
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<png_byte> row(rowbytes);
  Image img(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (std::size_t c = 0; c < w; ++c) img(r, c) = row[c] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// ---------------------------------------------------------------------------
// Raw planar float32: uint32 height, uint32 width, then height*width
// float32 values, all little-endian.

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
}  // namespace detail

inline void write_raw_f32(const std::filesystem::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write image: " + path.string());
  detail::put_u32(os, static_cast<std::uint32_t>(img.height));
  detail::put_u32(os, static_cast<std::uint32_t>(img.width));
  for (double p : img.pixels) {
    const float f = static_cast<float>(p);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    detail::put_u32(os, bits);
  }
  if (!os) throw IoError("failed writing " + path.string());
}

inline Image read_raw_f32(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("missing image file: " + path.string());
  try {
    const std::uint32_t h = detail::get_u32(is);
    const std::uint32_t w = detail::get_u32(is);
    if (h == 0 || w == 0) throw IoError("empty raw image");
    Image img(h, w);
    for (auto& p : img.pixels) {
      const std::uint32_t bits = detail::get_u32(is);
      float f;
      std::memcpy(&f, &bits, 4);
      p = f;
    }
    return img;
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + ": " + path.string());
  }
}

// Dispatches on extension: .png or .f32.
inline Image read_image(const std::filesystem::path& path) {
  if (path.extension() == ".f32") return read_raw_f32(path);
  return read_png(path);
}

inline void write_image(const std::filesystem::path& path, const Image& img) {
  if (path.extension() == ".f32") {
    write_raw_f32(path, img);
  } else {
    write_png(path, img);
  }
}

}  // namespace csasn
