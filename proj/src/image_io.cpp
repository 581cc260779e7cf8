#include "hern/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace hern {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct Decoded {
  std::size_t height = 0;
  std::size_t width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

Decoded read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open '" + path.string() + "'");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("'" + path.string() + "' is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  Decoded out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  out.height = png_get_image_height(png, info);
  out.width = png_get_image_width(png, info);
  out.channels = png_get_channels(png, info);
  out.pixels.resize(out.height * out.width * static_cast<std::size_t>(out.channels));
  rows.resize(out.height);
  for (std::size_t y = 0; y < out.height; ++y) {
    rows[y] = out.pixels.data() + y * out.width * static_cast<std::size_t>(out.channels);
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::filesystem::path& path, std::size_t height, std::size_t width,
               int channels, const std::vector<std::uint8_t>& pixels) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open '" + path.string() + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) {
    rows[y] = const_cast<png_bytep>(pixels.data() + y * width * static_cast<std::size_t>(channels));
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<float> to_float(const Decoded& d, Shape shape) {
  Tensor<float> t(std::move(shape));
  for (std::size_t i = 0; i < d.pixels.size(); ++i) t[i] = static_cast<float>(d.pixels[i]) / 255.0f;
  return t;
}

std::vector<std::uint8_t> to_bytes(const Tensor<float>& t) {
  std::vector<std::uint8_t> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = to_byte(t[i]);
  return out;
}

}  // namespace

std::uint8_t to_byte(float v) {
  const float c = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

BayerMosaic read_mosaic_png(const std::filesystem::path& path) {
  const Decoded d = read_png(path);
  if (d.channels != 1) {
    throw IoError("'" + path.string() + "' must be a single-channel grayscale PNG");
  }
  return BayerMosaic(to_float(d, {d.height, d.width}));
}

void write_mosaic_png(const BayerMosaic& mosaic, const std::filesystem::path& path) {
  write_png(path, mosaic.height(), mosaic.width(), 1, to_bytes(mosaic.data()));
}

RawPatch read_raw_png(const std::filesystem::path& path) {
  return pack_bayer(read_mosaic_png(path));
}

void write_raw_png(const RawPatch& raw, const std::filesystem::path& path) {
  write_mosaic_png(unpack_bayer(raw), path);
}

RgbImage read_rgb_png(const std::filesystem::path& path) {
  const Decoded d = read_png(path);
  if (d.channels != 3) throw IoError("'" + path.string() + "' must be an RGB PNG without alpha");
  return RgbImage(to_float(d, {d.height, d.width, 3}));
}

void write_rgb_png(const RgbImage& rgb, const std::filesystem::path& path) {
  write_png(path, rgb.height(), rgb.width(), 3, to_bytes(rgb.data()));
}

}  // namespace hern
