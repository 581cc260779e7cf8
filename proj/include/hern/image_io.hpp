#pragma once

#include <filesystem>

#include "hern/cfa.hpp"

namespace hern {

/// 8-bit PNG I/O. Reads divide by 255; writes clamp to [0,1] and round to
/// the nearest level.

/// Grayscale PNG holding a Bayer mosaic. Throws IoError on unreadable files
/// and DimensionError on odd sides.
BayerMosaic read_mosaic_png(const std::filesystem::path& path);
void write_mosaic_png(const BayerMosaic& mosaic, const std::filesystem::path& path);

/// Packed RAW read from a mosaic PNG.
RawPatch read_raw_png(const std::filesystem::path& path);
void write_raw_png(const RawPatch& raw, const std::filesystem::path& path);

/// RGB PNG. Grayscale and alpha inputs are rejected with IoError.
RgbImage read_rgb_png(const std::filesystem::path& path);
void write_rgb_png(const RgbImage& rgb, const std::filesystem::path& path);

/// Nearest 8-bit level of a value clamped to [0,1].
std::uint8_t to_byte(float v);

}  // namespace hern
