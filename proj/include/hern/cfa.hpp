#pragma once

#include <array>
#include <cstdint>

#include "hern/tensor.hpp"

namespace hern {

/// Packed channel order of a RawPatch.
enum RawChannel : std::size_t { kRed = 0, kGreen1 = 1, kBlue = 2, kGreen2 = 3 };

/// Single-channel sensor image with a fixed RGGB 2x2 pattern:
///
///     R  G1
///     G2 B
///
/// Stored as a rank-2 tensor (height x width), both sides even.
class BayerMosaic {
 public:
  explicit BayerMosaic(Tensor<float> data);

  std::size_t height() const { return data_.dim(0); }
  std::size_t width() const { return data_.dim(1); }
  float at(std::size_t y, std::size_t x) const { return data_[y * width() + x]; }
  const Tensor<float>& data() const { return data_; }

 private:
  Tensor<float> data_;
};

/// Half-resolution H x W x 4 tensor with channels [R, G1, B, G2] in [0,1].
class RawPatch {
 public:
  explicit RawPatch(Tensor<float> data);

  std::size_t height() const { return data_.height(); }
  std::size_t width() const { return data_.width(); }
  const Tensor<float>& data() const { return data_; }

  bool operator==(const RawPatch&) const = default;

 private:
  Tensor<float> data_;
};

/// H x W x 3 RGB tensor. Network outputs are not clamped; use clamped()
/// before writing to 8-bit files.
class RgbImage {
 public:
  explicit RgbImage(Tensor<float> data);

  std::size_t height() const { return data_.height(); }
  std::size_t width() const { return data_.width(); }
  const Tensor<float>& data() const { return data_; }
  Tensor<float>& data() { return data_; }
  RgbImage clamped() const;

  bool operator==(const RgbImage&) const = default;

 private:
  Tensor<float> data_;
};

struct PairedSample {
  RawPatch raw;
  RgbImage rgb;
  int scale = 1;

  /// Throws unless rgb sides equal scale x raw sides and raw sides are
  /// multiples of 4.
  void validate() const;
  bool operator==(const PairedSample&) const = default;
};

using ChannelGains = std::array<float, 3>;

RawPatch pack_bayer(const BayerMosaic& mosaic);
BayerMosaic unpack_bayer(const RawPatch& raw);

/// Builds a training pair from a clean RGB image: optional 2x bilinear
/// downsample (scale 2), per-channel division by `gains`, RGGB sampling,
/// additive clipped Gaussian noise. Deterministic in `seed`.
PairedSample synthesize_raw(const RgbImage& rgb, const ChannelGains& gains, float noise_sigma,
                            std::uint64_t seed, int scale = 1);

PairedSample random_crop_pair(const PairedSample& sample, std::size_t size,
                              std::uint64_t seed);

PairedSample flip_pair(const PairedSample& sample, bool horizontal, bool vertical);

}  // namespace hern
