#include "hern/cfa.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "hern/image_ops.hpp"

namespace hern {
namespace {

void require_unit_range(const Tensor<float>& t, const char* what) {
  for (float v : t.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ParameterError(std::string(what) + ": value " + std::to_string(v) +
                           " outside [0,1]");
    }
  }
}

// Offsets of the R, G1, B, G2 sites inside a 2x2 cell.
constexpr std::array<std::array<std::size_t, 2>, 4> kSites = {{{0, 0}, {0, 1}, {1, 1}, {1, 0}}};

}  // namespace

BayerMosaic::BayerMosaic(Tensor<float> data) : data_(std::move(data)) {
  if (data_.rank() != 2) {
    throw ShapeError("BayerMosaic: expected a rank-2 tensor, got " + shape_string(data_.shape()));
  }
  if (data_.dim(0) % 2 != 0 || data_.dim(1) % 2 != 0) {
    throw DimensionError("BayerMosaic: sides must be even, got " + shape_string(data_.shape()));
  }
  require_unit_range(data_, "BayerMosaic");
}

RawPatch::RawPatch(Tensor<float> data) : data_(std::move(data)) {
  require_image(data_, 4, "RawPatch");
  require_unit_range(data_, "RawPatch");
}

RgbImage::RgbImage(Tensor<float> data) : data_(std::move(data)) {
  require_image(data_, 3, "RgbImage");
}

RgbImage RgbImage::clamped() const {
  Tensor<float> t = data_;
  clamp_unit(t);
  return RgbImage(std::move(t));
}

void PairedSample::validate() const {
  if (scale != 1 && scale != 2) {
    throw ParameterError("PairedSample: scale must be 1 or 2, got " + std::to_string(scale));
  }
  if (raw.height() % 4 != 0 || raw.width() % 4 != 0) {
    throw DimensionError("PairedSample: raw sides must be multiples of 4, got " +
                         shape_string(raw.data().shape()));
  }
  const auto s = static_cast<std::size_t>(scale);
  if (rgb.height() != s * raw.height() || rgb.width() != s * raw.width()) {
    throw DimensionError("PairedSample: rgb " + shape_string(rgb.data().shape()) +
                         " is not " + std::to_string(scale) + "x raw " +
                         shape_string(raw.data().shape()));
  }
}

RawPatch pack_bayer(const BayerMosaic& mosaic) {
  const std::size_t h = mosaic.height() / 2, w = mosaic.width() / 2;
  auto out = Tensor<float>::image(h, w, 4);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 4; ++c) {
        out.at(y, x, c) = mosaic.at(2 * y + kSites[c][0], 2 * x + kSites[c][1]);
      }
    }
  }
  return RawPatch(std::move(out));
}

BayerMosaic unpack_bayer(const RawPatch& raw) {
  const std::size_t h = raw.height(), w = raw.width();
  Tensor<float> out({2 * h, 2 * w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 4; ++c) {
        out[(2 * y + kSites[c][0]) * 2 * w + 2 * x + kSites[c][1]] = raw.data().at(y, x, c);
      }
    }
  }
  return BayerMosaic(std::move(out));
}

PairedSample synthesize_raw(const RgbImage& rgb, const ChannelGains& gains, float noise_sigma,
                            std::uint64_t seed, int scale) {
  if (scale != 1 && scale != 2) {
    throw ParameterError("synthesize_raw: scale must be 1 or 2");
  }
  const std::size_t divisor = scale == 1 ? 4 : 8;
  if (rgb.height() % divisor != 0 || rgb.width() % divisor != 0 || rgb.height() == 0 ||
      rgb.width() == 0) {
    throw DimensionError("synthesize_raw: rgb sides must be non-zero multiples of " +
                         std::to_string(divisor) + ", got " + shape_string(rgb.data().shape()));
  }
  for (float g : gains) {
    if (!(g > 0.0f)) throw ParameterError("synthesize_raw: gains must be positive");
  }
  if (!(noise_sigma >= 0.0f)) throw ParameterError("synthesize_raw: noise sigma must be >= 0");

  const std::size_t h = rgb.height() / static_cast<std::size_t>(scale);
  const std::size_t w = rgb.width() / static_cast<std::size_t>(scale);
  const Tensor<float> degraded = scale == 1 ? rgb.data() : resize_bilinear(rgb.data(), h, w);

  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  // Mosaic site -> rgb channel, row-major over the 2x2 cell: R G / G B.
  constexpr std::array<std::array<std::size_t, 2>, 2> kCellChannel = {{{0, 1}, {1, 2}}};
  Tensor<float> mosaic({2 * h, 2 * w});
  for (std::size_t my = 0; my < 2 * h; ++my) {
    for (std::size_t mx = 0; mx < 2 * w; ++mx) {
      const std::size_t ch = kCellChannel[my % 2][mx % 2];
      float v = degraded.at(my / 2, mx / 2, ch) / gains[ch];
      if (noise_sigma > 0.0f) v += noise_sigma * noise(rng);
      mosaic[my * 2 * w + mx] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  PairedSample sample{pack_bayer(BayerMosaic(std::move(mosaic))), rgb, scale};
  sample.validate();
  return sample;
}

PairedSample random_crop_pair(const PairedSample& sample, std::size_t size, std::uint64_t seed) {
  if (size == 0 || size % 4 != 0) {
    throw ParameterError("random_crop_pair: size must be a positive multiple of 4, got " +
                         std::to_string(size));
  }
  if (size > sample.raw.height() || size > sample.raw.width()) {
    throw ParameterError("random_crop_pair: size " + std::to_string(size) +
                         " exceeds raw patch " + shape_string(sample.raw.data().shape()));
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dy(0, sample.raw.height() - size);
  std::uniform_int_distribution<std::size_t> dx(0, sample.raw.width() - size);
  const std::size_t y0 = dy(rng);
  const std::size_t x0 = dx(rng);
  const auto s = static_cast<std::size_t>(sample.scale);
  return PairedSample{RawPatch(crop_image(sample.raw.data(), y0, x0, size, size)),
                      RgbImage(crop_image(sample.rgb.data(), s * y0, s * x0, s * size, s * size)),
                      sample.scale};
}

PairedSample flip_pair(const PairedSample& sample, bool horizontal, bool vertical) {
  return PairedSample{RawPatch(flip_image(sample.raw.data(), horizontal, vertical)),
                      RgbImage(flip_image(sample.rgb.data(), horizontal, vertical)),
                      sample.scale};
}

}  // namespace hern
