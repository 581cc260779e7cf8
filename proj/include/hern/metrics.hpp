#pragma once

#include <limits>

#include "hern/cfa.hpp"

namespace hern {

/// Returned by psnr() for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE) over all channels, computed on inputs clamped to
/// [0,1]. Returns kPsnrIdentical when the MSE is zero.
double psnr(const RgbImage& a, const RgbImage& b, double peak = 1.0);

struct SsimOptions {
  double k1 = 0.01;
  double k2 = 0.03;
  int window = 11;
  double sigma = 1.5;
  double dynamic_range = 1.0;
};

/// Mean SSIM over every valid window position and channel, with a
/// normalized Gaussian window. Both sides must be at least the window size.
double ssim(const RgbImage& a, const RgbImage& b, const SsimOptions& options = {});

}  // namespace hern
