#include "hern/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace hern {
namespace {

void require_same_shape(const RgbImage& a, const RgbImage& b, const char* what) {
  if (a.data().shape() != b.data().shape()) {
    throw ShapeError(std::string(what) + ": shapes " + shape_string(a.data().shape()) + " and " +
                     shape_string(b.data().shape()) + " differ");
  }
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size * size));
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double d2 = (y - c) * (y - c) + (x - c) * (x - c);
      sum += w[static_cast<std::size_t>(y * size + x)] = std::exp(-d2 / (2.0 * sigma * sigma));
    }
  }
  for (auto& v : w) v /= sum;
  return w;
}

}  // namespace

double psnr(const RgbImage& a, const RgbImage& b, double peak) {
  require_same_shape(a, b, "psnr");
  if (!(peak > 0.0)) throw ParameterError("psnr: peak must be positive");
  const auto& x = a.data();
  const auto& y = b.data();
  if (x.size() == 0) throw ShapeError("psnr: empty images");
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::clamp(static_cast<double>(x[i]), 0.0, 1.0) -
                     std::clamp(static_cast<double>(y[i]), 0.0, 1.0);
    se += d * d;
  }
  const double mse = se / static_cast<double>(x.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const RgbImage& a, const RgbImage& b, const SsimOptions& options) {
  require_same_shape(a, b, "ssim");
  const auto win = static_cast<std::size_t>(options.window);
  if (options.window < 1 || a.height() < win || a.width() < win) {
    throw ShapeError("ssim: images " + shape_string(a.data().shape()) + " smaller than the " +
                     std::to_string(options.window) + "x" + std::to_string(options.window) +
                     " window");
  }
  const auto weights = gaussian_window(options.window, options.sigma);
  const double c1 = std::pow(options.k1 * options.dynamic_range, 2);
  const double c2 = std::pow(options.k2 * options.dynamic_range, 2);
  const auto& x = a.data();
  const auto& y = b.data();
  const std::size_t oh = a.height() - win + 1, ow = a.width() - win + 1;

  double total = 0.0;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (std::size_t ky = 0; ky < win; ++ky) {
          for (std::size_t kx = 0; kx < win; ++kx) {
            const double w = weights[ky * win + kx];
            const double u = x.at(oy + ky, ox + kx, ch);
            const double v = y.at(oy + ky, ox + kx, ch);
            mx += w * u;
            my += w * v;
            mxx += w * u * u;
            myy += w * v * v;
            mxy += w * u * v;
          }
        }
        const double vx = mxx - mx * mx;
        const double vy = myy - my * my;
        const double cov = mxy - mx * my;
        total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                 ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    }
  }
  return total / static_cast<double>(3 * oh * ow);
}

}  // namespace hern
