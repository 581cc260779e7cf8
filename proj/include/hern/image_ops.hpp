#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "hern/tensor.hpp"

namespace hern {

/// Mirrors an HxWxC tensor along the width (horizontal) and/or height
/// (vertical) axis. Channels are never permuted.
template <typename T>
Tensor<T> flip_image(const Tensor<T>& in, bool horizontal, bool vertical) {
  const std::size_t h = in.height(), w = in.width(), c = in.channels();
  Tensor<T> out(in.shape());
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = vertical ? h - 1 - y : y;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = horizontal ? w - 1 - x : x;
      std::copy_n(&in.at(sy, sx, 0), c, &out.at(y, x, 0));
    }
  }
  return out;
}

/// Bilinear resampling with half-pixel centres and edge clamping (the
/// align_corners=false convention). No anti-aliasing filter is applied.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& in, std::size_t out_h, std::size_t out_w) {
  const std::size_t h = in.height(), w = in.width(), c = in.channels();
  if (h == 0 || w == 0 || out_h == 0 || out_w == 0) {
    throw ShapeError("resize_bilinear: zero-sized image " + shape_string(in.shape()));
  }
  Tensor<T> out = Tensor<T>::image(out_h, out_w, c);
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  auto source = [](std::size_t i, double scale, std::size_t n, std::size_t& i0,
                   std::size_t& i1, double& frac) {
    double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, n - 1);
    frac = s - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    source(y, sy, h, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      source(x, sx, w, x0, x1, fx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = (1.0 - fx) * in.at(y0, x0, ch) + fx * in.at(y0, x1, ch);
        const double bottom = (1.0 - fx) * in.at(y1, x0, ch) + fx * in.at(y1, x1, ch);
        out.at(y, x, ch) = static_cast<T>((1.0 - fy) * top + fy * bottom);
      }
    }
  }
  return out;
}

/// Reflect padding (edge sample not repeated) on the bottom and right.
template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& in, std::size_t pad_bottom, std::size_t pad_right) {
  const std::size_t h = in.height(), w = in.width(), c = in.channels();
  if ((pad_bottom > 0 && pad_bottom >= h) || (pad_right > 0 && pad_right >= w)) {
    throw DimensionError("reflect_pad: padding must be smaller than the image side");
  }
  Tensor<T> out = Tensor<T>::image(h + pad_bottom, w + pad_right, c);
  for (std::size_t y = 0; y < out.height(); ++y) {
    const std::size_t sy = y < h ? y : 2 * (h - 1) - y;
    for (std::size_t x = 0; x < out.width(); ++x) {
      const std::size_t sx = x < w ? x : 2 * (w - 1) - x;
      std::copy_n(&in.at(sy, sx, 0), c, &out.at(y, x, 0));
    }
  }
  return out;
}

/// Copies the window [y0, y0+h) x [x0, x0+w).
template <typename T>
Tensor<T> crop_image(const Tensor<T>& in, std::size_t y0, std::size_t x0, std::size_t h,
                     std::size_t w) {
  if (y0 + h > in.height() || x0 + w > in.width()) {
    throw ShapeError("crop_image: window exceeds image " + shape_string(in.shape()));
  }
  const std::size_t c = in.channels();
  Tensor<T> out = Tensor<T>::image(h, w, c);
  for (std::size_t y = 0; y < h; ++y) {
    std::copy_n(&in.at(y0 + y, x0, 0), w * c, &out.at(y, 0, 0));
  }
  return out;
}

template <typename T>
void clamp_unit(Tensor<T>& t) {
  for (auto& v : t.values()) v = std::clamp(v, T{0}, T{1});
}

}  // namespace hern
