#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mtvit/mat.hpp"

namespace mtvit {

// H x W x 3 image, channels innermost, values in [0,1].
template <typename T = float>
struct ImageTensor {
  int height = 0;
  int width = 0;
  std::vector<T> data;  // height*width*3, (y, x, c)

  ImageTensor() = default;
  ImageTensor(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, T(0)) {}

  T& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  const T& at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

template <typename T>
ImageTensor<T> bilinear_resize(const ImageTensor<T>& src, int out_h, int out_w) {
  ImageTensor<T> dst(out_h, out_w);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
        const double bot = (1.0 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
        dst.at(y, x, c) = static_cast<T>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return dst;
}

template <typename T>
ImageTensor<T> center_crop(const ImageTensor<T>& src, int out_h, int out_w) {
  ImageTensor<T> dst(out_h, out_w);
  const int oy = (src.height - out_h) / 2;
  const int ox = (src.width - out_w) / 2;
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x)
      for (int c = 0; c < 3; ++c) dst.at(y, x, c) = src.at(y + oy, x + ox, c);
  return dst;
}

// Resize so the image covers the target box, then center-crop to it.
template <typename T>
ImageTensor<T> fit_to(const ImageTensor<T>& src, int out_h, int out_w) {
  if (src.height == out_h && src.width == out_w) return src;
  const double scale =
      std::max(static_cast<double>(out_h) / src.height, static_cast<double>(out_w) / src.width);
  const int rh = std::max(out_h, static_cast<int>(std::lround(src.height * scale)));
  const int rw = std::max(out_w, static_cast<int>(std::lround(src.width * scale)));
  return center_crop(bilinear_resize(src, rh, rw), out_h, out_w);
}

template <typename T>
ImageTensor<T> hflip(const ImageTensor<T>& src) {
  ImageTensor<T> dst(src.height, src.width);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c) dst.at(y, x, c) = src.at(y, src.width - 1 - x, c);
  return dst;
}

}  // namespace mtvit
