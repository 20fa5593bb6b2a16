// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "dehaze/errors.hpp"
#include "dehaze/image.hpp"

namespace dehaze {

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shapes differ (" + shape_string(a) + " vs " + shape_string(b) + ")");
}

inline double mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return a.size() ? s / static_cast<double>(a.size()) : 0.0;
}

/// Peak-1 PSNR in dB; +infinity for identical images.
inline double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    g[i] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Separable "valid" filtering of one channel.
inline std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& g) {
  const int k = static_cast<int>(g.size());
  const int ow = w - k + 1, oh = h - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += g[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += g[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace detail

/// Gaussian-window SSIM averaged over all valid windows and the three channels.
inline double ssim(const Image& a, const Image& b, const SsimOptions& opt = {}) {
  require_same_shape(a, b, "ssim");
  const int h = a.height(), w = a.width();
  if (h < opt.window || w < opt.window)
    throw DomainError("ssim: image " + shape_string(a) + " is smaller than the " +
                      std::to_string(opt.window) + "x" + std::to_string(opt.window) + " window");
  const auto g = detail::gaussian_window(opt.window, opt.sigma);
  const double c1 = (opt.k1 * opt.peak) * (opt.k1 * opt.peak);
  const double c2 = (opt.k2 * opt.peak) * (opt.k2 * opt.peak);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  double total = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = a[i * 3 + c];
      y[i] = b[i * 3 + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = detail::filter_valid(x, h, w, g);
    const auto my = detail::filter_valid(y, h, w, g);
    const auto sxx = detail::filter_valid(xx, h, w, g);
    const auto syy = detail::filter_valid(yy, h, w, g);
    const auto sxy = detail::filter_valid(xy, h, w, g);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    count += mx.size();
  }
  return total / static_cast<double>(count);
}

}  // namespace dehaze
