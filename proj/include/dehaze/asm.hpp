// SPDX-License-Identifier: Apache-2.0
//
// Atmospheric scattering model: I = J * t + A * (1 - t), t = exp(-beta * d).
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <utility>

#include "dehaze/errors.hpp"
#include "dehaze/image.hpp"
#include "dehaze/rng.hpp"

namespace dehaze {

using Rgb = std::array<double, 3>;

/// Inclusive real interval used for sampling ranges.
struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

inline constexpr double kDefaultTFloor = 0.05;
inline constexpr double kMaxSyntheticDepth = 3.0;

/// Elementwise exp(-beta * depth). All outputs lie in (0, 1] as long as
/// beta * depth stays below ~745; larger products are floored at the
/// smallest positive double.
inline Plane transmission_from_depth(const Plane& depth, double beta) {
  if (!(beta >= 0.0)) throw DomainError("transmission_from_depth: beta must be >= 0");
  Plane t(depth.height(), depth.width());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (!(depth[i] >= 0.0)) {
      throw DomainError("transmission_from_depth: depth entry " + std::to_string(i) +
                        " is negative");
    }
    t[i] = std::max(std::exp(-beta * depth[i]), std::numeric_limits<double>::min());
  }
  return t;
}

/// Physics bundle for one image. `depth` may be empty when the transmission
/// was produced directly (e.g. predicted by a network).
struct AsmParams {
  Rgb airlight{1.0, 1.0, 1.0};
  double beta = 0.0;
  Plane depth;
  Plane transmission;

  static AsmParams from_depth(const Rgb& airlight, double beta, Plane depth) {
    AsmParams p;
    p.airlight = airlight;
    p.beta = beta;
    p.transmission = transmission_from_depth(depth, beta);
    p.depth = std::move(depth);
    return p;
  }

  static AsmParams from_transmission(const Rgb& airlight, Plane transmission) {
    AsmParams p;
    p.airlight = airlight;
    p.beta = std::numeric_limits<double>::quiet_NaN();
    p.transmission = std::move(transmission);
    return p;
  }
};

namespace detail {

inline void check_params(const Image& img, const AsmParams& p, const char* op) {
  if (!img.same_extent(p.transmission)) {
    throw ShapeError(std::string(op) + ": transmission " + shape_string(p.transmission) +
                     " does not match image " + shape_string(img));
  }
  for (double a : p.airlight) {
    if (!(a >= 0.0 && a <= 1.0)) throw DomainError(std::string(op) + ": airlight outside [0,1]");
  }
}

}  // namespace detail

/// Hazy image before clamping. Exposed so the convexity property can be
/// checked on the raw model output.
inline Image synthesize_haze_unclamped(const Image& clean, const AsmParams& p) {
  detail::check_params(clean, p, "synthesize_haze");
  Image out(clean.height(), clean.width());
  for (std::size_t px = 0; px < clean.pixel_count(); ++px) {
    const double t = p.transmission[px];
    for (int c = 0; c < 3; ++c) {
      const std::size_t i = px * 3 + c;
      out[i] = clean[i] * t + p.airlight[c] * (1.0 - t);
    }
  }
  return out;
}

inline Image synthesize_haze(const Image& clean, const AsmParams& p) {
  Image out = synthesize_haze_unclamped(clean, p);
  out.clamp01();
  return out;
}

/// Algebraic inverse of the scattering model with the transmission floored at t_floor.
inline Image invert_asm(const Image& hazy, const AsmParams& p, double t_floor = kDefaultTFloor) {
  if (!(t_floor > 0.0 && t_floor < 1.0)) throw DomainError("invert_asm: t_floor must lie in (0,1)");
  detail::check_params(hazy, p, "invert_asm");
  Image out(hazy.height(), hazy.width());
  for (std::size_t px = 0; px < hazy.pixel_count(); ++px) {
    const double t = std::max(p.transmission[px], t_floor);
    for (int c = 0; c < 3; ++c) {
      const std::size_t i = px * 3 + c;
      out[i] = (hazy[i] - p.airlight[c] * (1.0 - t)) / t;
    }
  }
  out.clamp01();
  return out;
}

/// Smooth synthetic depth: three planar ramps with random orientation plus
/// bilinearly upsampled coarse noise, normalised to [0, max_depth].
inline Plane random_depth_field(int height, int width, Rng& rng,
                                double max_depth = kMaxSyntheticDepth) {
  Plane d(height, width);
  for (int r = 0; r < 3; ++r) {
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double weight = rng.uniform(0.5, 1.0);
    const double cx = std::cos(theta), sy = std::sin(theta);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        d(y, x) += weight * (cx * (x + 0.5) / width + sy * (y + 0.5) / height);
  }

  const int gh = height / 8 + 2, gw = width / 8 + 2;
  Plane coarse(gh, gw);
  for (double& v : coarse.data()) v = rng.normal();
  for (int y = 0; y < height; ++y) {
    const double fy = (y + 0.5) / height * (gh - 1);
    const int y0 = std::min(static_cast<int>(fy), gh - 2);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = (x + 0.5) / width * (gw - 1);
      const int x0 = std::min(static_cast<int>(fx), gw - 2);
      const double wx = fx - x0;
      const double n = (1 - wy) * ((1 - wx) * coarse(y0, x0) + wx * coarse(y0, x0 + 1)) +
                       wy * ((1 - wx) * coarse(y0 + 1, x0) + wx * coarse(y0 + 1, x0 + 1));
      d(y, x) += 0.5 * n;
    }
  }

  const auto [lo, hi] = std::minmax_element(d.data().begin(), d.data().end());
  const double mn = *lo, span = *hi - *lo;
  for (double& v : d.data()) v = span > 0.0 ? (v - mn) / span * max_depth : 0.0;
  return d;
}

inline AsmParams random_asm_params(int height, int width, std::uint64_t seed, Range beta_range,
                                   Range a_range) {
  if (!(beta_range.lo <= beta_range.hi) || beta_range.lo < 0.0) {
    throw DomainError("random_asm_params: beta range must be a nonempty subset of [0, inf)");
  }
  if (!(a_range.lo <= a_range.hi) || a_range.lo < 0.0 || a_range.hi > 1.0) {
    throw DomainError("random_asm_params: airlight range must be a nonempty subset of [0, 1]");
  }
  if (height < 1 || width < 1) throw ShapeError("random_asm_params: empty extent");
  Rng rng(seed);
  Plane depth = random_depth_field(height, width, rng);
  const double beta = rng.uniform(beta_range.lo, beta_range.hi);
  Rgb a;
  for (double& c : a) c = rng.uniform(a_range.lo, a_range.hi);
  return AsmParams::from_depth(a, beta, std::move(depth));
}

}  // namespace dehaze
