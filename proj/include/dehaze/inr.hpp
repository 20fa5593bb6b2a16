// SPDX-License-Identifier: Apache-2.0
//
// Implicit neural representation pieces: pixel-centre coordinate grids,
// sinusoidal positional encoding, neighbourhood unfolding and a per-pixel
// MLP decoder from (features, encoded coordinates) to RGB.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dehaze/convert.hpp"
#include "dehaze/layers.hpp"
#include "dehaze/optim.hpp"

namespace dehaze {

/// Normalised (x, y) pixel centres in [-1, 1]^2, row-major.
struct CoordinateGrid {
  int height = 0;
  int width = 0;
  std::vector<std::array<double, 2>> coords;

  const std::array<double, 2>& at(int y, int x) const {
    return coords[static_cast<std::size_t>(y) * width + x];
  }
};

inline CoordinateGrid make_grid(int height, int width) {
  if (height < 1 || width < 1) throw DomainError("make_grid: extent must be positive");
  CoordinateGrid g{height, width, {}};
  g.coords.reserve(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      g.coords.push_back({(2.0 * x + 1.0) / width - 1.0, (2.0 * y + 1.0) / height - 1.0});
  return g;
}

/// Per coordinate: [sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x),
/// cos(2^(L-1) pi x)], concatenated over the coordinates of `point`.
inline std::vector<double> positional_encode(std::span<const double> point, int frequencies) {
  if (frequencies < 1) throw DomainError("positional_encode: L must be >= 1");
  std::vector<double> out;
  out.reserve(point.size() * 2 * frequencies);
  for (double v : point)
    for (int k = 0; k < frequencies; ++k) {
      const double a = std::ldexp(std::numbers::pi, k) * v;
      out.push_back(std::sin(a));
      out.push_back(std::cos(a));
    }
  return out;
}

inline constexpr int encoded_width(int coordinate_width, int frequencies) {
  return 2 * frequencies * coordinate_width;
}

/// Encoded grid as constant planes [1, 4L, H, W].
template <class T>
Tensor<T> encode_grid(const CoordinateGrid& grid, int frequencies) {
  const int width = encoded_width(2, frequencies);
  Tensor<T> out({1, width, grid.height, grid.width});
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x) {
      const auto& c = grid.at(y, x);
      const auto e = positional_encode(c, frequencies);
      for (int k = 0; k < width; ++k) out.at(0, k, y, x) = static_cast<T>(e[k]);
    }
  return out;
}

/// Repeats a [1, C, H, W] constant across a batch of n.
template <class T>
Tensor<T> repeat_batch(const Tensor<T>& t, int n) {
  Tensor<T> out({n, t.dim(1), t.dim(2), t.dim(3)});
  for (int i = 0; i < n; ++i) std::copy(t.values().begin(), t.values().end(), &out.at(i, 0, 0, 0));
  return out;
}

struct InrConfig {
  int frequencies = 4;
  int unfold_radius = 1;
  int hidden_width = 64;
  int hidden_layers = 4;
};

/// Coordinate-conditioned MLP applied independently at every pixel.
template <class T>
class InrDecoder {
 public:
  InrDecoder() = default;
  /// feature_channels counts channels before unfolding; 0 means coordinates only.
  InrDecoder(int feature_channels, const InrConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), feature_channels_(feature_channels) {
    const int side = 2 * cfg.unfold_radius + 1;
    feature_width_ = feature_channels * side * side;
    Rng rng(seed);
    int w = in_width();
    for (int i = 0; i < cfg.hidden_layers; ++i) {
      layers_.emplace_back(w, cfg.hidden_width, 1, rng);
      w = cfg.hidden_width;
    }
    layers_.emplace_back(w, 3, 1, rng);
  }

  const InrConfig& config() const { return cfg_; }
  int feature_channels() const { return feature_channels_; }
  /// Width of E' (after unfolding).
  int feature_width() const { return feature_width_; }
  int in_width() const { return feature_width_ + encoded_width(2, cfg_.frequencies); }
  std::vector<Conv2d<T>>& layers() { return layers_; }
  const std::vector<Conv2d<T>>& layers() const { return layers_; }

  template <class F>
  void for_each_param(F&& fn, const std::string& prefix) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].for_each_param(fn, join_name(prefix, "mlp" + std::to_string(i)));
  }

 private:
  InrConfig cfg_;
  int feature_channels_ = 0;
  int feature_width_ = 0;
  std::vector<Conv2d<T>> layers_;
};

/// Decodes unfolded features E' [N, C', H, W] and encoded coordinates
/// X' [N, 4L, H, W] into an [N, 3, H, W] image in (0, 1). E' may be an empty
/// Var when the decoder has no feature input.
template <class T>
Var<T> inr_decode(const InrDecoder<T>& decoder, const Var<T>& features, const Var<T>& encoded) {
  const int c_feat = features ? features.dim(1) : 0;
  if (c_feat + encoded.dim(1) != decoder.in_width())
    throw ShapeError("inr_decode: decoder expects " + std::to_string(decoder.in_width()) +
                     " input channels, got " + std::to_string(c_feat) + " + " +
                     std::to_string(encoded.dim(1)));
  Var<T> h = c_feat > 0 ? concat_channels<T>({features, encoded}) : encoded;
  const auto& layers = decoder.layers();
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) h = silu(layers[i](h));
  return sigmoid(layers.back()(h));
}

/// Unfolds raw features E [N, C, H, W] and decodes them with the batch's
/// coordinate encoding.
template <class T>
Var<T> inr_decode_features(const InrDecoder<T>& decoder, const Var<T>& raw_features) {
  const int n = raw_features.dim(0), h = raw_features.dim(2), w = raw_features.dim(3);
  const Var<T> unfolded = feature_unfold(raw_features, decoder.config().unfold_radius);
  const Var<T> enc(repeat_batch(encode_grid<T>(make_grid(h, w), decoder.config().frequencies), n));
  return inr_decode(decoder, unfolded, enc);
}

inline constexpr double kDefaultFitLr = 1e-2;

template <class T>
struct FitResult {
  InrDecoder<T> decoder;
  Image reconstruction;
  std::vector<double> losses;  // one mean squared error per iteration, before the update
};

/// Fits a coordinate-only decoder to `target` with Adam on the mean squared error.
template <class T = float>
FitResult<T> fit_image(const Image& target, const InrConfig& cfg, int iterations, double lr,
                       std::uint64_t seed) {
  if (iterations < 1) throw DomainError("fit_image: iterations must be >= 1");
  InrDecoder<T> decoder(0, cfg, seed);
  const Var<T> enc(encode_grid<T>(make_grid(target.height(), target.width()), cfg.frequencies));
  const Var<T> tgt(image_to_tensor<T>(target));
  auto params = parameters_of<T>(decoder);
  Adam<T> opt(params, AdamHyper{lr, 0.9, 0.999, 1e-8});
  FitResult<T> result;
  result.losses.reserve(static_cast<std::size_t>(iterations));
  for (int it = 0; it < iterations; ++it) {
    // Cosine decay to zero damps the late Adam oscillations.
    opt.set_lr(0.5 * lr * (1.0 + std::cos(std::numbers::pi * it / iterations)));
    opt.zero_grad();
    const Var<T> loss = mse_loss(inr_decode(decoder, Var<T>(), enc), tgt);
    result.losses.push_back(static_cast<double>(loss.value()[0]));
    backward(loss);
    opt.step();
  }
  {
    NoGradGuard ng;
    result.reconstruction = tensor_to_image(inr_decode(decoder, Var<T>(), enc).value());
  }
  result.decoder = std::move(decoder);
  return result;
}

}  // namespace dehaze
