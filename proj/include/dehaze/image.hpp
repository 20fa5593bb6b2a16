// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "dehaze/errors.hpp"

namespace dehaze {

/// Single-channel H x W array of doubles, row-major.
class Plane {
 public:
  Plane() = default;
  Plane(int height, int width, double fill = 0.0)
      : height_(height), width_(width) {
    if (height < 0 || width < 0) throw ShapeError("Plane: negative extent");
    data_.assign(static_cast<std::size_t>(height) * width, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double operator()(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Plane& o) const { return height_ == o.height_ && width_ == o.width_; }
  friend bool operator==(const Plane&, const Plane&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// H x W x 3 RGB image with interleaved channels and values nominally in [0,1].
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, double fill = 0.0) : height_(height), width_(width) {
    if (height < 0 || width < 0) throw ShapeError("Image: negative extent");
    data_.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(int y, int x, int c) { return data_[index(y, x, c)]; }
  double operator()(int y, int x, int c) const { return data_[index(y, x, c)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Image& o) const { return height_ == o.height_ && width_ == o.width_; }
  bool same_extent(const Plane& p) const { return height_ == p.height() && width_ == p.width(); }

  void clamp01() {
    for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

inline std::string shape_string(const Image& img) {
  return std::to_string(img.height()) + "x" + std::to_string(img.width()) + "x3";
}

inline std::string shape_string(const Plane& p) {
  return std::to_string(p.height()) + "x" + std::to_string(p.width());
}

}  // namespace dehaze
