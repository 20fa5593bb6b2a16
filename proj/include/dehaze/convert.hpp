// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "dehaze/image.hpp"
#include "dehaze/tensor.hpp"

namespace dehaze {

/// Stacks equally sized images into an [N, 3, H, W] tensor.
template <class T>
Tensor<T> images_to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const int h = images[0].height(), w = images[0].width();
  Tensor<T> out({static_cast<int>(images.size()), 3, h, w});
  for (int n = 0; n < static_cast<int>(images.size()); ++n) {
    const Image& img = images[n];
    if (img.height() != h || img.width() != w) throw ShapeError("images_to_tensor: mixed sizes in batch");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) out.at(n, c, y, x) = static_cast<T>(img(y, x, c));
  }
  return out;
}

template <class T>
Tensor<T> image_to_tensor(const Image& image) {
  return images_to_tensor<T>(std::vector<Image>{image});
}

template <class T>
Image tensor_to_image(const Tensor<T>& t, int n = 0) {
  require_rank(t, 4, "tensor_to_image");
  if (t.dim(1) != 3) throw ShapeError("tensor_to_image: expected 3 channels");
  Image img(t.dim(2), t.dim(3));
  for (int y = 0; y < t.dim(2); ++y)
    for (int x = 0; x < t.dim(3); ++x)
      for (int c = 0; c < 3; ++c) img(y, x, c) = static_cast<double>(t.at(n, c, y, x));
  return img;
}

template <class T>
Plane tensor_to_plane(const Tensor<T>& t, int n = 0, int c = 0) {
  require_rank(t, 4, "tensor_to_plane");
  Plane p(t.dim(2), t.dim(3));
  for (int y = 0; y < t.dim(2); ++y)
    for (int x = 0; x < t.dim(3); ++x) p(y, x) = static_cast<double>(t.at(n, c, y, x));
  return p;
}

template <class T>
Tensor<T> plane_to_tensor(const Plane& p) {
  Tensor<T> t({1, 1, p.height(), p.width()});
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x) t.at(0, 0, y, x) = static_cast<T>(p(y, x));
  return t;
}

}  // namespace dehaze
