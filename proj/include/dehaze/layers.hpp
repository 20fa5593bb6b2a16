// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "dehaze/autograd.hpp"
#include "dehaze/ops.hpp"
#include "dehaze/rng.hpp"

namespace dehaze {

template <class T>
void fill_uniform(Tensor<T>& t, Rng& rng, double bound) {
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

/// Square convolution with replicate padding; weights start at
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, Rng& rng, int stride = 1, bool bias = true)
      : stride_(stride), has_bias_(bias) {
    if (in_channels <= 0 || out_channels <= 0) throw ShapeError("Conv2d: channel counts must be positive");
    weight_ = Parameter<T>(Tensor<T>({out_channels, in_channels, kernel, kernel}));
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
    fill_uniform(weight_.value(), rng, bound);
    if (bias) {
      bias_ = Parameter<T>(Tensor<T>({out_channels}));
      fill_uniform(bias_.value(), rng, bound);
    }
  }

  Var<T> operator()(const Var<T>& x) const {
    return conv2d(x, weight_.var(), has_bias_ ? bias_.var() : Var<T>(), stride_);
  }

  int in_channels() const { return weight_.value().dim(1); }
  int out_channels() const { return weight_.value().dim(0); }
  int kernel() const { return weight_.value().dim(2); }
  bool has_bias() const { return has_bias_; }

  Parameter<T>& weight() { return weight_; }
  const Parameter<T>& weight() const { return weight_; }
  Parameter<T>& bias() { return bias_; }

  void zero() {
    weight_.value().set_zero();
    if (has_bias_) bias_.value().set_zero();
  }

  template <class F>
  void for_each_param(F&& fn, const std::string& prefix) {
    fn(join_name(prefix, "weight"), weight_);
    if (has_bias_) fn(join_name(prefix, "bias"), bias_);
  }

 private:
  Parameter<T> weight_;
  Parameter<T> bias_;
  int stride_ = 1;
  bool has_bias_ = true;
};

/// Fully connected layer on [N, in] rows.
template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng) {
    weight_ = Parameter<T>(Tensor<T>({out, in}));
    bias_ = Parameter<T>(Tensor<T>({out}));
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    fill_uniform(weight_.value(), rng, bound);
    fill_uniform(bias_.value(), rng, bound);
  }

  Var<T> operator()(const Var<T>& x) const { return linear(x, weight_.var(), bias_.var()); }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

  template <class F>
  void for_each_param(F&& fn, const std::string& prefix) {
    fn(join_name(prefix, "weight"), weight_);
    fn(join_name(prefix, "bias"), bias_);
  }

 private:
  Parameter<T> weight_;
  Parameter<T> bias_;
};

/// 1x1 bias-free channel adapter: C_in x H x W -> C x H x W.
template <class T>
class ChnMapper {
 public:
  ChnMapper() = default;
  ChnMapper(int in_channels, int out_channels, Rng& rng)
      : conv_(in_channels, out_channels, 1, rng, 1, /*bias=*/false) {}

  /// Square mapper whose weight is the identity matrix.
  static ChnMapper identity(int channels) {
    Rng rng(0);
    ChnMapper m(channels, channels, rng);
    m.conv_.zero();
    for (int c = 0; c < channels; ++c) m.conv_.weight().value().at(c, c, 0, 0) = T(1);
    return m;
  }

  Var<T> operator()(const Var<T>& x) const { return conv_(x); }
  int in_channels() const { return conv_.in_channels(); }
  int out_channels() const { return conv_.out_channels(); }

  template <class F>
  void for_each_param(F&& fn, const std::string& prefix) {
    conv_.for_each_param(fn, prefix);
  }

 private:
  Conv2d<T> conv_;
};

template <class T>
Var<T> chn_mapper(const ChnMapper<T>& mapper, const Var<T>& x) {
  return mapper(x);
}

}  // namespace dehaze
