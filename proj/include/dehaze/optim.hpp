// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dehaze/autograd.hpp"

namespace dehaze {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  Tensor<T> m;
  Tensor<T> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update of `params` in place.
template <class T>
void adam_step(Tensor<T>& params, const Tensor<T>& grads, AdamState<T>& state, const AdamHyper& h) {
  if (!grads.same_shape(params)) throw ShapeError("adam_step: gradient shape differs from parameters");
  if (state.step == 0 && state.m.empty() && !params.empty()) {
    state.m = Tensor<T>(params.shape());
    state.v = Tensor<T>(params.shape());
  }
  if (!state.m.same_shape(params) || !state.v.same_shape(params))
    throw ShapeError("adam_step: optimizer state shape differs from parameters");
  ++state.step;
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(h.beta1, static_cast<double>(state.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(h.beta2, static_cast<double>(state.step)));
  const T lr = static_cast<T>(h.lr), eps = static_cast<T>(h.eps);
  for (std::size_t i = 0; i < params.numel(); ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const T mhat = state.m[i] / c1;
    const T vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

/// Adam over a fixed parameter list. Parameters without an accumulated
/// gradient are updated with a zero gradient.
template <class T>
class Adam {
 public:
  Adam(ParamList<T> params, AdamHyper hyper) : params_(std::move(params)), hyper_(hyper) {
    states_.resize(params_.size());
  }

  void zero_grad() { zero_grads(params_); }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter<T>& p = *params_[i].param;
      adam_step(p.value(), p.grad(), states_[i], hyper_);
    }
  }

  const AdamHyper& hyper() const { return hyper_; }
  void set_lr(double lr) { hyper_.lr = lr; }
  const ParamList<T>& params() const { return params_; }
  const std::vector<AdamState<T>>& states() const { return states_; }

 private:
  ParamList<T> params_;
  AdamHyper hyper_;
  std::vector<AdamState<T>> states_;
};

}  // namespace dehaze
