// SPDX-License-Identifier: Apache-2.0
//
// KAN-CID block: a channel-independent 7x7 depthwise branch followed by a
// channel-dependent KAN applied per pixel, merged by a 1x1 fusion over both
// branch outputs and added back onto the input.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dehaze/kan.hpp"
#include "dehaze/layers.hpp"

namespace dehaze {

struct KanCidConfig {
  int kernel = 7;
  std::vector<int> cd_grid_sizes{5, 8};  // one KAN layer per entry
  int order = 3;
  double range = 1.0;
};

template <class T>
class KanCidBlock {
 public:
  KanCidBlock() = default;
  KanCidBlock(int channels, const KanCidConfig& cfg, std::uint64_t seed) : channels_(channels) {
    if (channels <= 0) throw ShapeError("KanCidBlock: channels must be positive");
    Rng rng(seed);
    dw_ = Parameter<T>(Tensor<T>({channels, 1, cfg.kernel, cfg.kernel}));
    fill_uniform(dw_.value(), rng, 1.0 / cfg.kernel);
    std::vector<KanLayer<T>> layers;
    for (int g : cfg.cd_grid_sizes)
      layers.push_back(init_kan_layer<T>(channels, channels, KanInit{g, cfg.order, cfg.range}, rng.next()));
    cd_ = KanStack<T>(std::move(layers));
    fusion_ = Conv2d<T>(2 * channels, channels, 1, rng);
    fusion_.zero();
  }

  int channels() const { return channels_; }
  Parameter<T>& dw_kernel() { return dw_; }
  const Parameter<T>& dw_kernel() const { return dw_; }
  KanStack<T>& cd_stack() { return cd_; }
  const KanStack<T>& cd_stack() const { return cd_; }
  Conv2d<T>& fusion() { return fusion_; }
  const Conv2d<T>& fusion() const { return fusion_; }

  /// Replaces the channel-dependent stack; its widths must equal the channel count.
  void set_cd_stack(KanStack<T> stack) {
    if (!stack.empty() && (stack.n_in() != channels_ || stack.n_out() != channels_))
      throw ShapeError("KanCidBlock: CD stack must map " + std::to_string(channels_) + " -> " +
                       std::to_string(channels_) + " channels");
    cd_ = std::move(stack);
  }

  template <class F>
  void for_each_param(F&& fn, const std::string& prefix) {
    fn(join_name(prefix, "dw"), dw_);
    cd_.for_each_param(fn, join_name(prefix, "cd"));
    fusion_.for_each_param(fn, join_name(prefix, "fusion"));
  }

 private:
  int channels_ = 0;
  Parameter<T> dw_;
  KanStack<T> cd_;
  Conv2d<T> fusion_;
};

namespace detail {
template <class T>
void require_channels(const Var<T>& f, int c, const char* op) {
  require_rank(f.value(), 4, op);
  if (f.dim(1) != c)
    throw ShapeError(std::string(op) + ": expected " + std::to_string(c) + " channels, got " +
                     std::to_string(f.dim(1)));
}
}  // namespace detail

template <class T>
Var<T> channel_independent(const KanCidBlock<T>& block, const Var<T>& f) {
  detail::require_channels(f, block.channels(), "channel_independent");
  return depthwise_conv2d(f, block.dw_kernel().var());
}

template <class T>
Var<T> channel_dependent(const KanCidBlock<T>& block, const Var<T>& f_ci) {
  detail::require_channels(f_ci, block.channels(), "channel_dependent");
  return kan_stack_pointwise(block.cd_stack(), f_ci);
}

template <class T>
Var<T> kan_cid_forward(const KanCidBlock<T>& block, const Var<T>& f) {
  const Var<T> ci = channel_independent(block, f);
  const Var<T> cd = channel_dependent(block, ci);
  return add(f, block.fusion()(concat_channels<T>({ci, cd})));
}

}  // namespace dehaze
