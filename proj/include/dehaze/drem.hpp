// SPDX-License-Identifier: Apache-2.0
//
// Dense residual enhanced module: entry conv, two residual dense blocks with a
// global skip, and an exit conv whose 3-channel output is subtracted from the
// original image.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dehaze/layers.hpp"

namespace dehaze {

struct DremConfig {
  int width = 16;       // RDB carrier width
  int growth = 16;      // channels added per dense layer
  int dense_layers = 3;
  int blocks = 2;
};

template <class T>
class ResidualDenseBlock {
 public:
  ResidualDenseBlock() = default;
  ResidualDenseBlock(int channels, int growth, int layers, Rng& rng)
      : channels_(channels), growth_(growth) {
    for (int i = 0; i < layers; ++i) convs_.emplace_back(channels + i * growth, growth, 3, rng);
    local_fusion_ = Conv2d<T>(channels + layers * growth, channels, 1, rng);
  }

  int channels() const { return channels_; }
  int growth() const { return growth_; }
  /// Input width of dense layer i.
  int layer_input_width(std::size_t i) const { return convs_.at(i).in_channels(); }
  std::size_t dense_layers() const { return convs_.size(); }
  std::vector<Conv2d<T>>& convs() { return convs_; }
  const std::vector<Conv2d<T>>& convs() const { return convs_; }
  const Conv2d<T>& local_fusion() const { return local_fusion_; }
  Conv2d<T>& local_fusion() { return local_fusion_; }

  template <class F>
  void for_each_param(F&& fn, const std::string& prefix) {
    for (std::size_t i = 0; i < convs_.size(); ++i)
      convs_[i].for_each_param(fn, join_name(prefix, "dense" + std::to_string(i)));
    local_fusion_.for_each_param(fn, join_name(prefix, "fusion"));
  }

 private:
  int channels_ = 0;
  int growth_ = 0;
  std::vector<Conv2d<T>> convs_;
  Conv2d<T> local_fusion_;
};

template <class T>
Var<T> rdb_forward(const ResidualDenseBlock<T>& block, const Var<T>& f) {
  require_rank(f.value(), 4, "rdb_forward");
  if (f.dim(1) != block.channels())
    throw ShapeError("rdb_forward: expected " + std::to_string(block.channels()) +
                     " channels, got " + std::to_string(f.dim(1)));
  std::vector<Var<T>> features{f};
  for (const auto& conv : block.convs())
    features.push_back(leaky_relu(conv(concat_channels(features))));
  return add(f, block.local_fusion()(concat_channels(features)));
}

template <class T>
class DremModule {
 public:
  DremModule() = default;
  DremModule(int in_channels, const DremConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    entry_ = Conv2d<T>(in_channels, cfg.width, 3, rng);
    for (int b = 0; b < cfg.blocks; ++b) blocks_.emplace_back(cfg.width, cfg.growth, cfg.dense_layers, rng);
    exit_ = Conv2d<T>(cfg.width, 3, 3, rng);
    exit_.zero();
  }

  int in_channels() const { return entry_.in_channels(); }
  Conv2d<T>& entry() { return entry_; }
  const Conv2d<T>& entry() const { return entry_; }
  std::vector<ResidualDenseBlock<T>>& blocks() { return blocks_; }
  const std::vector<ResidualDenseBlock<T>>& blocks() const { return blocks_; }
  Conv2d<T>& exit() { return exit_; }
  const Conv2d<T>& exit() const { return exit_; }

  /// Predicted haze residual, before the subtraction.
  Var<T> residual(const Var<T>& features) const {
    const Var<T> x0 = leaky_relu(entry_(features));
    Var<T> x = x0;
    for (const auto& b : blocks_) x = rdb_forward(b, x);
    return exit_(add(x, x0));
  }

  template <class F>
  void for_each_param(F&& fn, const std::string& prefix) {
    entry_.for_each_param(fn, join_name(prefix, "entry"));
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].for_each_param(fn, join_name(prefix, "rdb" + std::to_string(i)));
    exit_.for_each_param(fn, join_name(prefix, "exit"));
  }

 private:
  Conv2d<T> entry_;
  std::vector<ResidualDenseBlock<T>> blocks_;
  Conv2d<T> exit_;
};

/// clamp(original - residual(features)) for features [N,C,H,W], original [N,3,H,W].
template <class T>
Var<T> drem_forward(const DremModule<T>& module, const Var<T>& features, const Var<T>& original) {
  require_rank(features.value(), 4, "drem_forward features");
  require_rank(original.value(), 4, "drem_forward original");
  if (features.dim(0) != original.dim(0) || features.dim(2) != original.dim(2) ||
      features.dim(3) != original.dim(3) || original.dim(1) != 3)
    throw ShapeError("drem_forward: features " + shape_string(features.shape()) +
                     " do not match original " + shape_string(original.shape()));
  return clamp01(sub(original, module.residual(features)));
}

}  // namespace dehaze
