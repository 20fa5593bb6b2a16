// SPDX-License-Identifier: Apache-2.0
//
// Dehazing generator:
//
//   hazy -> 3-scale encoder -> ChnMapper per scale -> KAN-CID per scale
//        -> coarse-to-fine fusion -> four-step refinement (I_refined)
//        -> IDRM decode (I_enhanced) -> DREM: hazy - residual = clean
//
// A small head on the fused features predicts the transmission map and the
// global airlight used by the scattering-model cycle. Each of KAN-CID, IDRM
// and DREM can be switched off; the bypass is an identity path and the
// module's parameters are not created.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dehaze/asm.hpp"
#include "dehaze/drem.hpp"
#include "dehaze/inr.hpp"
#include "dehaze/kan_cid.hpp"
#include "dehaze/layers.hpp"

namespace dehaze {

inline constexpr int kMinExtent = 8;

struct GeneratorConfig {
  std::array<int, 3> encoder_widths{16, 32, 48};
  int channels = 48;  // common width after the ChnMappers
  KanCidConfig kan_cid;
  int refine_width = 24;
  InrConfig inr;
  DremConfig drem;
  int asm_head_width = 16;
  bool use_kan_cid = true;
  bool use_idrm = true;
  bool use_drem = true;
  std::uint64_t seed = 0;
};

template <class T>
struct Pyramid {
  std::array<Var<T>, 3> levels;  // full, 1/2, 1/4 resolution
};

template <class T>
struct GeneratorOutput {
  Var<T> clean;         // [N, 3, H, W] in [0, 1]
  Var<T> transmission;  // [N, 1, H, W] in (0, 1)
  Var<T> airlight;      // [N, 3] in (0, 1)
};

/// Throws ShapeError unless the extent is usable by the 3-scale encoder.
inline void check_generator_extent(int height, int width) {
  if (height < kMinExtent || width < kMinExtent)
    throw ShapeError("generator input must be at least 8x8, got " + std::to_string(height) + "x" +
                     std::to_string(width));
  if (height % 4 != 0 || width % 4 != 0)
    throw ShapeError("generator input " + std::to_string(height) + "x" + std::to_string(width) +
                     " must be divisible by 4; pad by " + std::to_string((4 - height % 4) % 4) +
                     " rows and " + std::to_string((4 - width % 4) % 4) + " columns");
}

template <class T>
class DehazeGenerator {
 public:
  DehazeGenerator() = default;
  explicit DehazeGenerator(const GeneratorConfig& cfg) : cfg_(cfg) {
    Rng root(cfg.seed);
    auto sub = [&](std::uint64_t salt) { return root.fork(salt); };
    const auto& ew = cfg.encoder_widths;
    const int c = cfg.channels;
    {
      Rng r = sub(1);
      encoder_ = {Conv2d<T>(3, ew[0], 3, r),         Conv2d<T>(ew[0], ew[0], 3, r),
                  Conv2d<T>(ew[0], ew[1], 3, r, 2),  Conv2d<T>(ew[1], ew[1], 3, r),
                  Conv2d<T>(ew[1], ew[2], 3, r, 2),  Conv2d<T>(ew[2], ew[2], 3, r)};
    }
    {
      Rng r = sub(2);
      for (int s = 0; s < 3; ++s) mappers_[s] = ChnMapper<T>(ew[s], c, r);
    }
    {
      Rng r = sub(3);
      if (cfg.use_kan_cid)
        for (int s = 0; s < 3; ++s) kan_cid_.emplace_back(c, cfg.kan_cid, r.next());
    }
    {
      Rng r = sub(4);
      fuse_half_ = Conv2d<T>(2 * c, c, 3, r);
      fuse_full_ = Conv2d<T>(2 * c, c, 3, r);
    }
    {
      Rng r = sub(5);
      const int rw = cfg.refine_width;
      refine_ = {Conv2d<T>(c, rw, 3, r), Conv2d<T>(rw, rw, 3, r), Conv2d<T>(rw, rw, 3, r),
                 Conv2d<T>(rw, 3, 3, r)};
    }
    if (cfg.use_idrm) idrm_ = InrDecoder<T>(3, cfg.inr, sub(6).next());
    if (cfg.use_drem) drem_ = DremModule<T>(c + 3, cfg.drem, sub(7).next());
    {
      Rng r = sub(8);
      t_head_ = {Conv2d<T>(c, cfg.asm_head_width, 3, r), Conv2d<T>(cfg.asm_head_width, 1, 1, r)};
      a_head_ = Linear<T>(c, 3, r);
    }
  }

  const GeneratorConfig& config() const { return cfg_; }

  Pyramid<T> extract_multiscale(const Var<T>& image) const {
    require_rank(image.value(), 4, "extract_multiscale");
    if (image.dim(1) != 3) throw ShapeError("extract_multiscale: expected 3 input channels");
    check_generator_extent(image.dim(2), image.dim(3));
    Pyramid<T> p;
    Var<T> x = image;
    for (int s = 0; s < 3; ++s) {
      x = leaky_relu(encoder_[2 * s](x));
      x = leaky_relu(encoder_[2 * s + 1](x));
      p.levels[s] = x;
    }
    return p;
  }

  /// ChnMappers followed (when enabled) by the per-scale KAN-CID blocks.
  Pyramid<T> enhance(const Pyramid<T>& p) const {
    Pyramid<T> out;
    for (int s = 0; s < 3; ++s) {
      out.levels[s] = chn_mapper(mappers_[s], p.levels[s]);
      if (cfg_.use_kan_cid) out.levels[s] = kan_cid_forward(kan_cid_[s], out.levels[s]);
    }
    return out;
  }

  /// Coarse-to-fine: upsample, concatenate with the next finer level, 3x3 conv.
  Var<T> fuse_features(const Pyramid<T>& p) const {
    const int c = cfg_.channels;
    for (int s = 0; s < 3; ++s) {
      const auto& v = p.levels[s];
      require_rank(v.value(), 4, "fuse_features");
      if (v.dim(1) != c) throw ShapeError("fuse_features: level " + std::to_string(s) + " width");
    }
    const auto& full = p.levels[0].shape();
    for (int s = 1; s < 3; ++s) {
      const auto& lv = p.levels[s].shape();
      if (lv[0] != full[0] || lv[2] * (1 << s) != full[2] || lv[3] * (1 << s) != full[3])
        throw ShapeError("fuse_features: level " + std::to_string(s) + " has extent " +
                         shape_string(lv) + ", inconsistent with " + shape_string(full));
    }
    const Var<T> half = leaky_relu(fuse_half_(concat_channels<T>({upsample2x(p.levels[2]), p.levels[1]})));
    return leaky_relu(fuse_full_(concat_channels<T>({upsample2x(half), p.levels[0]})));
  }

  /// Four 3x3 stages down to a 3-channel image in (0, 1).
  Var<T> refine(const Var<T>& fused) const {
    Var<T> x = fused;
    for (std::size_t i = 0; i + 1 < refine_.size(); ++i) x = leaky_relu(refine_[i](x));
    return sigmoid(refine_.back()(x));
  }

  std::pair<Var<T>, Var<T>> asm_head(const Var<T>& fused) const {
    const Var<T> t = sigmoid_range(t_head_[1](leaky_relu(t_head_[0](fused))), T(0.001), T(0.999));
    const Var<T> a = sigmoid(a_head_(global_avg_pool(fused)));
    return {t, a};
  }

  GeneratorOutput<T> forward(const Var<T>& hazy) const {
    const Var<T> fused = fuse_features(enhance(extract_multiscale(hazy)));
    auto [t, a] = asm_head(fused);
    const Var<T> refined = refine(fused);
    const Var<T> enhanced = cfg_.use_idrm ? inr_decode_features(idrm_, refined) : refined;
    const Var<T> clean =
        cfg_.use_drem ? drem_forward(drem_, concat_channels<T>({fused, enhanced}), hazy) : enhanced;
    return {clean, t, a};
  }

  template <class F>
  void for_each_param(F&& fn, const std::string& prefix = "") {
    for (std::size_t i = 0; i < encoder_.size(); ++i)
      encoder_[i].for_each_param(
          fn, join_name(prefix, "encoder.s" + std::to_string(i / 2) + ".conv" + std::to_string(i % 2)));
    for (int s = 0; s < 3; ++s) mappers_[s].for_each_param(fn, join_name(prefix, "mapper.s" + std::to_string(s)));
    for (std::size_t s = 0; s < kan_cid_.size(); ++s)
      kan_cid_[s].for_each_param(fn, join_name(prefix, "kan_cid.s" + std::to_string(s)));
    fuse_half_.for_each_param(fn, join_name(prefix, "fusion.half"));
    fuse_full_.for_each_param(fn, join_name(prefix, "fusion.full"));
    for (std::size_t i = 0; i < refine_.size(); ++i)
      refine_[i].for_each_param(fn, join_name(prefix, "refine.conv" + std::to_string(i)));
    if (cfg_.use_idrm) idrm_.for_each_param(fn, join_name(prefix, "idrm"));
    if (cfg_.use_drem) drem_.for_each_param(fn, join_name(prefix, "drem"));
    t_head_[0].for_each_param(fn, join_name(prefix, "asm_head.t0"));
    t_head_[1].for_each_param(fn, join_name(prefix, "asm_head.t1"));
    a_head_.for_each_param(fn, join_name(prefix, "asm_head.a"));
  }

  std::vector<Conv2d<T>>& encoder() { return encoder_; }
  std::array<ChnMapper<T>, 3>& mappers() { return mappers_; }
  std::vector<KanCidBlock<T>>& kan_cid_blocks() { return kan_cid_; }
  InrDecoder<T>& idrm() { return idrm_; }
  DremModule<T>& drem() { return drem_; }

 private:
  GeneratorConfig cfg_;
  std::vector<Conv2d<T>> encoder_;
  std::array<ChnMapper<T>, 3> mappers_;
  std::vector<KanCidBlock<T>> kan_cid_;
  Conv2d<T> fuse_half_;
  Conv2d<T> fuse_full_;
  std::vector<Conv2d<T>> refine_;
  InrDecoder<T> idrm_;
  DremModule<T> drem_;
  std::vector<Conv2d<T>> t_head_;
  Linear<T> a_head_;
};

template <class T>
Pyramid<T> extract_multiscale(const DehazeGenerator<T>& gen, const Var<T>& image) {
  return gen.extract_multiscale(image);
}

template <class T>
Var<T> fuse_features(const DehazeGenerator<T>& gen, const Pyramid<T>& pyramid) {
  return gen.fuse_features(pyramid);
}

/// Result of dehazing one image.
struct DehazeResult {
  Image clean;
  Plane transmission;
  Rgb airlight{};
};

template <class T>
DehazeResult dehaze_forward(const DehazeGenerator<T>& gen, const Image& hazy) {
  NoGradGuard ng;
  check_generator_extent(hazy.height(), hazy.width());
  const auto out = gen.forward(Var<T>(image_to_tensor<T>(hazy)));
  DehazeResult r;
  r.clean = tensor_to_image(out.clean.value());
  r.transmission = tensor_to_plane(out.transmission.value());
  for (int c = 0; c < 3; ++c) r.airlight[c] = static_cast<double>(out.airlight.value().at(0, c));
  return r;
}

/// Replicate-pads to an extent the generator accepts, dehazes, and crops back.
template <class T>
DehazeResult dehaze_padded(const DehazeGenerator<T>& gen, const Image& hazy) {
  auto target = [](int v) { return std::max(kMinExtent, (v + 3) / 4 * 4); };
  const int h = hazy.height(), w = hazy.width();
  const int ph = target(h), pw = target(w);
  if (ph == h && pw == w) return dehaze_forward(gen, hazy);
  Image padded(ph, pw);
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x)
      for (int c = 0; c < 3; ++c) padded(y, x, c) = hazy(std::min(y, h - 1), std::min(x, w - 1), c);
  const DehazeResult full = dehaze_forward(gen, padded);
  DehazeResult r;
  r.clean = Image(h, w);
  r.transmission = Plane(h, w);
  r.airlight = full.airlight;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      r.transmission(y, x) = full.transmission(y, x);
      for (int c = 0; c < 3; ++c) r.clean(y, x, c) = full.clean(y, x, c);
    }
  return r;
}

}  // namespace dehaze
