// SPDX-License-Identifier: Apache-2.0
//
// Unpaired training: patch discriminators, loss assembly, the alternating
// generator/discriminator loop, evaluation and checkpoint conversion.
//
// Generator objective (all weights configurable):
//
//   lambda_adv * [ LSGAN(D_clean, G(hazy)) + LSGAN(D_hazy, rehaze(clean; t, A)) ]
// + lambda_cyc * [ |rehaze(G(hazy); t, A) - hazy|_1 + |G(synth(clean)) - clean|_1 ]
// + lambda_idt * |G(clean) - clean|_1
//
// where (t, A) are the generator's transmission and airlight estimates for the
// hazy batch and synth() hazes a clean crop with randomly drawn scattering
// parameters.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dehaze/checkpoint.hpp"
#include "dehaze/config.hpp"
#include "dehaze/dataio.hpp"
#include "dehaze/metrics.hpp"
#include "dehaze/network.hpp"
#include "dehaze/optim.hpp"

namespace dehaze {

/// Strided conv stack: 3 x H x W -> 1 x H/8 x W/8 real-valued patch scores.
template <class T>
class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  explicit PatchDiscriminator(std::uint64_t seed) {
    Rng rng(seed);
    convs_ = {Conv2d<T>(3, 16, 3, rng, 2), Conv2d<T>(16, 32, 3, rng, 2), Conv2d<T>(32, 64, 3, rng, 2),
              Conv2d<T>(64, 1, 3, rng)};
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> h = x;
    for (std::size_t i = 0; i + 1 < convs_.size(); ++i) h = leaky_relu(convs_[i](h));
    return convs_.back()(h);
  }

  template <class F>
  void for_each_param(F&& fn, const std::string& prefix = "") {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].for_each_param(fn, join_name(prefix, "conv" + std::to_string(i)));
  }

 private:
  std::vector<Conv2d<T>> convs_;
};

/// Named scalar losses of one step plus the graph pieces the discriminator step reuses.
template <class T>
struct LossBundle {
  Var<T> total;
  std::vector<std::pair<std::string, Var<T>>> terms;  // unweighted
  Var<T> dehazed;        // G(hazy)
  Var<T> rehazed_clean;  // clean hazed with the generator's (t, A)

  double value(const std::string& name) const {
    if (name == "total") return static_cast<double>(total.value()[0]);
    for (const auto& [n, v] : terms)
      if (n == name) return static_cast<double>(v.value()[0]);
    throw ConfigError("unknown loss term '" + name + "'");
  }
};

/// Hazes each clean crop with scattering parameters drawn from (seed, iteration, index).
inline std::vector<Image> synthetic_hazy(const std::vector<Image>& clean, std::uint64_t seed, std::uint64_t iteration,
                                         Range beta, Range airlight) {
  std::vector<Image> out;
  out.reserve(clean.size());
  Rng root(seed ^ 0xA5A5A5A55A5A5A5AULL);
  Rng it_rng = root.fork(iteration + 1);
  for (const auto& img : clean) {
    const AsmParams p = random_asm_params(img.height(), img.width(), it_rng.next(), beta, airlight);
    out.push_back(synthesize_haze(img, p));
  }
  return out;
}

template <class T>
Var<T> lsgan_target(const Var<T>& scores, T target) {
  return mse_to(scores, target);
}

/// First `count` samples of a batch, detached from the graph.
template <class T>
Var<T> leading_samples(const Var<T>& x, int count) {
  if (count == x.dim(0)) return Var<T>(x.value());
  Shape shape = x.shape();
  shape[0] = count;
  Tensor<T> out(shape);
  std::copy(x.value().data(), x.value().data() + out.numel(), out.data());
  return Var<T>(std::move(out));
}

/// Generator losses for one unpaired batch. `synthetic` holds hazed copies of
/// the leading samples of `clean`; pass an empty Var to skip that term.
template <class T>
LossBundle<T> compute_losses(const DehazeGenerator<T>& gen, const PatchDiscriminator<T>& disc_clean,
                             const PatchDiscriminator<T>& disc_hazy, const Var<T>& hazy, const Var<T>& clean,
                             const Var<T>& synthetic, const TrainConfig& cfg) {
  if (hazy.dim(0) < 1 || clean.dim(0) < 1) throw ShapeError("compute_losses: empty batch");
  if (hazy.shape() != clean.shape())
    throw ShapeError("compute_losses: hazy " + shape_string(hazy.shape()) + " and clean " +
                     shape_string(clean.shape()) + " crops differ");
  LossBundle<T> b;
  const auto out = gen.forward(hazy);
  b.dehazed = out.clean;
  // The hazy batch's (t, A) estimates rehaze the clean batch.
  b.rehazed_clean = scatter_haze(clean, out.transmission, out.airlight);
  b.terms.emplace_back("adv", lsgan_target(disc_clean(out.clean), T(1)));
  b.terms.emplace_back("adv_hazy", lsgan_target(disc_hazy(b.rehazed_clean), T(1)));
  b.terms.emplace_back("cyc", l1_loss(scatter_haze(out.clean, out.transmission, out.airlight), hazy));
  if (synthetic) {
    if (synthetic.dim(0) > clean.dim(0) || synthetic.dim(2) != clean.dim(2) || synthetic.dim(3) != clean.dim(3))
      throw ShapeError("compute_losses: synthetic batch " + shape_string(synthetic.shape()) +
                       " does not match the clean crops");
    b.terms.emplace_back("syn", l1_loss(gen.forward(synthetic).clean, leading_samples(clean, synthetic.dim(0))));
  }
  b.terms.emplace_back("idt", l1_loss(gen.forward(clean).clean, clean));
  std::vector<Var<T>> vars;
  std::vector<T> weights;
  for (const auto& [name, v] : b.terms) {
    vars.push_back(v);
    if (name == "adv" || name == "adv_hazy")
      weights.push_back(static_cast<T>(cfg.lambda_adv));
    else if (name == "idt")
      weights.push_back(static_cast<T>(cfg.lambda_idt));
    else
      weights.push_back(static_cast<T>(cfg.lambda_cyc));
  }
  b.total = weighted_sum(vars, weights);
  return b;
}

/// LSGAN discriminator objective: real -> 1, fake -> 0.
template <class T>
Var<T> discriminator_loss(const PatchDiscriminator<T>& disc, const Var<T>& real, const Var<T>& fake) {
  return add(lsgan_target(disc(real), T(1)), lsgan_target(disc(Var<T>(fake.value())), T(0)));
}

struct EvalPair {
  Image hazy;
  Image clean;
};

struct EvalScores {
  double psnr = 0.0;
  double ssim = 0.0;
};

template <class T>
EvalScores evaluate(const DehazeGenerator<T>& gen, const std::vector<EvalPair>& pairs) {
  EvalScores s;
  if (pairs.empty()) return s;
  for (const auto& p : pairs) {
    const Image out = dehaze_forward(gen, p.hazy).clean;
    s.psnr += psnr(out, p.clean);
    s.ssim += ssim(out, p.clean);
  }
  s.psnr /= static_cast<double>(pairs.size());
  s.ssim /= static_cast<double>(pairs.size());
  return s;
}

/// Scores of the hazy inputs themselves against the references.
inline EvalScores hazy_baseline(const std::vector<EvalPair>& pairs) {
  EvalScores s;
  if (pairs.empty()) return s;
  for (const auto& p : pairs) {
    s.psnr += psnr(p.hazy, p.clean);
    s.ssim += ssim(p.hazy, p.clean);
  }
  s.psnr /= static_cast<double>(pairs.size());
  s.ssim /= static_cast<double>(pairs.size());
  return s;
}

/// Synthetic validation pairs: each clean image hazed with parameters from `seed`.
inline std::vector<EvalPair> make_eval_pairs(const std::vector<Image>& clean, std::uint64_t seed,
                                             const SynthRanges& ranges = {}) {
  std::vector<EvalPair> out;
  for (std::size_t i = 0; i < clean.size(); ++i)
    out.push_back({regenerate_entry(clean[i], synthetic_image_seed(seed, i), ranges), clean[i]});
  return out;
}

struct TraceEntry {
  long iteration = 0;
  std::string name;
  double value = 0.0;
};

inline std::string format_trace(const TraceEntry& e) {
  std::ostringstream os;
  os.precision(9);
  os << e.iteration << ", " << e.name << ", " << e.value;
  return os.str();
}

inline Checkpoint make_checkpoint(const TrainConfig& cfg, DehazeGenerator<float>& gen) {
  Checkpoint ck;
  ck.config = to_text(cfg);
  ck.tensors = snapshot(parameters_of<float>(gen));
  return ck;
}

/// Rebuilds the generator described by a checkpoint's config and loads its weights.
inline DehazeGenerator<float> load_generator(const Checkpoint& ck) {
  const TrainConfig cfg = parse_config(ck.config);
  DehazeGenerator<float> gen(cfg.model);
  auto params = parameters_of<float>(gen);
  restore(params, ck);
  return gen;
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TraceEntry> trace;
  DehazeGenerator<float> generator;
};

struct TrainHooks {
  const std::vector<EvalPair>* eval_set = nullptr;  // periodic PSNR/SSIM when set
  std::ostream* trace_out = nullptr;                // append-only trace lines
  std::function<void(long, const Checkpoint&)> checkpoint_sink;
};

/// Runs cfg.iterations alternating generator/discriminator steps.
inline TrainResult train_loop(const TrainConfig& cfg_in, const UnpairedPools& data, const TrainHooks& hooks = {}) {
  TrainConfig cfg = cfg_in;
  validate(cfg);
  cfg.model.seed = cfg.seed;
  DehazeGenerator<float> gen(cfg.model);
  Rng seeds(cfg.seed ^ 0x5DEECE66DULL);
  PatchDiscriminator<float> disc_clean(seeds.next()), disc_hazy(seeds.next());
  const AdamHyper hyper{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};
  Adam<float> opt_g(parameters_of<float>(gen), hyper);
  ParamList<float> d_params = parameters_of<float>(disc_clean, "clean");
  for (auto& p : parameters_of<float>(disc_hazy, "hazy")) d_params.push_back(p);
  Adam<float> opt_d(d_params, hyper);

  TrainResult result;
  auto emit = [&](long it, const std::string& name, double v) {
    result.trace.push_back({it, name, v});
    if (hooks.trace_out) *hooks.trace_out << format_trace(result.trace.back()) << '\n';
  };
  auto check = [](long it, const std::string& name, double v) {
    if (!std::isfinite(v)) throw TrainingFault(it, name);
  };

  for (long it = 1; it <= cfg.iterations; ++it) {
    const UnpairedBatch batch = data.batch(static_cast<std::uint64_t>(it - 1), cfg.batch_size);
    const Var<float> hazy(images_to_tensor<float>(batch.hazy));
    const Var<float> clean(images_to_tensor<float>(batch.clean));
    Var<float> synth;
    if (cfg.syn_batch > 0) {
      const std::vector<Image> head(batch.clean.begin(),
                                    batch.clean.begin() + std::min<std::size_t>(cfg.syn_batch, batch.clean.size()));
      synth = Var<float>(images_to_tensor<float>(
          synthetic_hazy(head, cfg.seed, static_cast<std::uint64_t>(it - 1), cfg.rehaze_beta, cfg.rehaze_airlight)));
    }

    opt_g.zero_grad();
    const LossBundle<float> losses = compute_losses(gen, disc_clean, disc_hazy, hazy, clean, synth, cfg);
    for (const auto& [name, v] : losses.terms) check(it, name, v.value()[0]);
    check(it, "total", losses.total.value()[0]);
    backward(losses.total);
    opt_g.step();

    opt_d.zero_grad();
    const Var<float> d_loss = add(discriminator_loss(disc_clean, clean, losses.dehazed),
                                  discriminator_loss(disc_hazy, hazy, losses.rehazed_clean));
    check(it, "disc", d_loss.value()[0]);
    backward(d_loss);
    opt_d.step();

    for (const auto& [name, v] : losses.terms) emit(it, name, v.value()[0]);
    emit(it, "total", losses.total.value()[0]);
    emit(it, "disc", d_loss.value()[0]);

    if (hooks.eval_set && cfg.eval_every > 0 && it % cfg.eval_every == 0) {
      const EvalScores s = evaluate(gen, *hooks.eval_set);
      emit(it, "val_psnr", s.psnr);
      emit(it, "val_ssim", s.ssim);
    }
    if (hooks.checkpoint_sink && cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0)
      hooks.checkpoint_sink(it, make_checkpoint(cfg, gen));
  }
  result.checkpoint = make_checkpoint(cfg, gen);
  if (hooks.checkpoint_sink) hooks.checkpoint_sink(cfg.iterations, result.checkpoint);
  result.generator = std::move(gen);
  return result;
}

}  // namespace dehaze
