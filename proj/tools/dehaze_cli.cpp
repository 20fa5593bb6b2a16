// SPDX-License-Identifier: Apache-2.0
//
// dehaze: synthetic data generation, training, inference, evaluation and the
// coordinate-network fitting demo.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "dehaze/dehaze.hpp"

namespace fs = std::filesystem;
using namespace dehaze;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

struct SynthOptions {
  std::string clean_dir, out_dir;
  std::size_t count = 100;
  std::uint64_t seed = 0;
  SynthRanges ranges;
};

int run_synth(const SynthOptions& o) {
  if (!(o.ranges.beta.lo <= o.ranges.beta.hi) || !(o.ranges.airlight.lo <= o.ranges.airlight.hi)) {
    std::cerr << "synth: min must not exceed max\n";
    return kUsageError;
  }
  const auto manifest = generate_synthetic_set(o.clean_dir, o.out_dir, o.count, o.seed, o.ranges);
  std::cout << "wrote " << manifest.size() << " hazy images to " << o.out_dir << '\n';
  return 0;
}

struct TrainOptions {
  std::string hazy_dir, clean_dir, config, out_ckpt = "model.ckpt", trace, eval_dir;
  std::optional<long> iters;
  std::optional<std::uint64_t> seed;
  bool no_kan_cid = false, no_idrm = false, no_drem = false;
};

int run_train(const TrainOptions& o) {
  TrainConfig cfg;
  if (!o.config.empty()) cfg = load_config(o.config);
  if (o.iters) cfg.iterations = *o.iters;
  if (o.seed) cfg.seed = *o.seed;
  if (o.no_kan_cid) cfg.model.use_kan_cid = false;
  if (o.no_idrm) cfg.model.use_idrm = false;
  if (o.no_drem) cfg.model.use_drem = false;
  validate(cfg);

  const UnpairedPools pools = UnpairedPools::from_dirs(o.hazy_dir, o.clean_dir, cfg.crop_size, cfg.seed);
  std::vector<EvalPair> eval;
  TrainHooks hooks;
  if (!o.eval_dir.empty()) {
    eval = make_eval_pairs(load_images(list_pngs(o.eval_dir)), cfg.seed + 1,
                           SynthRanges{cfg.rehaze_beta, cfg.rehaze_airlight});
    hooks.eval_set = &eval;
  }
  std::ofstream trace_file;
  if (!o.trace.empty()) {
    trace_file.open(o.trace, std::ios::app);
    if (!trace_file) throw IoError(o.trace, "cannot open trace file");
    hooks.trace_out = &trace_file;
  } else {
    hooks.trace_out = &std::cout;
  }
  hooks.checkpoint_sink = [&](long it, const Checkpoint& ck) {
    if (it == cfg.iterations) {
      save_checkpoint(ck, o.out_ckpt);
    } else {
      save_checkpoint(ck, o.out_ckpt + "." + std::to_string(it));
    }
  };
  train_loop(cfg, pools, hooks);
  std::cerr << "saved " << o.out_ckpt << '\n';
  return 0;
}

struct DehazeOptions {
  std::string ckpt, in_dir, out_dir;
  bool dump_t = false;
};

int run_dehaze(const DehazeOptions& o) {
  const DehazeGenerator<float> gen = load_generator(load_checkpoint(o.ckpt));
  const auto inputs = list_pngs(o.in_dir);
  std::error_code ec;
  fs::create_directories(o.out_dir, ec);
  if (ec) throw IoError(o.out_dir, "cannot create directory: " + ec.message());
  for (const auto& path : inputs) {
    const DehazeResult r = dehaze_padded(gen, load_image(path));
    const fs::path name = fs::path(path).filename();
    save_image(r.clean, (fs::path(o.out_dir) / name).string());
    if (o.dump_t)
      save_plane(r.transmission, (fs::path(o.out_dir) / (name.stem().string() + "_t.png")).string());
  }
  std::cout << "dehazed " << inputs.size() << " images into " << o.out_dir << '\n';
  return 0;
}

struct EvalOptions {
  std::string restored_dir, reference_dir;
};

int run_eval(const EvalOptions& o) {
  std::map<std::string, std::string> restored, reference;
  for (const auto& p : list_pngs(o.restored_dir)) restored[fs::path(p).filename().string()] = p;
  for (const auto& p : list_pngs(o.reference_dir)) reference[fs::path(p).filename().string()] = p;
  std::size_t unmatched = 0, matched = 0;
  double sum_psnr = 0.0, sum_ssim = 0.0;
  for (const auto& [name, path] : restored) {
    const auto it = reference.find(name);
    if (it == reference.end()) {
      std::cerr << "warning: no reference for " << name << ", skipped\n";
      ++unmatched;
      continue;
    }
    const Image a = load_image(path), b = load_image(it->second);
    const double p = psnr(a, b), s = ssim(a, b);
    std::printf("%s  PSNR %.2f  SSIM %.2f\n", name.c_str(), p, s);
    sum_psnr += p;
    sum_ssim += s;
    ++matched;
  }
  for (const auto& [name, path] : reference)
    if (!restored.count(name)) {
      std::cerr << "warning: no restored image for " << name << ", skipped\n";
      ++unmatched;
    }
  if (matched == 0) {
    std::cerr << "eval: no file names in common between " << o.restored_dir << " and " << o.reference_dir << '\n';
    return kRuntimeError;
  }
  std::printf("mean  PSNR %.2f  SSIM %.2f  (%zu images, %zu unmatched)\n", sum_psnr / matched, sum_ssim / matched,
              matched, unmatched);
  return 0;
}

struct FitOptions {
  std::string image, out = "reconstruction.png", trace;
  int iters = 2000;
  double lr = kDefaultFitLr;
  std::uint64_t seed = 0;
};

int run_fit_inr(const FitOptions& o) {
  if (o.iters < 1) {
    std::cerr << "fit-inr: --iters must be >= 1\n";
    return kUsageError;
  }
  const Image target = load_image(o.image);
  const FitResult<float> r = fit_image<float>(target, InrConfig{}, o.iters, o.lr, o.seed);
  save_image(r.reconstruction, o.out);
  std::ofstream trace_file;
  std::ostream* trace = &std::cout;
  if (!o.trace.empty()) {
    trace_file.open(o.trace);
    if (!trace_file) throw IoError(o.trace, "cannot open trace file");
    trace = &trace_file;
  }
  for (std::size_t i = 0; i < r.losses.size(); ++i)
    *trace << format_trace({static_cast<long>(i + 1), "mse", r.losses[i]}) << '\n';
  std::printf("PSNR %.2f dB after %d iterations\n", psnr(r.reconstruction, target), o.iters);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates and frees large tensors every step; keep them on the heap
  // instead of round-tripping through mmap and fresh page faults.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Unpaired single-image dehazing toolkit"};
  app.require_subcommand(1);

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Haze clean PNGs with random scattering parameters");
  synth->add_option("--clean-dir", so.clean_dir, "Directory of clean PNGs")->required();
  synth->add_option("--out-dir", so.out_dir, "Output directory")->required();
  synth->add_option("--count", so.count, "Number of hazy images")->capture_default_str();
  synth->add_option("--seed", so.seed, "Random seed")->capture_default_str();
  synth->add_option("--beta-min", so.ranges.beta.lo)->capture_default_str();
  synth->add_option("--beta-max", so.ranges.beta.hi)->capture_default_str();
  synth->add_option("--a-min", so.ranges.airlight.lo)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  synth->add_option("--a-max", so.ranges.airlight.hi)->capture_default_str()->check(CLI::Range(0.0, 1.0));

  TrainOptions to;
  auto* train = app.add_subcommand("train", "Train a generator on unpaired hazy/clean pools");
  train->add_option("--hazy-dir", to.hazy_dir, "Directory of hazy PNGs")->required();
  train->add_option("--clean-dir", to.clean_dir, "Directory of clean PNGs")->required();
  train->add_option("--iters", to.iters, "Training iterations");
  train->add_option("--seed", to.seed, "Random seed");
  train->add_option("--config", to.config, "key = value configuration file");
  train->add_option("--out-ckpt", to.out_ckpt, "Checkpoint path")->capture_default_str();
  train->add_option("--trace", to.trace, "Append the metrics trace here instead of stdout");
  train->add_option("--eval-dir", to.eval_dir, "Clean PNGs used as a synthetic validation set");
  train->add_flag("--no-kan-cid", to.no_kan_cid, "Disable the KAN-CID blocks");
  train->add_flag("--no-idrm", to.no_idrm, "Disable the implicit decoder");
  train->add_flag("--no-drem", to.no_drem, "Disable the dense residual enhancement");

  DehazeOptions dop;
  auto* dehaze_cmd = app.add_subcommand("dehaze", "Dehaze every PNG in a directory");
  dehaze_cmd->add_option("--ckpt", dop.ckpt, "Checkpoint")->required();
  dehaze_cmd->add_option("--in-dir", dop.in_dir, "Input directory")->required();
  dehaze_cmd->add_option("--out-dir", dop.out_dir, "Output directory")->required();
  dehaze_cmd->add_flag("--dump-t", dop.dump_t, "Also write transmission maps as <name>_t.png");

  EvalOptions eo;
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM of restored images against references");
  eval->add_option("--restored-dir", eo.restored_dir)->required();
  eval->add_option("--reference-dir", eo.reference_dir)->required();

  FitOptions fo;
  auto* fit = app.add_subcommand("fit-inr", "Fit a coordinate network to one image");
  fit->add_option("--image", fo.image, "Target PNG")->required();
  fit->add_option("--out", fo.out, "Reconstruction PNG")->capture_default_str();
  fit->add_option("--trace", fo.trace, "Loss curve output (default stdout)");
  fit->add_option("--iters", fo.iters)->capture_default_str();
  fit->add_option("--lr", fo.lr)->capture_default_str();
  fit->add_option("--seed", fo.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*synth) return run_synth(so);
    if (*train) return run_train(to);
    if (*dehaze_cmd) return run_dehaze(dop);
    if (*eval) return run_eval(eo);
    if (*fit) return run_fit_inr(fo);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}
