// SPDX-License-Identifier: Apache-2.0
//
// PNG input/output, unpaired pool iteration and synthetic hazy set generation.
// Requires linking against libpng.
#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dehaze/asm.hpp"
#include "dehaze/errors.hpp"
#include "dehaze/image.hpp"
#include "dehaze/rng.hpp"

namespace dehaze {

namespace fs = std::filesystem;

/// Loads an 8-bit colour PNG into [0, 1]. Alpha, if present, is dropped.
inline Image load_image(const std::string& path) {
  if (!fs::exists(path)) throw IoError(path, "no such file");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError(path, std::string("cannot decode PNG: ") + img.message);
  const png_uint_32 native = img.format;
  if (native & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&img);
    throw IoError(path, "16-bit PNGs are not supported; expected 8-bit RGB");
  }
  if (!(native & PNG_FORMAT_FLAG_COLOR)) {
    png_image_free(&img);
    throw IoError(path, "grayscale PNGs are not supported; expected 8-bit RGB");
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError(path, "cannot decode PNG: " + msg);
  }
  Image out(static_cast<int>(img.height), static_cast<int>(img.width));
  for (std::size_t i = 0; i < buf.size(); ++i) out[i] = buf[i] / 255.0;
  return out;
}

/// Round-half-up quantisation of a [0, 1] value to a byte; out-of-range values saturate.
inline std::uint8_t quantize_byte(double v) {
  const double s = std::floor(v * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(s, 0.0, 255.0));
}

inline void write_png(const std::string& path, int height, int width, bool color,
                      const std::vector<std::uint8_t>& bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw IoError(path, std::string("cannot write PNG: ") + img.message);
}

inline void save_image(const Image& image, const std::string& path) {
  if (image.height() < 1 || image.width() < 1) throw ShapeError("save_image: empty image");
  std::vector<std::uint8_t> bytes(image.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize_byte(image[i]);
  write_png(path, image.height(), image.width(), true, bytes);
}

/// Saves a single-channel plane (for example a transmission map) as 8-bit grayscale.
inline void save_plane(const Plane& plane, const std::string& path) {
  if (plane.height() < 1 || plane.width() < 1) throw ShapeError("save_plane: empty plane");
  std::vector<std::uint8_t> bytes(plane.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize_byte(plane[i]);
  write_png(path, plane.height(), plane.width(), false, bytes);
}

/// Sorted list of *.png files (full paths) directly inside `dir`.
inline std::vector<std::string> list_pngs(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir, "not a directory");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<Image> load_images(const std::vector<std::string>& paths) {
  std::vector<Image> out;
  out.reserve(paths.size());
  for (const auto& p : paths) out.push_back(load_image(p));
  return out;
}

inline Image crop(const Image& src, int y0, int x0, int height, int width) {
  if (y0 < 0 || x0 < 0 || y0 + height > src.height() || x0 + width > src.width())
    throw ShapeError("crop: window exceeds image " + shape_string(src));
  Image out(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) out(y, x, c) = src(y0 + y, x0 + x, c);
  return out;
}

struct UnpairedBatch {
  std::vector<Image> hazy;
  std::vector<Image> clean;
  std::vector<std::size_t> hazy_index;  // pool indices, for inspection
  std::vector<std::size_t> clean_index;
};

/// Two independently shuffled pools drawn as random same-size crops. A batch
/// is a pure function of (seed, iteration): draw k of a pool uses the pool's
/// epoch-wise permutation, so pools cycle with a fresh shuffle per epoch.
class UnpairedPools {
 public:
  UnpairedPools(std::vector<Image> hazy, std::vector<Image> clean, int crop_size, std::uint64_t seed)
      : hazy_(std::move(hazy)), clean_(std::move(clean)), crop_(crop_size), seed_(seed) {
    if (hazy_.empty()) throw ConfigError("unpaired pools: hazy pool is empty");
    if (clean_.empty()) throw ConfigError("unpaired pools: clean pool is empty");
    if (crop_ < 1) throw ConfigError("unpaired pools: crop size must be positive");
    for (const auto* pool : {&hazy_, &clean_})
      for (const auto& img : *pool)
        if (img.height() < crop_ || img.width() < crop_)
          throw ConfigError("unpaired pools: image " + shape_string(img) + " smaller than crop " +
                            std::to_string(crop_));
  }

  static UnpairedPools from_dirs(const std::string& hazy_dir, const std::string& clean_dir, int crop_size,
                                 std::uint64_t seed) {
    const auto hz = list_pngs(hazy_dir);
    if (hz.empty()) throw ConfigError("no PNG files in hazy directory " + hazy_dir);
    const auto cl = list_pngs(clean_dir);
    if (cl.empty()) throw ConfigError("no PNG files in clean directory " + clean_dir);
    return UnpairedPools(load_images(hz), load_images(cl), crop_size, seed);
  }

  std::size_t hazy_size() const { return hazy_.size(); }
  std::size_t clean_size() const { return clean_.size(); }
  int crop_size() const { return crop_; }

  UnpairedBatch batch(std::uint64_t iteration, int batch_size) const {
    UnpairedBatch b;
    for (int i = 0; i < batch_size; ++i) {
      const std::uint64_t k = iteration * static_cast<std::uint64_t>(batch_size) + i;
      b.hazy_index.push_back(draw(0, k, hazy_.size()));
      b.clean_index.push_back(draw(1, k, clean_.size()));
      Rng r(mix(2, iteration, static_cast<std::uint64_t>(i)));
      b.hazy.push_back(random_crop(hazy_[b.hazy_index.back()], r));
      b.clean.push_back(random_crop(clean_[b.clean_index.back()], r));
    }
    return b;
  }

 private:
  std::uint64_t mix(std::uint64_t stream, std::uint64_t a, std::uint64_t b) const {
    std::uint64_t h = seed_ ^ (stream * 0x9E3779B97F4A7C15ULL);
    for (std::uint64_t v : {a, b}) {
      h ^= v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
      h *= 0xBF58476D1CE4E5B9ULL;
      h ^= h >> 31;
    }
    return h;
  }

  std::size_t draw(std::uint64_t stream, std::uint64_t k, std::size_t n) const {
    const std::uint64_t epoch = k / n;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng r(mix(stream, epoch, 0));
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[r.index(i)]);
    return perm[k % n];
  }

  Image random_crop(const Image& img, Rng& r) const {
    const int y = static_cast<int>(r.index(static_cast<std::uint64_t>(img.height() - crop_ + 1)));
    const int x = static_cast<int>(r.index(static_cast<std::uint64_t>(img.width() - crop_ + 1)));
    return crop(img, y, x, crop_, crop_);
  }

  std::vector<Image> hazy_;
  std::vector<Image> clean_;
  int crop_;
  std::uint64_t seed_;
};

struct SynthRanges {
  Range beta{0.5, 1.5};
  Range airlight{0.7, 1.0};
};

struct ManifestEntry {
  std::string filename;
  std::uint64_t seed = 0;
  double beta = 0.0;
  Rgb airlight{};
};

inline std::string format_manifest_line(const ManifestEntry& e) {
  std::ostringstream os;
  os.precision(17);
  os << e.filename << ", " << e.seed << ", " << e.beta << ", " << e.airlight[0] << ", " << e.airlight[1]
     << ", " << e.airlight[2];
  return os.str();
}

inline ManifestEntry parse_manifest_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? "" : f.substr(b, e - b + 1));
  }
  if (fields.size() != 6) throw ConfigError("manifest line needs 6 fields: " + line);
  try {
    return {fields[0], std::stoull(fields[1]), std::stod(fields[2]),
            Rgb{std::stod(fields[3]), std::stod(fields[4]), std::stod(fields[5])}};
  } catch (const std::exception&) {
    throw ConfigError("malformed manifest line: " + line);
  }
}

/// Per-image seed of entry i in a set generated with `seed`.
inline std::uint64_t synthetic_image_seed(std::uint64_t seed, std::size_t i) {
  Rng r(seed);
  return r.fork(static_cast<std::uint64_t>(i) + 1).next();
}

/// Output file name for entry i drawn from the clean file at `source`.
inline std::string synthetic_name(std::size_t i, const std::string& source) {
  char prefix[32];
  std::snprintf(prefix, sizeof prefix, "%04zu_", i);
  return prefix + fs::path(source).stem().string() + ".png";
}

/// Source clean file stem encoded in a synthetic file name.
inline std::string synthetic_source_stem(const std::string& filename) {
  const std::string stem = fs::path(filename).stem().string();
  const auto pos = stem.find('_');
  if (pos == std::string::npos) throw ConfigError("not a synthetic file name: " + filename);
  return stem.substr(pos + 1);
}

/// Hazes `clean` with parameters drawn from the entry's seed.
inline Image regenerate_entry(const Image& clean, std::uint64_t image_seed, const SynthRanges& ranges) {
  const AsmParams p = random_asm_params(clean.height(), clean.width(), image_seed, ranges.beta, ranges.airlight);
  return synthesize_haze(clean, p);
}

/// Writes `count` hazy PNGs (sources cycled in sorted order) plus manifest.txt
/// into out_dir and returns the manifest entries.
inline std::vector<ManifestEntry> generate_synthetic_set(const std::string& clean_dir, const std::string& out_dir,
                                                         std::size_t count, std::uint64_t seed,
                                                         const SynthRanges& ranges = {}) {
  const auto sources = list_pngs(clean_dir);
  if (sources.empty()) throw ConfigError("no PNG files in clean directory " + clean_dir);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir, "cannot create directory: " + ec.message());
  std::vector<ManifestEntry> manifest;
  const std::string manifest_path = (fs::path(out_dir) / "manifest.txt").string();
  std::ofstream mf(manifest_path);
  if (!mf) throw IoError(manifest_path, "cannot open for writing");
  for (std::size_t i = 0; i < count; ++i) {
    const std::string& src = sources[i % sources.size()];
    const Image clean = load_image(src);
    ManifestEntry e;
    e.filename = synthetic_name(i, src);
    e.seed = synthetic_image_seed(seed, i);
    const AsmParams p = random_asm_params(clean.height(), clean.width(), e.seed, ranges.beta, ranges.airlight);
    e.beta = p.beta;
    e.airlight = p.airlight;
    save_image(synthesize_haze(clean, p), (fs::path(out_dir) / e.filename).string());
    mf << format_manifest_line(e) << '\n';
    manifest.push_back(e);
  }
  if (!mf) throw IoError(manifest_path, "write failed");
  return manifest;
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open manifest");
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(in, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(parse_manifest_line(line));
  return out;
}

}  // namespace dehaze
