// SPDX-License-Identifier: Apache-2.0
//
// Training configuration and its flat `key = value` text form. Blank lines and
// lines starting with '#' are ignored.
#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dehaze/asm.hpp"
#include "dehaze/errors.hpp"
#include "dehaze/network.hpp"

namespace dehaze {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 4;
  long iterations = 2000;
  std::uint64_t seed = 0;
  double lambda_adv = 1.0;
  double lambda_cyc = 10.0;
  double lambda_idt = 5.0;
  int crop_size = 32;
  int syn_batch = 2;  // clean crops hazed for the supervised synthetic term; 0 disables it
  int eval_every = 500;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  Range rehaze_beta{0.5, 1.5};
  Range rehaze_airlight{0.7, 1.0};
  GeneratorConfig model;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class N>
N parse_number(const std::string& v, int line, const std::string& key) {
  N out{};
  if constexpr (std::is_floating_point_v<N>) {
    std::size_t used = 0;
    try {
      out = static_cast<N>(std::stod(v, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size())
      throw ConfigError("line " + std::to_string(line) + ": '" + key + "' expects a number, got '" + v + "'");
  } else {
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
      throw ConfigError("line " + std::to_string(line) + ": '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& v, int line, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("line " + std::to_string(line) + ": '" + key + "' expects true or false, got '" + v + "'");
}

struct Field {
  std::function<void(const std::string&, int)> set;
  std::function<std::string()> get;
};

template <class N>
std::string format_number(N v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::map<std::string, Field> config_fields(TrainConfig& c) {
  std::map<std::string, Field> f;
  auto num = [&f](const std::string& key, auto* ptr) {
    using N = std::remove_pointer_t<decltype(ptr)>;
    f[key] = {[ptr, key](const std::string& v, int line) { *ptr = parse_number<N>(v, line, key); },
              [ptr] { return format_number(*ptr); }};
  };
  auto flag = [&f](const std::string& key, bool* ptr) {
    f[key] = {[ptr, key](const std::string& v, int line) { *ptr = parse_bool(v, line, key); },
              [ptr] { return std::string(*ptr ? "true" : "false"); }};
  };
  num("lr", &c.lr);
  num("beta1", &c.beta1);
  num("beta2", &c.beta2);
  num("eps", &c.eps);
  num("batch_size", &c.batch_size);
  num("iterations", &c.iterations);
  num("seed", &c.seed);
  num("lambda_adv", &c.lambda_adv);
  num("lambda_cyc", &c.lambda_cyc);
  num("lambda_idt", &c.lambda_idt);
  num("crop_size", &c.crop_size);
  num("syn_batch", &c.syn_batch);
  num("eval_every", &c.eval_every);
  num("checkpoint_every", &c.checkpoint_every);
  num("rehaze_beta_min", &c.rehaze_beta.lo);
  num("rehaze_beta_max", &c.rehaze_beta.hi);
  num("rehaze_airlight_min", &c.rehaze_airlight.lo);
  num("rehaze_airlight_max", &c.rehaze_airlight.hi);
  GeneratorConfig& m = c.model;
  num("model.encoder_width0", &m.encoder_widths[0]);
  num("model.encoder_width1", &m.encoder_widths[1]);
  num("model.encoder_width2", &m.encoder_widths[2]);
  num("model.channels", &m.channels);
  num("model.refine_width", &m.refine_width);
  num("model.asm_head_width", &m.asm_head_width);
  num("model.kan_kernel", &m.kan_cid.kernel);
  f["model.kan_grids"] = {[&m](const std::string& v, int line) {
                             std::vector<int> grids;
                             std::stringstream ss(v);
                             std::string item;
                             while (std::getline(ss, item, ','))
                               grids.push_back(parse_number<int>(trim(item), line, "model.kan_grids"));
                             if (grids.empty())
                               throw ConfigError("line " + std::to_string(line) + ": 'model.kan_grids' is empty");
                             m.kan_cid.cd_grid_sizes = grids;
                           },
                           [&m] {
                             std::string out;
                             for (int g : m.kan_cid.cd_grid_sizes) out += (out.empty() ? "" : ",") + std::to_string(g);
                             return out;
                           }};
  num("model.kan_order", &m.kan_cid.order);
  num("model.inr_frequencies", &m.inr.frequencies);
  num("model.inr_unfold_radius", &m.inr.unfold_radius);
  num("model.inr_hidden_width", &m.inr.hidden_width);
  num("model.inr_hidden_layers", &m.inr.hidden_layers);
  num("model.drem_width", &m.drem.width);
  num("model.drem_growth", &m.drem.growth);
  num("model.drem_dense_layers", &m.drem.dense_layers);
  num("model.drem_blocks", &m.drem.blocks);
  flag("model.use_kan_cid", &m.use_kan_cid);
  flag("model.use_idrm", &m.use_idrm);
  flag("model.use_drem", &m.use_drem);
  return f;
}

}  // namespace detail

/// Rejects values no training run can use.
inline void validate(const TrainConfig& c) {
  auto bad = [](const std::string& what) { throw ConfigError("invalid configuration: " + what); };
  if (!(c.lr > 0.0)) bad("lr must be positive");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0)) bad("betas must lie in [0, 1)");
  if (!(c.eps > 0.0)) bad("eps must be positive");
  if (c.batch_size < 1) bad("batch_size must be >= 1");
  if (c.iterations < 0) bad("iterations must be >= 0");
  if (c.lambda_adv < 0.0 || c.lambda_cyc < 0.0 || c.lambda_idt < 0.0) bad("loss weights must be non-negative");
  if (c.crop_size < kMinExtent || c.crop_size % 4 != 0) bad("crop_size must be a multiple of 4 and >= 8");
  if (c.syn_batch < 0 || c.syn_batch > c.batch_size) bad("syn_batch must lie in [0, batch_size]");
  if (c.eval_every < 0 || c.checkpoint_every < 0) bad("eval_every and checkpoint_every must be >= 0");
  if (c.model.channels < 1 || c.model.refine_width < 1) bad("model widths must be positive");
}

/// Applies `key = value` lines on top of `base`. Unknown keys and malformed
/// values raise ConfigError naming the line.
inline TrainConfig parse_config(const std::string& text, TrainConfig base = {}) {
  auto fields = detail::config_fields(base);
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = detail::trim(raw);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line) + ": expected 'key = value', got '" + s + "'");
    const std::string key = detail::trim(s.substr(0, eq));
    const std::string value = detail::trim(s.substr(eq + 1));
    const auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("line " + std::to_string(line) + ": unknown key '" + key + "'");
    it->second.set(value, line);
  }
  return base;
}

inline TrainConfig load_config(const std::string& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), base);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Full text form; parse_config(to_text(c)) reproduces c.
inline std::string to_text(const TrainConfig& c) {
  TrainConfig copy = c;
  std::string out;
  for (const auto& [key, field] : detail::config_fields(copy)) out += key + " = " + field.get() + "\n";
  return out;
}

}  // namespace dehaze
