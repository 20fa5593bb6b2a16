// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container. Byte layout (all integers u32 little-endian):
//
//   "DHZCKPT\0" | version | config length | config text
//   | tensor count | per tensor: name length | name | rank | dims... | f32 payload
//
// See docs/checkpoint-format.md.
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dehaze/autograd.hpp"
#include "dehaze/errors.hpp"

namespace dehaze {

inline constexpr std::array<char, 8> kCheckpointMagic{'D', 'H', 'Z', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config;  // key = value text
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& t : tensors) out.push_back(t.name);
    return out;
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : b_(bytes), path_(path) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw IoError(path_, "truncated checkpoint");
  }
  const std::string& b_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, ck.version);
  detail::put_u32(out, static_cast<std::uint32_t>(ck.config.size()));
  out += ck.config;
  detail::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
    for (int d : t.value.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : t.value.values()) detail::put_f32(out, f);
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& path = "<memory>") {
  detail::Reader r(bytes, path);
  const std::string magic = r.str(kCheckpointMagic.size());
  if (std::memcmp(magic.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    throw IoError(path, "not a checkpoint file (bad magic)");
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != kCheckpointVersion)
    throw IoError(path, "incompatible checkpoint version " + std::to_string(ck.version) + " (this build reads version " +
                            std::to_string(kCheckpointVersion) + ")");
  ck.config = r.str(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw IoError(path, "tensor '" + t.name + "' has implausible rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.u32()));
    t.value = Tensor<float>(shape);
    for (float& f : t.value.values()) f = r.f32();
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw IoError(path, "trailing bytes after checkpoint payload");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  const std::string bytes = encode_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path, "write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open checkpoint");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

/// Snapshot of a parameter list (values cast to f32).
template <class T>
std::vector<NamedTensor> snapshot(const ParamList<T>& params) {
  std::vector<NamedTensor> out;
  for (const auto& p : params) out.push_back({p.name, p.param->value().template cast<float>()});
  return out;
}

/// Copies checkpoint tensors into `params`. Every parameter must be present
/// with a matching shape, and the checkpoint may not hold unknown names.
template <class T>
void restore(ParamList<T>& params, const Checkpoint& ck) {
  for (auto& p : params) {
    const NamedTensor* t = ck.find(p.name);
    if (!t) throw ConfigError("checkpoint is missing parameter '" + p.name + "'");
    if (t->value.shape() != p.param->shape())
      throw ConfigError("checkpoint parameter '" + p.name + "' has shape " + shape_string(t->value.shape()) +
                        ", model expects " + shape_string(p.param->shape()));
    p.param->value() = t->value.template cast<T>();
  }
  if (ck.tensors.size() != params.size()) {
    for (const auto& t : ck.tensors) {
      bool known = false;
      for (const auto& p : params) known = known || p.name == t.name;
      if (!known) throw ConfigError("checkpoint holds parameter '" + t.name + "' unknown to this model");
    }
  }
}

}  // namespace dehaze
