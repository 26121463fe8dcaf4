#pragma once

#include <cstring>
#include <fstream>

#include "diffguide/nn.hpp"

namespace diffguide {

// Versioned binary checkpoint over a named parameter tree:
//   "DGCK" | u32 version | u64 config_hash | u64 count |
//   { u32 name_len | name | u32 ndim | i32 dims[] | f64 data[] } ...
// Layout is fixed little-endian doubles, so save -> load -> save is
// bit-identical.

inline constexpr uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

template <typename T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const ParamTree& tree,
                            uint64_t config_hash_value) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write("DGCK", 4);
  ckpt_detail::put(f, kCheckpointVersion);
  ckpt_detail::put(f, config_hash_value);
  ckpt_detail::put(f, static_cast<uint64_t>(tree.params.size()));
  for (const auto& [name, var] : tree.params) {
    ckpt_detail::put(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Tensor& t = var.value();
    ckpt_detail::put(f, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) ckpt_detail::put(f, static_cast<int32_t>(d));
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

struct Checkpoint {
  uint32_t version = 0;
  uint64_t config_hash = 0;
  std::vector<std::pair<std::string, Tensor>> params;

  const Tensor* find(const std::string& name) const {
    for (const auto& [k, t] : params)
      if (k == name) return &t;
    return nullptr;
  }
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "DGCK", 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  Checkpoint ck;
  ck.version = ckpt_detail::get<uint32_t>(f);
  if (ck.version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " +
                             std::to_string(ck.version));
  ck.config_hash = ckpt_detail::get<uint64_t>(f);
  uint64_t count = ckpt_detail::get<uint64_t>(f);
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t len = ckpt_detail::get<uint32_t>(f);
    std::string name(len, '\0');
    f.read(name.data(), len);
    uint32_t ndim = ckpt_detail::get<uint32_t>(f);
    std::vector<int> shape(ndim);
    size_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      shape[d] = ckpt_detail::get<int32_t>(f);
      if (shape[d] < 0) throw std::runtime_error("load_checkpoint: negative dim");
      numel *= static_cast<size_t>(shape[d]);
    }
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(numel * sizeof(double)));
    if (!f) throw std::runtime_error("load_checkpoint: truncated tensor data");
    ck.params.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

// Copy checkpoint values into an existing tree; every parameter must be
// present with a matching shape.
inline void apply_checkpoint(const Checkpoint& ck, ParamTree& tree) {
  for (auto& [name, var] : tree.params) {
    const Tensor* t = ck.find(name);
    if (!t) throw std::runtime_error("apply_checkpoint: missing parameter " + name);
    if (!t->same_shape(var.value()))
      throw std::runtime_error("apply_checkpoint: shape mismatch for " + name);
    var.value().data = t->data;
  }
}

}  // namespace diffguide
