#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffguide {

// Dense row-major double tensor. Small and dumb on purpose; all heavy
// lifting goes through Eigen maps in nn.hpp.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<int> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      throw std::invalid_argument("tensor: data size does not match shape");
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dim");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape.size()); }

  double& at(std::initializer_list<int> idx) { return data[offset(idx)]; }
  double at(std::initializer_list<int> idx) const { return data[offset(idx)]; }

  size_t offset(std::initializer_list<int> idx) const {
    assert(static_cast<int>(idx.size()) == ndim());
    size_t off = 0;
    auto it = idx.begin();
    for (int i = 0; i < ndim(); ++i, ++it) {
      assert(*it >= 0 && *it < shape[static_cast<size_t>(i)]);
      off = off * static_cast<size_t>(shape[static_cast<size_t>(i)]) +
            static_cast<size_t>(*it);
    }
    return off;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  Tensor& operator+=(const Tensor& o) {
    if (!same_shape(o)) throw std::invalid_argument("tensor +=: shape mismatch");
    for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }
  Tensor& operator*=(double a) {
    for (double& v : data) v *= a;
    return *this;
  }

  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape); }

  double sum() const { return std::accumulate(data.begin(), data.end(), 0.0); }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Deterministic RNG. std::mt19937_64 for bits, explicit Box-Muller for
// normals so outputs do not depend on the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive range
    assert(hi >= lo);
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(gen_() % span);
  }

  double normal() {
    // two fresh uniforms per draw; no cached spare so the stream is
    // position-independent
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Tensor normal_tensor(std::vector<int> shape) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = normal();
    return t;
  }
  Tensor uniform_tensor(std::vector<int> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = uniform(lo, hi);
    return t;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[static_cast<size_t>(gen_() % i)]);
  }

 private:
  std::mt19937_64 gen_;
};

// splitmix-style stream derivation: independent substreams from one seed
inline uint64_t derive_seed(uint64_t seed, const std::string& stream,
                            uint64_t counter = 0) {
  uint64_t h = seed ^ 0x9e3779b97f4a7c15ull;
  for (char c : stream) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
  }
  h += counter * 0xbf58476d1ce4e5b9ull;
  h ^= h >> 29;
  h *= 0x94d049bb133111ebull;
  h ^= h >> 32;
  return h;
}

}  // namespace diffguide
