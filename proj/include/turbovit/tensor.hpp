#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace turbovit {

// Thrown when operand shapes are incompatible (the message names both shapes).
class ShapeError : public std::runtime_error {
public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a configuration is unrealizable (indivisible grids, bad strides, ...).
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

// Dense row-major tensor. `data.size() == product(shape)` always holds;
// the constructors are the only way to set the shape.
template <class S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(Shape sh) : shape(std::move(sh)) {
    for (int d : shape)
      if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    data.assign(static_cast<size_t>(shape_numel(shape)), S(0));
  }
  Tensor(Shape sh, std::vector<S> values) : shape(std::move(sh)), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int size(int i) const { return shape[static_cast<size_t>(i)]; }
  bool empty() const { return data.empty(); }

  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }

  // Convenience indexers for small/test code; hot loops index flat buffers directly.
  S& operator()(int i) { return data[static_cast<size_t>(i)]; }
  S operator()(int i) const { return data[static_cast<size_t>(i)]; }
  S& operator()(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  S operator()(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  S& operator()(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  S operator()(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  S& operator()(int i, int j, int k, int l) {
    return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  S operator()(int i, int j, int k, int l) const {
    return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  // Reinterpret the buffer under a new shape of equal element count.
  Tensor<S> reshaped(Shape sh) const {
    if (shape_numel(sh) != numel())
      throw ShapeError("cannot reshape " + shape_str(shape) + " to " + shape_str(sh));
    Tensor<S> out;
    out.shape = std::move(sh);
    out.data = data;
    return out;
  }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static Tensor<S> zeros(Shape sh) { return Tensor<S>(std::move(sh)); }
  static Tensor<S> full(Shape sh, S value) {
    Tensor<S> t(std::move(sh));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Deterministic RNG. All distributions are hand-rolled on top of mt19937_64 so
// a seed produces the same stream on every standard library / platform.
class Rng {
public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  int64_t below(int64_t n) {
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do { x = eng_(); } while (x >= limit);
    return static_cast<int64_t>(x % un);
  }

  // Box-Muller, one value per call (the pair's second half is discarded so the
  // draw count stays easy to reason about).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Normal(0, std) re-drawn until within +-2 std, the usual ViT init.
  double trunc_normal(double stddev) {
    double v = normal();
    while (v < -2.0 || v > 2.0) v = normal();
    return v * stddev;
  }

  template <class S>
  void fill_uniform(Tensor<S>& t, double lo, double hi) {
    for (S& v : t.data) v = static_cast<S>(uniform(lo, hi));
  }
  template <class S>
  void fill_normal(Tensor<S>& t, double stddev) {
    for (S& v : t.data) v = static_cast<S>(normal() * stddev);
  }
  template <class S>
  void fill_trunc_normal(Tensor<S>& t, double stddev) {
    for (S& v : t.data) v = static_cast<S>(trunc_normal(stddev));
  }

private:
  std::mt19937_64 eng_;
};

}  // namespace turbovit
