#pragma once

// Portable seeded randomness. std::mt19937_64 output is fully specified by
// the standard; the distributions below are written out so that draws are
// identical across standard library implementations.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "tsw/pulse.hpp"

namespace tsw {

/// Independent child seed for a named stream of a root seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return detail::splitmix64(root ^ detail::splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n), n > 0, without modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  /// Uniform direction on the unit sphere in `dim` dimensions.
  std::vector<double> unit_vector(std::size_t dim) {
    std::vector<double> v(dim);
    double norm = 0.0;
    while (norm == 0.0) {
      norm = 0.0;
      for (auto& x : v) {
        x = normal();
        norm += x * x;
      }
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace tsw
