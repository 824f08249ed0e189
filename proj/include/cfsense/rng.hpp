#pragma once

// Deterministic random number utilities. The standard distributions are
// implementation-defined, so sampling is hand-rolled on top of mt19937_64
// to make outputs byte-stable across standard libraries.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace cfsense {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; one draw consumes two uniforms.
  double normal() {
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, bound) by rejection on masked bits.
  std::uint64_t below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    std::uint64_t mask = bound - 1;
    mask |= mask >> 1;
    mask |= mask >> 2;
    mask |= mask >> 4;
    mask |= mask >> 8;
    mask |= mask >> 16;
    mask |= mask >> 32;
    for (;;) {
      const std::uint64_t r = gen_() & mask;
      if (r < bound) return r;
    }
  }

  // Fisher-Yates permutation of {0, ..., n-1}.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i-- > 1;) {
      const std::size_t j = static_cast<std::size_t>(below(i + 1));
      std::swap(idx[i], idx[j]);
    }
    return idx;
  }

  // k distinct indices from {0, ..., n-1} (partial Fisher-Yates).
  std::vector<std::size_t> sample(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx = permutation(n);
    if (k < n) idx.resize(k);
    return idx;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace cfsense
