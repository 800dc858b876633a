// rng.hpp - deterministic counter-based random number generator
//
// SplitMix64 over an advancing 64-bit state. The integer stream depends only
// on integer arithmetic, so identical seeds give identical streams on every
// platform. Gaussian draws go through Box-Muller (two uniforms per call, no
// cached spare), so the stream position stays a pure function of call count.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "qlstm/errors.hpp"

namespace qlstm {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; u1 in (0, 1] keeps the log finite.
  double normal() {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n) via 128-bit multiply (no modulo bias).
  std::uint64_t index(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(index(i));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

  // Derive an independent stream (e.g. per-epoch shuffling) without
  // disturbing this one.
  Rng fork(std::uint64_t salt) const {
    Rng r(seed_ ^ (0x517cc1b727220a95ULL * (salt + 1)));
    return r;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

}  // namespace qlstm
