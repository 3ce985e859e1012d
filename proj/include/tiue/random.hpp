// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "tiue/tensor.hpp"

namespace tiue {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stateless counter-based generator: every draw is a pure function of its key.
struct NoiseKey {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  std::uint64_t bits(std::uint64_t item, std::uint64_t element) const {
    return mix64(mix64(mix64(mix64(seed) ^ stream) ^ item) ^ element);
  }
  /// Uniform in the open interval (0, 1).
  double uniform(std::uint64_t item, std::uint64_t element) const {
    return (static_cast<double>(bits(item, element) >> 11) + 0.5) * 0x1.0p-53;
  }
  /// Standard normal via Box-Muller on two keyed uniforms.
  double normal(std::uint64_t item, std::uint64_t element) const;
};

/// Standard-normal tensor; element (b, e) depends only on (key, first_item + b, e).
template <class T>
Tensor<T> normal_tensor(const Shape& shape, const NoiseKey& key, std::uint64_t first_item = 0);

/// Sequential generator over a counter; deterministic and platform independent.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : key_{seed, stream} {}

  std::uint64_t next() { return key_.bits(0, counter_++); }
  double uniform() { return key_.uniform(1, counter_++); }
  double normal() { return key_.normal(2, counter_++); }
  /// Uniform integer in [0, n).
  std::int64_t below(std::int64_t n);
  /// Uniform integer in [lo, hi).
  std::int64_t range(std::int64_t lo, std::int64_t hi) { return lo + below(hi - lo); }

 private:
  NoiseKey key_;
  std::uint64_t counter_ = 0;
};

}  // namespace tiue
