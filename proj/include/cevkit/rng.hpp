/*
 * Copyright 2026 The cevkit Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Frozen random streams. Every random decision in cevkit (sampling shuffles,
// split shuffles, parameter init, synthetic data) goes through Rng so that a
// (seed, input) pair produces the same bytes on every conforming platform.
//
//   engine:   std::mt19937_64 (its output sequence is fixed by the standard)
//   bounded:  rejection sampling on the raw 64-bit output, no modulo bias
//   uniform:  top 53 bits scaled by 2^-53, in [0, 1)
//   normal:   Box-Muller, one value per call (the sine branch is discarded)
//   shuffle:  Fisher-Yates, i from n-1 down to 1, swap(i, Bounded(i + 1))
//
// std::uniform_int_distribution and friends are implementation-defined and
// are never used.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace cevkit {

// SplitMix64 finalizer; used to derive independent sub-seeds.
inline constexpr std::uint64_t MixSeed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t DeriveSeed(std::uint64_t seed,
                                          std::uint64_t stream) {
  return MixSeed(seed ^ MixSeed(stream));
}

// FNV-1a, 64-bit.
inline constexpr std::uint64_t HashString(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t Next() { return engine_(); }

  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t Bounded(std::uint64_t bound) {
    // Largest multiple of bound that fits; draws at or above it are rejected.
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  double Uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double Normal(double mean = 0.0, double stddev = 1.0) {
    double u1;
    do {
      u1 = Uniform();
    } while (u1 <= 0.0);
    const double u2 = Uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void Shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(Bounded(i));
      using std::swap;
      swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace cevkit
