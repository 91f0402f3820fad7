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

#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cevkit/manifest.hpp"
#include "cevkit/rng.hpp"
#include "cevkit/sampler.hpp"

namespace cevkit::testing {

// Reference selection: the plain algorithm without the early-exit
// bookkeeping, with its own Fisher-Yates on a raw mt19937_64.
inline std::vector<std::string> ReferenceSelection(const Manifest& m, const SamplingConfig& cfg) {
  std::vector<std::vector<std::size_t>> buckets(kNumLabels + 1);
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    buckets[m.records[i].labels.cardinality()].push_back(i);
  }
  std::vector<std::uint64_t> count(kNumLabels, 0);
  std::vector<std::string> out;
  auto take = [&](std::size_t i) {
    out.push_back(m.records[i].frame_id);
    for (int c = 0; c < kNumLabels; ++c) count[c] += m.records[i].labels.contains(c);
  };
  for (int k = kNumLabels; k >= cfg.full_inclusion_min_cardinality; --k) {
    for (std::size_t i : buckets[k]) take(i);
  }
  for (int k = cfg.full_inclusion_min_cardinality - 1; k >= 1; --k) {
    std::mt19937_64 engine(DeriveSeed(cfg.seed, static_cast<std::uint64_t>(k)));
    auto& b = buckets[k];
    for (std::size_t i = b.size(); i > 1; --i) {
      const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
      const std::uint64_t limit = max - max % i;
      std::uint64_t x;
      do x = engine(); while (x >= limit);
      std::swap(b[i - 1], b[x % i]);
    }
    for (std::size_t i : b) {
      bool wanted = false;
      for (int c = 0; c < kNumLabels; ++c) {
        if (m.records[i].labels.contains(c) && count[c] < cfg.target_per_class) wanted = true;
      }
      if (wanted) take(i);
    }
  }
  return out;
}

}  // namespace cevkit::testing
