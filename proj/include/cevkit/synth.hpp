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

// Synthetic frames: manifests with a realistic label skew and images whose
// pixels are a deterministic function of (frame_id, label set).

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>

#include "cevkit/error.hpp"
#include "cevkit/manifest.hpp"
#include "cevkit/rng.hpp"
#include "cevkit/taxonomy.hpp"
#include "cevkit/vit.hpp"

namespace cevkit {

// Relative label frequencies of a full capsule-endoscopy corpus; colon is
// ~15,000x more common than z_line.
inline constexpr std::array<double, kNumLabels> kReferenceLabelFrequency = {
    2009,   2256,  254994, 1375918, 1878361, 122,   3183,  3692,  5325,
    16803, 391715, 39105,  6228,    31773,   17660, 18415, 11428};

// Frames carrying exactly k = 1..5 labels in the same corpus.
inline constexpr std::array<double, 5> kReferenceCardinalityFrequency = {
    2994127, 495142, 22501, 1767, 1};

struct SynthConfig {
  std::uint64_t frames = 200;
  std::uint64_t seed = 0;
  std::uint64_t videos = 3;
};

namespace synth_internal {

template <std::size_t N>
std::size_t Draw(Rng& rng, const std::array<double, N>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.Uniform() * total;
  for (std::size_t i = 0; i < N; ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  for (std::size_t i = N; i-- > 0;) {
    if (weights[i] > 0) return i;
  }
  return 0;
}

}  // namespace synth_internal

inline std::string VideoId(std::uint64_t video) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%03llu", static_cast<unsigned long long>(video + 1));
  return buf;
}

// Frames are spread over `videos` contiguous blocks. Each frame draws a
// label count from kReferenceCardinalityFrequency and then that many
// distinct labels, weighted by kReferenceLabelFrequency.
inline Manifest SynthesizeManifest(const SynthConfig& cfg) {
  if (cfg.videos == 0) throw Error(ErrorCode::kInvalidConfig, "videos must be >= 1");
  Rng rng(DeriveSeed(cfg.seed, 0x73796e7468ULL));  // "synth"
  Manifest m;
  m.records.reserve(cfg.frames);
  const std::uint64_t per_video = (cfg.frames + cfg.videos - 1) / cfg.videos;
  for (std::uint64_t i = 0; i < cfg.frames; ++i) {
    FrameRecord r;
    const std::uint64_t video = per_video == 0 ? 0 : i / per_video;
    r.video_id = VideoId(video);
    r.frame_index = i - video * per_video;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_%06llu", static_cast<unsigned long long>(r.frame_index));
    r.frame_id = r.video_id + buf;
    const std::size_t k = synth_internal::Draw(rng, kReferenceCardinalityFrequency) + 1;
    auto weights = kReferenceLabelFrequency;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t c = synth_internal::Draw(rng, weights);
      r.labels.Insert(LabelId::FromIndex(static_cast<int>(c)));
      weights[c] = 0.0;
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

// Image [channels, size, size]: low-amplitude noise keyed by the frame id,
// plus one plane wave per label. Label l lives in channel l % channels with
// spatial frequency (1 + l % 4, 1 + l / 4) and a small per-frame phase jitter.
inline vit::Tensor SynthesizeImage(const FrameRecord& frame, const vit::ViTConfig& cfg) {
  const std::size_t C = cfg.channels, S = cfg.image_size;
  vit::Tensor image({C, S, S});
  Rng rng(HashString(frame.frame_id));
  for (double& v : image.data) v = rng.Normal(0.0, 0.1);
  const double two_pi = 2.0 * std::numbers::pi;
  for (LabelId id : frame.labels.ids()) {
    const int l = id.index();
    const std::size_t c = static_cast<std::size_t>(l) % C;
    const double fx = 1 + l % 4, fy = 1 + l / 4;
    const double phase = two_pi * l / kNumLabels + 0.2 * (rng.Uniform() - 0.5);
    for (std::size_t y = 0; y < S; ++y) {
      for (std::size_t x = 0; x < S; ++x) {
        image.at(c, y, x) +=
            std::sin(two_pi * (fx * static_cast<double>(x) + fy * static_cast<double>(y)) /
                         static_cast<double>(S) + phase);
      }
    }
  }
  return image;
}

}  // namespace cevkit
