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

// The 17 capsule-endoscopy labels and compact label-set arithmetic.
//
// Label indices are frozen: they define the column order of every manifest,
// prediction and report file. Indices 0-7 are anatomical landmarks, 8-16 are
// pathological findings.

#include <array>
#include <bit>
#include <cctype>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cevkit/error.hpp"

namespace cevkit {

inline constexpr int kNumLabels = 17;

enum class Category { kAnatomy, kPathology };

inline constexpr std::array<std::string_view, kNumLabels> kLabelNames = {
    "mouth",           "esophagus",   "stomach",
    "small_intestine", "colon",       "z_line",
    "pylorus",         "ileocecal_valve",
    "active_bleeding", "angiectasia", "blood",
    "erosion",         "erythema",    "hematin",
    "lymphangioectasis", "polyp",     "ulcer",
};

inline constexpr int kNumAnatomyLabels = 8;

class LabelId {
 public:
  constexpr LabelId() = default;

  // Throws Error(kUnknownLabel) for an out-of-range index.
  static LabelId FromIndex(int index) {
    if (index < 0 || index >= kNumLabels) {
      throw Error(ErrorCode::kUnknownLabel,
                  "label index " + std::to_string(index));
    }
    return LabelId(index);
  }

  constexpr int index() const { return index_; }
  constexpr std::string_view name() const { return kLabelNames[index_]; }
  constexpr Category category() const {
    return index_ < kNumAnatomyLabels ? Category::kAnatomy
                                      : Category::kPathology;
  }

  friend constexpr bool operator==(LabelId, LabelId) = default;
  friend constexpr auto operator<=>(LabelId, LabelId) = default;

 private:
  constexpr explicit LabelId(int index) : index_(index) {}
  int index_ = 0;
};

inline std::array<LabelId, kNumLabels> AllLabels() {
  std::array<LabelId, kNumLabels> out;
  for (int i = 0; i < kNumLabels; ++i) out[i] = LabelId::FromIndex(i);
  return out;
}

// Lowercases, trims ASCII whitespace and maps inner spaces and hyphens to
// underscores: "Small Intestine" and "z-line" both normalize.
inline std::string NormalizeLabelToken(std::string_view token) {
  std::size_t begin = 0;
  std::size_t end = token.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(token[begin])))
    ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(token[end - 1])))
    --end;
  std::string out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const unsigned char c = static_cast<unsigned char>(token[i]);
    if (c == ' ' || c == '-') {
      out.push_back('_');
    } else {
      out.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  return out;
}

inline LabelId ParseLabel(std::string_view token) {
  const std::string normalized = NormalizeLabelToken(token);
  for (int i = 0; i < kNumLabels; ++i) {
    if (kLabelNames[i] == normalized) return LabelId::FromIndex(i);
  }
  throw Error(ErrorCode::kUnknownLabel, "'" + std::string(token) + "'");
}

// Fixed-width set over the 17 labels.
class LabelSet {
 public:
  static constexpr std::uint32_t kFullMask = (1u << kNumLabels) - 1;

  constexpr LabelSet() = default;

  // Bits above the 17th are rejected.
  static LabelSet FromMask(std::uint32_t mask) {
    if ((mask & ~kFullMask) != 0) {
      throw Error(ErrorCode::kUnknownLabel, "label mask out of range");
    }
    return LabelSet(mask);
  }
  static constexpr LabelSet Full() { return LabelSet(kFullMask); }

  constexpr LabelSet(std::initializer_list<LabelId> ids) {
    for (LabelId id : ids) Insert(id);
  }

  constexpr std::uint32_t mask() const { return bits_; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr int cardinality() const { return std::popcount(bits_); }
  constexpr bool contains(LabelId id) const {
    return (bits_ >> id.index()) & 1u;
  }
  constexpr bool contains(int index) const { return (bits_ >> index) & 1u; }

  constexpr void Insert(LabelId id) { bits_ |= 1u << id.index(); }
  constexpr void Erase(LabelId id) { bits_ &= ~(1u << id.index()); }

  // Labels in index order.
  std::vector<LabelId> ids() const {
    std::vector<LabelId> out;
    for (std::uint32_t b = bits_; b != 0; b &= b - 1) {
      out.push_back(LabelId::FromIndex(std::countr_zero(b)));
    }
    return out;
  }

  // Canonical names joined by ';' in index order.
  std::string ToString() const {
    std::string out;
    for (std::uint32_t b = bits_; b != 0; b &= b - 1) {
      if (!out.empty()) out.push_back(';');
      out.append(kLabelNames[std::countr_zero(b)]);
    }
    return out;
  }

  friend constexpr LabelSet operator|(LabelSet a, LabelSet b) {
    return LabelSet(a.bits_ | b.bits_);
  }
  friend constexpr LabelSet operator&(LabelSet a, LabelSet b) {
    return LabelSet(a.bits_ & b.bits_);
  }
  friend constexpr bool operator==(LabelSet, LabelSet) = default;

 private:
  constexpr explicit LabelSet(std::uint32_t bits) : bits_(bits) {}
  std::uint32_t bits_ = 0;
};

inline int Cardinality(LabelSet s) { return s.cardinality(); }

inline LabelSet LabelSetFromNames(std::span<const std::string> names) {
  LabelSet out;
  for (const auto& name : names) out.Insert(ParseLabel(name));
  return out;
}

inline LabelSet LabelSetFromNames(
    std::initializer_list<std::string_view> names) {
  LabelSet out;
  for (auto name : names) out.Insert(ParseLabel(name));
  return out;
}

}  // namespace cevkit
