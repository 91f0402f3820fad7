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

// Multi-label under-sampling and the train/validation split.
//
// Selection walks label-cardinality buckets from 17 down to 1. Buckets at or
// above `full_inclusion_min_cardinality` are taken whole. Each lower bucket is
// shuffled (Fisher-Yates, see rng.hpp) with a stream derived from
// (seed, cardinality) and scanned once: a frame is taken iff at least one of
// its labels is still below `target_per_class`. Selecting a frame credits all
// of its labels, so popular classes may overshoot the target.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <limits>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cevkit/error.hpp"
#include "cevkit/io.hpp"
#include "cevkit/manifest.hpp"
#include "cevkit/rng.hpp"
#include "cevkit/taxonomy.hpp"

namespace cevkit {

struct SamplingConfig {
  std::uint64_t target_per_class = 3000;
  int full_inclusion_min_cardinality = 4;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
  // Seed of the split shuffle; recorded separately so that re-splitting a
  // published selection does not lose the selection seed.
  std::uint64_t split_seed = 0;

  friend bool operator==(const SamplingConfig&, const SamplingConfig&) = default;

  void Validate() const {
    if (target_per_class < 1) {
      throw Error(ErrorCode::kInvalidConfig, "target_per_class must be >= 1");
    }
    if (full_inclusion_min_cardinality < 1 ||
        full_inclusion_min_cardinality > kNumLabels) {
      throw Error(ErrorCode::kInvalidConfig,
                  "full_inclusion_min_cardinality must be in [1, 17]");
    }
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw Error(ErrorCode::kInvalidConfig,
                  "validation_fraction must be in (0, 1)");
    }
  }
};

using ClassCounts = std::array<std::uint64_t, kNumLabels>;

struct SelectionPlan {
  SamplingConfig config;
  std::string manifest_path;
  // Selection order: full-inclusion buckets first, then scan order.
  std::vector<std::string> selected;
  std::vector<std::string> train;
  std::vector<std::string> validation;
  ClassCounts per_class_selected{};
  ClassCounts per_class_train{};
  ClassCounts per_class_validation{};

  bool is_split() const { return !train.empty() || !validation.empty(); }

  friend bool operator==(const SelectionPlan&, const SelectionPlan&) = default;
};

namespace sampler_internal {

using Buckets = std::array<std::vector<std::uint32_t>, kNumLabels + 1>;

inline void Partition(std::span<const FrameRecord> records, std::uint32_t offset,
                      Buckets& out) {
  for (std::uint32_t i = 0; i < records.size(); ++i) {
    const int k = records[i].labels.cardinality();
    if (k == 0) {
      throw Error(ErrorCode::kEmptyLabelSet,
                  "frame " + records[i].frame_id + " has no labels");
    }
    out[k].push_back(offset + i);
  }
}

// Buckets hold manifest positions in manifest order regardless of the
// number of workers: chunk results are concatenated in chunk order.
inline Buckets PartitionByCardinality(const Manifest& manifest,
                                      unsigned num_threads) {
  const std::span<const FrameRecord> records(manifest.records);
  num_threads = std::max(1u, num_threads);
  Buckets buckets;
  if (num_threads == 1 || records.size() < 2 * num_threads) {
    Partition(records, 0, buckets);
    return buckets;
  }
  std::vector<Buckets> partial(num_threads);
  std::vector<std::exception_ptr> errors(num_threads);
  std::vector<std::thread> workers;
  const std::size_t chunk = (records.size() + num_threads - 1) / num_threads;
  for (unsigned t = 0; t < num_threads; ++t) {
    const std::size_t begin = std::min(records.size(), t * chunk);
    const std::size_t end = std::min(records.size(), begin + chunk);
    workers.emplace_back([&, t, begin, end] {
      try {
        Partition(records.subspan(begin, end - begin),
                  static_cast<std::uint32_t>(begin), partial[t]);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (int k = 0; k <= kNumLabels; ++k) {
    for (auto& p : partial) {
      buckets[k].insert(buckets[k].end(), p[k].begin(), p[k].end());
    }
  }
  return buckets;
}

inline void Credit(LabelSet labels, ClassCounts& counts) {
  for (std::uint32_t b = labels.mask(); b != 0; b &= b - 1) {
    ++counts[std::countr_zero(b)];
  }
}

inline constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;  // "split"

}  // namespace sampler_internal

// Selection only; the split fields of the returned plan are empty.
// Deterministic in (manifest order, cfg); `num_threads` only affects the
// bucket partitioning and never the result.
inline SelectionPlan UnderSample(const Manifest& manifest,
                                 const SamplingConfig& cfg,
                                 unsigned num_threads = 1) {
  using namespace sampler_internal;
  cfg.Validate();
  if (manifest.records.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::kInvalidConfig, "manifest too large");
  }
  SelectionPlan plan;
  plan.config = cfg;
  plan.manifest_path = manifest.source_path;

  Buckets buckets = PartitionByCardinality(manifest, num_threads);
  ClassCounts& counts = plan.per_class_selected;
  auto take = [&](std::uint32_t pos) {
    const FrameRecord& r = manifest.records[pos];
    plan.selected.push_back(r.frame_id);
    Credit(r.labels, counts);
  };

  const int full_min = cfg.full_inclusion_min_cardinality;
  for (int k = kNumLabels; k >= full_min; --k) {
    for (std::uint32_t pos : buckets[k]) take(pos);
  }

  // Frames not yet scanned, per class. A class is "open" while it is below
  // target and still has unscanned frames; once no class is open no further
  // frame can be taken and the scan stops.
  ClassCounts remaining{};
  for (int k = 1; k < full_min; ++k) {
    for (std::uint32_t pos : buckets[k]) Credit(manifest.records[pos].labels, remaining);
  }
  const std::uint64_t target = cfg.target_per_class;
  auto open_classes = [&] {
    int open = 0;
    for (int c = 0; c < kNumLabels; ++c) {
      open += counts[c] < target && remaining[c] > 0;
    }
    return open;
  };
  int open = open_classes();

  for (int k = full_min - 1; k >= 1 && open > 0; --k) {
    std::vector<std::uint32_t>& bucket = buckets[k];
    Rng rng(DeriveSeed(cfg.seed, static_cast<std::uint64_t>(k)));
    rng.Shuffle(std::span<std::uint32_t>(bucket));
    for (std::uint32_t pos : bucket) {
      if (open == 0) break;
      const LabelSet labels = manifest.records[pos].labels;
      bool wanted = false;
      for (std::uint32_t b = labels.mask(); b != 0; b &= b - 1) {
        const int c = std::countr_zero(b);
        wanted = wanted || counts[c] < target;
        --remaining[c];
      }
      if (wanted) take(pos);
      // Only the classes of this frame can change state.
      for (std::uint32_t b = labels.mask(); b != 0; b &= b - 1) {
        const int c = std::countr_zero(b);
        // Before this frame the class still had it unscanned.
        const bool was_open = counts[c] - (wanted ? 1 : 0) < target;
        const bool is_open = counts[c] < target && remaining[c] > 0;
        open += static_cast<int>(is_open) - static_cast<int>(was_open);
      }
    }
  }
  return plan;
}

namespace sampler_internal {

// Greedy split state: validation count per class against a fractional quota.
class SplitState {
 public:
  SplitState(const ClassCounts& totals, double fraction) {
    for (int c = 0; c < kNumLabels; ++c) {
      quota_[c] = fraction * static_cast<double>(totals[c]);
    }
  }

  double deviation(int c) const {
    return static_cast<double>(val_[c]) - quota_[c];
  }

  bool HasRoom(LabelSet labels) const {
    for (std::uint32_t b = labels.mask(); b != 0; b &= b - 1) {
      const int c = std::countr_zero(b);
      if (static_cast<double>(val_[c]) + 1.0 > quota_[c] + kSlack) return false;
    }
    return true;
  }

  void Add(LabelSet labels, int delta) {
    for (std::uint32_t b = labels.mask(); b != 0; b &= b - 1) {
      val_[std::countr_zero(b)] += delta;
    }
  }

  // Frames by which class c lies outside quota +/- 1.
  double Violation(int c) const {
    return std::max(0.0, std::abs(deviation(c)) - 1.0 - kSlack);
  }

  double TotalViolation() const {
    double v = 0.0;
    for (int c = 0; c < kNumLabels; ++c) v += Violation(c);
    return v;
  }

  // Change of TotalViolation if `in` joins validation and `out` leaves it.
  double ViolationDelta(LabelSet in, LabelSet out) const {
    const LabelSet touched = in | out;
    double delta = 0.0;
    for (std::uint32_t b = touched.mask(); b != 0; b &= b - 1) {
      const int c = std::countr_zero(b);
      const int shift = static_cast<int>(in.contains(c)) -
                        static_cast<int>(out.contains(c));
      if (shift == 0) continue;
      const double after = std::max(
          0.0, std::abs(deviation(c) + shift) - 1.0 - kSlack);
      delta += after - Violation(c);
    }
    return delta;
  }

 private:
  static constexpr double kSlack = 1e-9;
  std::array<double, kNumLabels> quota_{};
  std::array<std::int64_t, kNumLabels> val_{};
};

}  // namespace sampler_internal

// Partitions plan.selected into train and validation.
//
// Frames are shuffled with a stream derived from cfg.split_seed, then
// ordered by descending label count (stable), so multi-label frames are
// placed while every class still has room. A frame goes to validation iff
// every one of its classes still has val + 1 <= fraction * selected; single-
// label classes therefore get exactly floor(fraction * n) validation frames.
// A repair pass then moves or swaps frames until every class is within one
// frame of its quota, or no move reduces the total excess.
inline SelectionPlan SplitTrainVal(const SelectionPlan& selection,
                                   const Manifest& manifest,
                                   const SamplingConfig& cfg) {
  using namespace sampler_internal;
  cfg.Validate();
  SelectionPlan plan = selection;
  plan.config.validation_fraction = cfg.validation_fraction;
  plan.config.split_seed = cfg.split_seed;
  plan.train.clear();
  plan.validation.clear();

  const auto index = manifest.Index();
  std::vector<std::uint32_t> order;
  order.reserve(plan.selected.size());
  ClassCounts totals{};
  for (const auto& id : plan.selected) {
    auto it = index.find(id);
    if (it == index.end()) {
      throw Error(ErrorCode::kUnknownFrame, "selected frame '" + id +
                                                "' is not in the manifest");
    }
    order.push_back(static_cast<std::uint32_t>(it->second));
    Credit(manifest.records[it->second].labels, totals);
  }
  if (totals != plan.per_class_selected) {
    throw Error(ErrorCode::kConsistency,
                "per-class selected counts do not match the manifest");
  }

  Rng rng(DeriveSeed(cfg.split_seed, kSplitStream));
  rng.Shuffle(std::span<std::uint32_t>(order));
  auto labels_of = [&](std::uint32_t pos) { return manifest.records[pos].labels; };
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return labels_of(a).cardinality() > labels_of(b).cardinality();
  });

  SplitState state(totals, cfg.validation_fraction);
  std::vector<char> in_val(order.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const LabelSet labels = labels_of(order[i]);
    if (state.HasRoom(labels)) {
      state.Add(labels, +1);
      in_val[i] = 1;
    }
  }

  // Repair: first-improvement local search over single moves, then swaps.
  constexpr double kEps = 1e-12;
  bool improved = state.TotalViolation() > 0.0;
  while (improved && state.TotalViolation() > 0.0) {
    improved = false;
    for (std::size_t i = 0; i < order.size() && !improved; ++i) {
      const LabelSet labels = labels_of(order[i]);
      const double delta = in_val[i] ? state.ViolationDelta(LabelSet(), labels)
                                     : state.ViolationDelta(labels, LabelSet());
      if (delta < -kEps) {
        state.Add(labels, in_val[i] ? -1 : +1);
        in_val[i] ^= 1;
        improved = true;
      }
    }
    if (improved) continue;
    // Swaps. Adding a frame to validation only helps classes in deficit and
    // removing one only helps classes in excess, so an improving swap brings
    // in a deficit class or takes out an excess class.
    LabelSet deficit, excess;
    for (int c = 0; c < kNumLabels; ++c) {
      if (state.Violation(c) <= 0.0) continue;
      (state.deviation(c) < 0 ? deficit : excess).Insert(LabelId::FromIndex(c));
    }
    auto try_swap = [&](std::size_t i, std::size_t j) {
      const LabelSet incoming = labels_of(order[i]);
      const LabelSet outgoing = labels_of(order[j]);
      if (state.ViolationDelta(incoming, outgoing) >= -kEps) return false;
      state.Add(incoming, +1);
      state.Add(outgoing, -1);
      in_val[i] = 1;
      in_val[j] = 0;
      return true;
    };
    for (std::size_t i = 0; i < order.size() && !improved; ++i) {
      if (in_val[i] || (labels_of(order[i]) & deficit).empty()) continue;
      for (std::size_t j = 0; j < order.size() && !improved; ++j) {
        if (in_val[j]) improved = try_swap(i, j);
      }
    }
    for (std::size_t j = 0; j < order.size() && !improved; ++j) {
      if (!in_val[j] || (labels_of(order[j]) & excess).empty()) continue;
      for (std::size_t i = 0; i < order.size() && !improved; ++i) {
        if (!in_val[i]) improved = try_swap(i, j);
      }
    }
  }

  for (std::size_t i = 0; i < order.size(); ++i) {
    const FrameRecord& r = manifest.records[order[i]];
    if (in_val[i]) {
      plan.validation.push_back(r.frame_id);
      Credit(r.labels, plan.per_class_validation);
    } else {
      plan.train.push_back(r.frame_id);
      Credit(r.labels, plan.per_class_train);
    }
  }
  return plan;
}

// Throws kConsistency if the plan's internal bookkeeping is contradictory:
// duplicate ids, train/validation overlap, split lists that do not cover the
// selection, or per-class counts that cannot add up.
inline void ValidatePlan(const SelectionPlan& plan) {
  plan.config.Validate();
  std::unordered_set<std::string_view> selected;
  selected.reserve(plan.selected.size());
  for (const auto& id : plan.selected) {
    if (!selected.insert(id).second) {
      throw Error(ErrorCode::kConsistency, "frame '" + id + "' selected twice");
    }
  }
  std::unordered_set<std::string_view> seen;
  auto check_part = [&](const std::vector<std::string>& ids, const char* part) {
    for (const auto& id : ids) {
      if (!seen.insert(id).second) {
        throw Error(ErrorCode::kConsistency,
                    "frame '" + id + "' appears twice across train/validation");
      }
      if (!selected.contains(id)) {
        throw Error(ErrorCode::kConsistency,
                    std::string(part) + " frame '" + id + "' was not selected");
      }
    }
  };
  check_part(plan.train, "train");
  check_part(plan.validation, "validation");
  if (plan.is_split() && seen.size() != selected.size()) {
    throw Error(ErrorCode::kConsistency,
                "train and validation do not cover the selection");
  }
  std::uint64_t sum_selected = 0, sum_train = 0, sum_val = 0;
  for (int c = 0; c < kNumLabels; ++c) {
    if (plan.is_split() && plan.per_class_selected[c] !=
                               plan.per_class_train[c] + plan.per_class_validation[c]) {
      throw Error(ErrorCode::kConsistency,
                  "per_class." + std::string(kLabelNames[c]) +
                      ": selected != train + validation");
    }
    if (!plan.is_split() &&
        (plan.per_class_train[c] != 0 || plan.per_class_validation[c] != 0)) {
      throw Error(ErrorCode::kConsistency,
                  "per_class." + std::string(kLabelNames[c]) +
                      ": unsplit plan has train/validation counts");
    }
    sum_selected += plan.per_class_selected[c];
    sum_train += plan.per_class_train[c];
    sum_val += plan.per_class_validation[c];
  }
  // Every frame carries between 1 and 17 labels.
  auto bounded = [](std::uint64_t labels, std::size_t frames) {
    return labels >= frames && labels <= frames * kNumLabels;
  };
  if (!bounded(sum_selected, plan.selected.size()) ||
      !bounded(sum_train, plan.train.size()) ||
      !bounded(sum_val, plan.validation.size())) {
    throw Error(ErrorCode::kConsistency,
                "per-class counts incompatible with frame lists");
  }
}

// Recomputes all per-class counts from the manifest.
inline void ValidatePlanAgainst(const SelectionPlan& plan,
                                const Manifest& manifest) {
  ValidatePlan(plan);
  const auto index = manifest.Index();
  auto tally = [&](const std::vector<std::string>& ids) {
    ClassCounts counts{};
    for (const auto& id : ids) {
      auto it = index.find(id);
      if (it == index.end()) {
        throw Error(ErrorCode::kUnknownFrame,
                    "plan frame '" + id + "' is not in the manifest");
      }
      sampler_internal::Credit(manifest.records[it->second].labels, counts);
    }
    return counts;
  };
  if (tally(plan.selected) != plan.per_class_selected ||
      tally(plan.train) != plan.per_class_train ||
      tally(plan.validation) != plan.per_class_validation) {
    throw Error(ErrorCode::kConsistency,
                "per-class counts do not match the manifest");
  }
}

inline Json PlanToJson(const SelectionPlan& plan) {
  ValidatePlan(plan);
  Json config = Json::object();
  config["target_per_class"] = plan.config.target_per_class;
  config["full_inclusion_min_cardinality"] = plan.config.full_inclusion_min_cardinality;
  config["validation_fraction"] = plan.config.validation_fraction;
  config["seed"] = plan.config.seed;
  config["split_seed"] = plan.config.split_seed;
  Json per_class = Json::object();
  for (int c = 0; c < kNumLabels; ++c) {
    Json entry = Json::object();
    entry["selected"] = plan.per_class_selected[c];
    entry["train"] = plan.per_class_train[c];
    entry["validation"] = plan.per_class_validation[c];
    per_class[std::string(kLabelNames[c])] = std::move(entry);
  }
  Json doc = Json::object();
  doc["config"] = std::move(config);
  doc["manifest"] = plan.manifest_path;
  doc["selected"] = plan.selected;
  doc["train"] = plan.train;
  doc["validation"] = plan.validation;
  doc["per_class"] = std::move(per_class);
  return doc;
}

inline SelectionPlan PlanFromJson(const Json& doc) {
  auto fail = [](const std::string& what) {
    return Error(ErrorCode::kSchemaMismatch, "plan: " + what);
  };
  static constexpr std::array<const char*, 6> kKeys = {
      "config", "manifest", "selected", "train", "validation", "per_class"};
  if (!doc.is_object() || doc.size() != kKeys.size()) {
    throw fail("expected keys config, manifest, selected, train, validation, per_class");
  }
  for (const char* key : kKeys) {
    if (!doc.contains(key)) throw fail(std::string("missing key ") + key);
  }
  SelectionPlan plan;
  try {
    const Json& config = doc.at("config");
    if (!config.is_object() || config.size() != 5) throw fail("bad config");
    plan.config.target_per_class = config.at("target_per_class").get<std::uint64_t>();
    plan.config.full_inclusion_min_cardinality =
        config.at("full_inclusion_min_cardinality").get<int>();
    plan.config.validation_fraction = config.at("validation_fraction").get<double>();
    plan.config.seed = config.at("seed").get<std::uint64_t>();
    plan.config.split_seed = config.at("split_seed").get<std::uint64_t>();
    plan.manifest_path = doc.at("manifest").get<std::string>();
    plan.selected = doc.at("selected").get<std::vector<std::string>>();
    plan.train = doc.at("train").get<std::vector<std::string>>();
    plan.validation = doc.at("validation").get<std::vector<std::string>>();
    const Json& per_class = doc.at("per_class");
    if (!per_class.is_object() || per_class.size() != kNumLabels) {
      throw fail("per_class must list all 17 labels");
    }
    for (int c = 0; c < kNumLabels; ++c) {
      const Json& entry = per_class.at(std::string(kLabelNames[c]));
      if (!entry.is_object() || entry.size() != 3) throw fail("bad per_class entry");
      plan.per_class_selected[c] = entry.at("selected").get<std::uint64_t>();
      plan.per_class_train[c] = entry.at("train").get<std::uint64_t>();
      plan.per_class_validation[c] = entry.at("validation").get<std::uint64_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
  try {
    ValidatePlan(plan);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidConfig) throw fail(e.what());
    throw;
  }
  return plan;
}

inline void WritePlan(const SelectionPlan& plan, const std::filesystem::path& path) {
  WriteFile(path, DumpJson(PlanToJson(plan)));
}

inline SelectionPlan ReadPlan(const std::filesystem::path& path) {
  return PlanFromJson(ReadJsonFile(path));
}

}  // namespace cevkit
