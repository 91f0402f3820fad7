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

// Frame manifests: one CSV row per video frame with its ground-truth labels,
// and the per-label / per-cardinality counts derived from them.
//
//   frame_id,video_id,frame_index,labels
//   001_000000,001,0,colon
//   001_000001,001,1,small_intestine;blood
//
// The labels field is a ';'-separated list; spaces and hyphens in names are
// accepted on input, canonical underscore names are written on output.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "cevkit/error.hpp"
#include "cevkit/io.hpp"
#include "cevkit/taxonomy.hpp"

namespace cevkit {

inline constexpr std::string_view kManifestHeader =
    "frame_id,video_id,frame_index,labels";

struct FrameRecord {
  std::string frame_id;
  std::string video_id;
  std::uint64_t frame_index = 0;
  LabelSet labels;

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

struct Manifest {
  std::vector<FrameRecord> records;
  std::string source_path;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  // frame_id -> position in `records`.
  std::unordered_map<std::string, std::size_t> Index() const {
    std::unordered_map<std::string, std::size_t> index;
    index.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      index.emplace(records[i].frame_id, i);
    }
    return index;
  }
};

namespace manifest_internal {

inline bool ValidKey(std::string_view key) {
  return !key.empty() && key.find_first_of(",;\r\n\"") == std::string_view::npos;
}

inline FrameRecord ParseRow(std::string_view line, std::size_t line_no) {
  const auto fields = SplitFields(line, ',');
  if (fields.size() != 4) {
    throw Error(ErrorCode::kMalformedRow,
                "line " + std::to_string(line_no) + ": expected 4 fields, got " +
                    std::to_string(fields.size()),
                line_no);
  }
  FrameRecord record;
  if (fields[0].empty() || fields[1].empty()) {
    throw Error(ErrorCode::kMalformedRow,
                "line " + std::to_string(line_no) + ": empty frame_id or video_id",
                line_no);
  }
  record.frame_id = std::string(fields[0]);
  record.video_id = std::string(fields[1]);
  if (!ParseInteger(fields[2], record.frame_index)) {
    throw Error(ErrorCode::kMalformedRow,
                "line " + std::to_string(line_no) + ": bad frame_index '" +
                    std::string(fields[2]) + "'",
                line_no);
  }
  if (fields[3].find_first_not_of(" \t") == std::string_view::npos) {
    throw Error(ErrorCode::kEmptyLabelSet,
                "line " + std::to_string(line_no) + ": frame " +
                    record.frame_id + " has no labels",
                line_no);
  }
  for (std::string_view token : SplitFields(fields[3], ';')) {
    try {
      record.labels.Insert(ParseLabel(token));
    } catch (const Error& e) {
      throw Error(ErrorCode::kMalformedRow,
                  "line " + std::to_string(line_no) + ": unknown label '" +
                      std::string(token) + "'",
                  line_no);
    }
  }
  return record;
}

}  // namespace manifest_internal

// Single pass over the stream; one FrameRecord kept per row.
inline Manifest ParseManifest(std::istream& in, std::string source_path = "") {
  Manifest manifest;
  manifest.source_path = std::move(source_path);
  std::string line;
  if (!ReadLine(in, line)) {
    throw Error(ErrorCode::kSchemaMismatch, "missing manifest header", 1);
  }
  StripUtf8Bom(line);
  if (line != kManifestHeader) {
    throw Error(ErrorCode::kSchemaMismatch,
                "line 1: expected header '" + std::string(kManifestHeader) +
                    "', got '" + line + "'",
                1);
  }
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t line_no = 1;
  while (ReadLine(in, line)) {
    ++line_no;
    FrameRecord record = manifest_internal::ParseRow(line, line_no);
    auto [it, inserted] = seen.emplace(record.frame_id, line_no);
    if (!inserted) {
      throw Error(ErrorCode::kDuplicateFrameId,
                  "line " + std::to_string(line_no) + ": frame_id '" +
                      record.frame_id + "' already defined on line " +
                      std::to_string(it->second),
                  line_no);
    }
    manifest.records.push_back(std::move(record));
  }
  if (in.bad()) throw Error(ErrorCode::kIo, "read failed: " + manifest.source_path);
  return manifest;
}

inline Manifest ReadManifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return ParseManifest(in, path.string());
}

inline std::string FormatManifest(const Manifest& manifest) {
  std::string out;
  out.reserve(manifest.records.size() * 48 + 64);
  out.append(kManifestHeader);
  out.push_back('\n');
  for (const auto& r : manifest.records) {
    if (!manifest_internal::ValidKey(r.frame_id) ||
        !manifest_internal::ValidKey(r.video_id)) {
      throw Error(ErrorCode::kConsistency,
                  "frame '" + r.frame_id + "' has an unwritable id");
    }
    if (r.labels.empty()) {
      throw Error(ErrorCode::kEmptyLabelSet, "frame " + r.frame_id);
    }
    out.append(r.frame_id).push_back(',');
    out.append(r.video_id).push_back(',');
    out.append(std::to_string(r.frame_index)).push_back(',');
    out.append(r.labels.ToString()).push_back('\n');
  }
  return out;
}

inline void WriteManifest(const Manifest& manifest,
                          const std::filesystem::path& path) {
  WriteFile(path, FormatManifest(manifest));
}

struct DatasetStats {
  std::array<std::uint64_t, kNumLabels> per_label_count{};
  // Index k holds the number of frames with exactly k labels; index 0 is
  // always zero for ground-truth manifests.
  std::array<std::uint64_t, kNumLabels + 1> cardinality_histogram{};
  std::uint64_t total_frames = 0;

  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;

  // Throws kConsistency unless both table views agree:
  //   sum_k k * hist[k] == sum_c per_label[c]  and  sum_k hist[k] == total.
  void Validate() const {
    std::uint64_t weighted = 0;
    std::uint64_t frames = 0;
    for (int k = 0; k <= kNumLabels; ++k) {
      weighted += static_cast<std::uint64_t>(k) * cardinality_histogram[k];
      frames += cardinality_histogram[k];
    }
    std::uint64_t label_sum = 0;
    for (auto c : per_label_count) label_sum += c;
    if (cardinality_histogram[0] != 0) {
      throw Error(ErrorCode::kConsistency, "histogram has unlabeled frames");
    }
    if (weighted != label_sum) {
      throw Error(ErrorCode::kConsistency,
                  "sum of k*hist[k] (" + std::to_string(weighted) +
                      ") != sum of per-label counts (" +
                      std::to_string(label_sum) + ")");
    }
    if (frames != total_frames) {
      throw Error(ErrorCode::kConsistency,
                  "histogram total (" + std::to_string(frames) +
                      ") != total frames (" + std::to_string(total_frames) + ")");
    }
  }
};

namespace manifest_internal {

inline void Accumulate(std::span<const FrameRecord> records, DatasetStats& s) {
  for (const auto& r : records) {
    const std::uint32_t mask = r.labels.mask();
    for (std::uint32_t b = mask; b != 0; b &= b - 1) {
      ++s.per_label_count[std::countr_zero(b)];
    }
    ++s.cardinality_histogram[std::popcount(mask)];
    ++s.total_frames;
  }
}

}  // namespace manifest_internal

// Counts are integers merged by addition, so the result does not depend on
// `num_threads`.
inline DatasetStats ComputeStats(const Manifest& manifest,
                                 unsigned num_threads = 1) {
  const std::span<const FrameRecord> records(manifest.records);
  num_threads = std::max(1u, num_threads);
  if (num_threads == 1 || records.size() < 2 * num_threads) {
    DatasetStats s;
    manifest_internal::Accumulate(records, s);
    return s;
  }
  std::vector<DatasetStats> partial(num_threads);
  std::vector<std::thread> workers;
  const std::size_t chunk = (records.size() + num_threads - 1) / num_threads;
  for (unsigned t = 0; t < num_threads; ++t) {
    const std::size_t begin = std::min(records.size(), t * chunk);
    const std::size_t end = std::min(records.size(), begin + chunk);
    workers.emplace_back([&, t, begin, end] {
      manifest_internal::Accumulate(records.subspan(begin, end - begin),
                                    partial[t]);
    });
  }
  for (auto& w : workers) w.join();
  DatasetStats s;
  for (const auto& p : partial) {
    for (int c = 0; c < kNumLabels; ++c) s.per_label_count[c] += p.per_label_count[c];
    for (int k = 0; k <= kNumLabels; ++k)
      s.cardinality_histogram[k] += p.cardinality_histogram[k];
    s.total_frames += p.total_frames;
  }
  return s;
}

// {"per_label": {<name>: n, ...}, "cardinality_histogram": {"1": n, ...,
// "17": n}, "total": n}, labels in index order.
inline Json StatsToJson(const DatasetStats& stats) {
  stats.Validate();
  Json per_label = Json::object();
  for (int c = 0; c < kNumLabels; ++c) {
    per_label[std::string(kLabelNames[c])] = stats.per_label_count[c];
  }
  Json histogram = Json::object();
  for (int k = 1; k <= kNumLabels; ++k) {
    histogram[std::to_string(k)] = stats.cardinality_histogram[k];
  }
  Json doc = Json::object();
  doc["per_label"] = std::move(per_label);
  doc["cardinality_histogram"] = std::move(histogram);
  doc["total"] = stats.total_frames;
  return doc;
}

inline DatasetStats StatsFromJson(const Json& doc) {
  auto is_count = [](const Json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  };
  auto fail = [](const std::string& what) -> Error {
    return Error(ErrorCode::kSchemaMismatch, "stats report: " + what);
  };
  if (!doc.is_object() || doc.size() != 3 || !doc.contains("per_label") ||
      !doc.contains("cardinality_histogram") || !doc.contains("total")) {
    throw fail("expected keys per_label, cardinality_histogram, total");
  }
  DatasetStats stats;
  const Json& per_label = doc["per_label"];
  if (!per_label.is_object() || per_label.size() != kNumLabels) {
    throw fail("per_label must list all 17 labels");
  }
  for (int c = 0; c < kNumLabels; ++c) {
    const std::string name(kLabelNames[c]);
    if (!per_label.contains(name) || !is_count(per_label[name])) {
      throw fail("per_label." + name + " missing or not a count");
    }
    stats.per_label_count[c] = per_label[name].get<std::uint64_t>();
  }
  const Json& histogram = doc["cardinality_histogram"];
  if (!histogram.is_object() || histogram.size() != kNumLabels) {
    throw fail("cardinality_histogram must have keys 1..17");
  }
  for (int k = 1; k <= kNumLabels; ++k) {
    const std::string key = std::to_string(k);
    if (!histogram.contains(key) || !is_count(histogram[key])) {
      throw fail("cardinality_histogram." + key + " missing or not a count");
    }
    stats.cardinality_histogram[k] = histogram[key].get<std::uint64_t>();
  }
  if (!is_count(doc["total"])) throw fail("total is not a count");
  stats.total_frames = doc["total"].get<std::uint64_t>();
  stats.Validate();
  return stats;
}

inline void WriteStatsReport(const DatasetStats& stats,
                             const std::filesystem::path& path) {
  WriteFile(path, DumpJson(StatsToJson(stats)));
}

inline DatasetStats ReadStatsReport(const std::filesystem::path& path) {
  return StatsFromJson(ReadJsonFile(path));
}

}  // namespace cevkit
