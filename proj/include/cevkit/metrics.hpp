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

// Score-thresholded average precision and per-video mAP.
//
// For one class with P positives, keep the entries scoring >= tau, rank them
// by score (descending, ties by frame_id ascending) and take
//
//   AP = (1/P) * sum over ranks k holding a positive of (positives in top k)/k
//
// AP is absent when P == 0 and 0 when nothing survives the threshold. A
// video's mAP@tau averages AP over the classes that have a positive in the
// video; the overall figure is the unweighted mean over videos.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cevkit/error.hpp"
#include "cevkit/io.hpp"
#include "cevkit/manifest.hpp"
#include "cevkit/taxonomy.hpp"

namespace cevkit {

inline constexpr std::array<double, 2> kDefaultThresholds = {0.5, 0.95};

struct ScoredFrame {
  std::string frame_id;
  double score = 0.0;
};

namespace metrics_internal {

struct RankEntry {
  std::string_view frame_id;
  double score;
  bool positive;
};

inline void CheckThreshold(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw Error(ErrorCode::kInvalidConfig,
                "threshold must be in [0, 1], got " + FormatDouble(tau));
  }
}

// Consumes `entries` (reorders them).
inline double RankedAp(std::vector<RankEntry>& entries, std::size_t num_positives,
                       double tau) {
  std::erase_if(entries, [tau](const RankEntry& e) { return !(e.score >= tau); });
  std::sort(entries.begin(), entries.end(), [](const RankEntry& a, const RankEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.frame_id < b.frame_id;
  });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (!entries[k].positive) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return sum / static_cast<double>(num_positives);
}

}  // namespace metrics_internal

// Throws kInvalidScore for NaN scores and kInvalidConfig for tau outside [0,1].
inline std::optional<double> AveragePrecision(
    std::span<const ScoredFrame> scores,
    const std::unordered_set<std::string>& positives, double tau) {
  metrics_internal::CheckThreshold(tau);
  std::vector<metrics_internal::RankEntry> entries;
  entries.reserve(scores.size());
  for (const auto& s : scores) {
    if (std::isnan(s.score)) {
      throw Error(ErrorCode::kInvalidScore, "NaN score for frame " + s.frame_id);
    }
    entries.push_back({s.frame_id, s.score, positives.contains(s.frame_id)});
  }
  if (positives.empty()) return std::nullopt;
  return metrics_internal::RankedAp(entries, positives.size(), tau);
}

// Unweighted mean, summed in the given order. Requires at least one value.
inline double OverallMap(std::span<const double> per_video) {
  if (per_video.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "overall mAP needs at least one video");
  }
  double sum = 0.0;
  for (double v : per_video) sum += v;
  return sum / static_cast<double>(per_video.size());
}

// Display rounding: half away from zero, which is half-up for [0, 1].
inline double RoundTo4(double value) { return std::round(value * 1e4) / 1e4; }

// ---------------------------------------------------------------------------
// Prediction files.

using ScoreVector = std::array<double, kNumLabels>;

struct PredictionRow {
  std::string frame_id;
  std::string video_id;
  ScoreVector scores{};

  friend bool operator==(const PredictionRow&, const PredictionRow&) = default;
};

struct PredictionSet {
  std::vector<PredictionRow> rows;
};

inline std::string PredictionHeader() {
  std::string header = "frame_id,video_id";
  for (auto name : kLabelNames) {
    header.push_back(',');
    header.append(name);
  }
  return header;
}

inline void CheckScore(double score, const std::string& frame_id) {
  if (!std::isfinite(score) || score < 0.0 || score > 1.0) {
    throw Error(ErrorCode::kInvalidScore,
                "frame " + frame_id + ": score " + FormatDouble(score) +
                    " outside [0, 1]");
  }
}

inline PredictionSet ParsePredictions(std::istream& in) {
  PredictionSet set;
  std::string line;
  if (!ReadLine(in, line)) {
    throw Error(ErrorCode::kSchemaMismatch, "missing prediction header", 1);
  }
  StripUtf8Bom(line);
  const std::size_t columns = SplitFields(line, ',').size();
  if (columns != 2 + kNumLabels) {
    throw Error(ErrorCode::kSchemaMismatch,
                "line 1: expected " + std::to_string(2 + kNumLabels) +
                    " columns, got " + std::to_string(columns),
                1);
  }
  if (line != PredictionHeader()) {
    throw Error(ErrorCode::kSchemaMismatch,
                "line 1: header must be frame_id,video_id followed by the 17 "
                "labels in canonical order",
                1);
  }
  std::unordered_set<std::string> seen;
  std::size_t line_no = 1;
  while (ReadLine(in, line)) {
    ++line_no;
    const auto fields = SplitFields(line, ',');
    if (fields.size() != 2 + kNumLabels) {
      throw Error(ErrorCode::kSchemaMismatch,
                  "line " + std::to_string(line_no) + ": expected " +
                      std::to_string(2 + kNumLabels) + " columns, got " +
                      std::to_string(fields.size()),
                  line_no);
    }
    PredictionRow row;
    row.frame_id = std::string(fields[0]);
    row.video_id = std::string(fields[1]);
    if (row.frame_id.empty() || row.video_id.empty()) {
      throw Error(ErrorCode::kMalformedRow,
                  "line " + std::to_string(line_no) + ": empty frame_id or video_id",
                  line_no);
    }
    for (int c = 0; c < kNumLabels; ++c) {
      double value;
      if (!ParseDouble(fields[2 + c], value)) {
        throw Error(ErrorCode::kMalformedRow,
                    "line " + std::to_string(line_no) + ": bad score '" +
                        std::string(fields[2 + c]) + "'",
                    line_no);
      }
      CheckScore(value, row.frame_id);
      row.scores[c] = value;
    }
    if (!seen.insert(row.frame_id).second) {
      throw Error(ErrorCode::kDuplicateFrameId,
                  "line " + std::to_string(line_no) + ": frame_id '" +
                      row.frame_id + "' repeated",
                  line_no);
    }
    set.rows.push_back(std::move(row));
  }
  return set;
}

inline PredictionSet ReadPredictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return ParsePredictions(in);
}

inline std::string FormatPredictions(const PredictionSet& set) {
  std::string out = PredictionHeader();
  out.push_back('\n');
  for (const auto& row : set.rows) {
    out.append(row.frame_id).push_back(',');
    out.append(row.video_id);
    for (double s : row.scores) {
      CheckScore(s, row.frame_id);
      out.push_back(',');
      out.append(FormatDouble(s));
    }
    out.push_back('\n');
  }
  return out;
}

inline void WritePredictions(const PredictionSet& set,
                             const std::filesystem::path& path) {
  WriteFile(path, FormatPredictions(set));
}

// ---------------------------------------------------------------------------
// Per-video evaluation.

using ClassAps = std::array<std::optional<double>, kNumLabels>;

struct VideoMap {
  double map = 0.0;
  ClassAps per_class_ap{};
  int excluded_classes = 0;
};

// Ground truth joined with predictions, grouped by video.
class Evaluation {
 public:
  // Throws kMissingPrediction / kUnknownFrame when the two sets do not cover
  // the same frames, and kConsistency when a frame's video ids disagree.
  Evaluation(const PredictionSet& predictions, const Manifest& truth) {
    std::unordered_map<std::string_view, const PredictionRow*> by_frame;
    by_frame.reserve(predictions.rows.size());
    for (const auto& row : predictions.rows) {
      for (double s : row.scores) {
        if (std::isnan(s)) {
          throw Error(ErrorCode::kInvalidScore, "NaN score for frame " + row.frame_id);
        }
      }
      if (!by_frame.emplace(row.frame_id, &row).second) {
        throw Error(ErrorCode::kDuplicateFrameId, "prediction for '" +
                                                      row.frame_id + "' repeated");
      }
    }
    std::unordered_set<std::string_view> truth_ids;
    truth_ids.reserve(truth.records.size());
    for (const auto& record : truth.records) {
      auto it = by_frame.find(record.frame_id);
      if (it == by_frame.end()) {
        throw Error(ErrorCode::kMissingPrediction, "no prediction for frame '" +
                                                       record.frame_id + "'");
      }
      if (it->second->video_id != record.video_id) {
        throw Error(ErrorCode::kConsistency,
                    "frame '" + record.frame_id + "' is in video '" +
                        record.video_id + "' but predicted under '" +
                        it->second->video_id + "'");
      }
      truth_ids.insert(record.frame_id);
      videos_[record.video_id].push_back(Frame{record.frame_id, record.labels,
                                               &it->second->scores});
    }
    for (const auto& row : predictions.rows) {
      if (!truth_ids.contains(row.frame_id)) {
        throw Error(ErrorCode::kUnknownFrame, "prediction for unknown frame '" +
                                                  row.frame_id + "'");
      }
    }
  }

  // Sorted ascending; this is also the summation order of the overall mean.
  std::vector<std::string> video_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, frames] : videos_) ids.push_back(id);
    return ids;
  }

  VideoMap MapAt(const std::string& video_id, double tau) const {
    metrics_internal::CheckThreshold(tau);
    auto it = videos_.find(video_id);
    if (it == videos_.end()) {
      throw Error(ErrorCode::kUnknownFrame, "no frames for video '" + video_id + "'");
    }
    const std::vector<Frame>& frames = it->second;
    VideoMap result;
    double sum = 0.0;
    int present = 0;
    std::vector<metrics_internal::RankEntry> entries;
    for (int c = 0; c < kNumLabels; ++c) {
      entries.clear();
      std::size_t positives = 0;
      for (const auto& f : frames) {
        const bool positive = f.labels.contains(c);
        positives += positive;
        entries.push_back({f.frame_id, (*f.scores)[c], positive});
      }
      if (positives == 0) {
        ++result.excluded_classes;
        continue;
      }
      const double ap = metrics_internal::RankedAp(entries, positives, tau);
      result.per_class_ap[c] = ap;
      sum += ap;
      ++present;
    }
    if (present == 0) {
      throw Error(ErrorCode::kConsistency, "video '" + video_id + "' has no labels");
    }
    result.map = sum / present;
    return result;
  }

 private:
  struct Frame {
    std::string_view frame_id;
    LabelSet labels;
    const ScoreVector* scores;
  };
  std::map<std::string, std::vector<Frame>, std::less<>> videos_;
};

inline double MapAt(const PredictionSet& predictions, const Manifest& truth,
                    const std::string& video_id, double tau) {
  return Evaluation(predictions, truth).MapAt(video_id, tau).map;
}

struct VideoReport {
  std::vector<double> map;                  // per threshold
  std::vector<ClassAps> per_class_ap;       // per threshold
  std::vector<int> excluded_classes;        // per threshold

  friend bool operator==(const VideoReport&, const VideoReport&) = default;
};

struct EvalReport {
  std::vector<double> thresholds;
  std::map<std::string, VideoReport> per_video;
  std::vector<double> overall;  // per threshold

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline void CheckThresholds(std::span<const double> thresholds) {
  if (thresholds.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "at least one threshold required");
  }
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    metrics_internal::CheckThreshold(thresholds[i]);
    for (std::size_t j = 0; j < i; ++j) {
      if (thresholds[i] == thresholds[j]) {
        throw Error(ErrorCode::kInvalidConfig,
                    "duplicate threshold " + FormatDouble(thresholds[i]));
      }
    }
  }
}

inline EvalReport Evaluate(const PredictionSet& predictions, const Manifest& truth,
                           std::span<const double> thresholds = kDefaultThresholds) {
  CheckThresholds(thresholds);
  const Evaluation evaluation(predictions, truth);
  EvalReport report;
  report.thresholds.assign(thresholds.begin(), thresholds.end());
  const auto videos = evaluation.video_ids();
  for (const auto& video : videos) {
    VideoReport& vr = report.per_video[video];
    for (double tau : thresholds) {
      VideoMap m = evaluation.MapAt(video, tau);
      vr.map.push_back(m.map);
      vr.per_class_ap.push_back(m.per_class_ap);
      vr.excluded_classes.push_back(m.excluded_classes);
    }
  }
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    if (videos.empty()) {
      throw Error(ErrorCode::kInvalidConfig, "ground truth has no frames");
    }
    std::vector<double> values;
    for (const auto& video : videos) values.push_back(report.per_video[video].map[t]);
    report.overall.push_back(OverallMap(values));
  }
  return report;
}

inline EvalReport Evaluate(const std::filesystem::path& predictions_path,
                           const std::filesystem::path& truth_path,
                           std::span<const double> thresholds = kDefaultThresholds) {
  return Evaluate(ReadPredictions(predictions_path), ReadManifest(truth_path),
                  thresholds);
}

// {thresholds: [...], per_video: {<id>: {map: {<tau>: x}, per_class_ap:
// {<tau>: {<label>: x|null}}, excluded_classes: {<tau>: n}}}, overall:
// {<tau>: x}}. Threshold keys use the shortest round-trip decimal of tau.
inline Json ReportToJson(const EvalReport& report) {
  CheckThresholds(report.thresholds);
  const std::size_t nt = report.thresholds.size();
  std::vector<std::string> keys;
  for (double tau : report.thresholds) keys.push_back(FormatDouble(tau));
  auto check_size = [nt](std::size_t n) {
    if (n != nt) throw Error(ErrorCode::kConsistency, "report arrays disagree with thresholds");
  };
  Json per_video = Json::object();
  for (const auto& [video, vr] : report.per_video) {
    check_size(vr.map.size());
    check_size(vr.per_class_ap.size());
    check_size(vr.excluded_classes.size());
    Json map = Json::object(), aps = Json::object(), excluded = Json::object();
    for (std::size_t t = 0; t < nt; ++t) {
      map[keys[t]] = vr.map[t];
      Json classes = Json::object();
      for (int c = 0; c < kNumLabels; ++c) {
        const auto& ap = vr.per_class_ap[t][c];
        classes[std::string(kLabelNames[c])] = ap ? Json(*ap) : Json(nullptr);
      }
      aps[keys[t]] = std::move(classes);
      excluded[keys[t]] = vr.excluded_classes[t];
    }
    Json entry = Json::object();
    entry["map"] = std::move(map);
    entry["per_class_ap"] = std::move(aps);
    entry["excluded_classes"] = std::move(excluded);
    per_video[video] = std::move(entry);
  }
  check_size(report.overall.size());
  Json overall = Json::object();
  for (std::size_t t = 0; t < nt; ++t) overall[keys[t]] = report.overall[t];
  Json doc = Json::object();
  doc["thresholds"] = report.thresholds;
  doc["per_video"] = std::move(per_video);
  doc["overall"] = std::move(overall);
  return doc;
}

inline EvalReport ReportFromJson(const Json& doc) {
  auto fail = [](const std::string& what) {
    return Error(ErrorCode::kSchemaMismatch, "report: " + what);
  };
  if (!doc.is_object() || doc.size() != 3 || !doc.contains("thresholds") ||
      !doc.contains("per_video") || !doc.contains("overall")) {
    throw fail("expected keys thresholds, per_video, overall");
  }
  EvalReport report;
  try {
    report.thresholds = doc.at("thresholds").get<std::vector<double>>();
    CheckThresholds(report.thresholds);
    std::vector<std::string> keys;
    for (double tau : report.thresholds) keys.push_back(FormatDouble(tau));
    auto check_value = [&](double v) {
      if (!(v >= 0.0 && v <= 1.0)) throw fail("value outside [0, 1]");
      return v;
    };
    for (const auto& [video, entry] : doc.at("per_video").items()) {
      if (!entry.is_object() || entry.size() != 3) throw fail("bad per_video entry");
      VideoReport vr;
      for (const auto& key : keys) {
        vr.map.push_back(check_value(entry.at("map").at(key).get<double>()));
        ClassAps aps{};
        const Json& classes = entry.at("per_class_ap").at(key);
        if (!classes.is_object() || classes.size() != kNumLabels) {
          throw fail("per_class_ap must list all 17 labels");
        }
        for (int c = 0; c < kNumLabels; ++c) {
          const Json& v = classes.at(std::string(kLabelNames[c]));
          if (!v.is_null()) aps[c] = check_value(v.get<double>());
        }
        vr.per_class_ap.push_back(aps);
        vr.excluded_classes.push_back(entry.at("excluded_classes").at(key).get<int>());
      }
      if (entry.at("map").size() != keys.size()) throw fail("extra thresholds in map");
      report.per_video.emplace(video, std::move(vr));
    }
    if (doc.at("overall").size() != keys.size()) throw fail("overall size");
    for (const auto& key : keys) {
      report.overall.push_back(check_value(doc.at("overall").at(key).get<double>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidConfig) throw fail(e.what());
    throw;
  }
  return report;
}

inline void WriteReport(const EvalReport& report, const std::filesystem::path& path) {
  WriteFile(path, DumpJson(ReportToJson(report)));
}

inline EvalReport ReadReport(const std::filesystem::path& path) {
  return ReportFromJson(ReadJsonFile(path));
}

// Per-video breakdown in the layout of a results table, 4 decimals.
inline std::string FormatReportTable(const EvalReport& report) {
  auto cell = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", RoundTo4(v));
    return std::string(buf);
  };
  std::string out = "Video ID";
  for (double tau : report.thresholds) out += "\tmAP @ " + FormatDouble(tau);
  out.push_back('\n');
  for (const auto& [video, vr] : report.per_video) {
    out += video;
    for (double v : vr.map) out += "\t" + cell(v);
    out.push_back('\n');
  }
  out += "overall";
  for (double v : report.overall) out += "\t" + cell(v);
  out.push_back('\n');
  return out;
}

}  // namespace cevkit
