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

#include "cevkit/manifest.hpp"

#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "cevkit/rng.hpp"
#include "cevkit/synth.hpp"
#include "test_util.hpp"

namespace cevkit {
namespace {

Manifest Parse(const std::string& text) {
  std::istringstream in(text);
  return ParseManifest(in, "inline");
}

ErrorCode ParseError(const std::string& text, std::size_t* line = nullptr) {
  try {
    Parse(text);
  } catch (const Error& e) {
    if (line) *line = e.line();
    return e.code();
  }
  ADD_FAILURE() << "parsed without error";
  return ErrorCode::kIo;
}

constexpr const char* kFourRows =
    "frame_id,video_id,frame_index,labels\n"
    "a,001,0,colon\n"
    "b,001,1,blood;erosion\n"
    "c,002,0,small intestine;Z-Line;ulcer\n"
    "d,002,1,mouth\n";

TEST(ManifestTest, ReadsWellFormedRows) {
  const Manifest m = Parse(kFourRows);
  ASSERT_EQ(m.size(), 4u);
  EXPECT_EQ(m.records[1].frame_id, "b");
  EXPECT_EQ(m.records[1].labels.cardinality(), 2);
  EXPECT_EQ(m.records[2].video_id, "002");
  EXPECT_EQ(m.records[2].labels.ToString(), "small_intestine;z_line;ulcer");
  EXPECT_EQ(m.records[3].frame_index, 1u);
}

TEST(ManifestTest, AcceptsCrlfAndBom) {
  const Manifest m = Parse(
      "\xEF\xBB\xBF"
      "frame_id,video_id,frame_index,labels\r\n"
      "a,001,0,colon\r\n");
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.records[0].labels, LabelSetFromNames({"colon"}));
}

TEST(ManifestTest, EmptyLabelField) {
  std::size_t line = 0;
  EXPECT_EQ(ParseError("frame_id,video_id,frame_index,labels\na,1,0,colon\nb,1,1,\n", &line),
            ErrorCode::kEmptyLabelSet);
  EXPECT_EQ(line, 3u);
}

TEST(ManifestTest, MalformedRowsNameTheLine) {
  const std::string header = "frame_id,video_id,frame_index,labels\n";
  std::size_t line = 0;
  EXPECT_EQ(ParseError(header + "a,1,0,colon\nb,1,x,colon\n", &line), ErrorCode::kMalformedRow);
  EXPECT_EQ(line, 3u);
  EXPECT_EQ(ParseError(header + "a,1,0\n", &line), ErrorCode::kMalformedRow);
  EXPECT_EQ(line, 2u);
  EXPECT_EQ(ParseError(header + "a,1,0,colon,extra\n"), ErrorCode::kMalformedRow);
  EXPECT_EQ(ParseError(header + "a,1,0,polyps\n"), ErrorCode::kMalformedRow);
  EXPECT_EQ(ParseError(header + "a,1,0,colon;;blood\n"), ErrorCode::kMalformedRow);
  EXPECT_EQ(ParseError(header + ",1,0,colon\n"), ErrorCode::kMalformedRow);
  EXPECT_EQ(ParseError(header + "a,1,-3,colon\n"), ErrorCode::kMalformedRow);
}

TEST(ManifestTest, HeaderRequired) {
  EXPECT_EQ(ParseError(""), ErrorCode::kSchemaMismatch);
  EXPECT_EQ(ParseError("a,1,0,colon\n"), ErrorCode::kSchemaMismatch);
  EXPECT_EQ(ParseError("frame_id,video,frame_index,labels\n"), ErrorCode::kSchemaMismatch);
}

TEST(ManifestTest, DuplicateFrameIdIsFatal) {
  std::size_t line = 0;
  EXPECT_EQ(ParseError("frame_id,video_id,frame_index,labels\n"
                       "a,1,0,colon\nb,1,1,colon\na,2,0,blood\n",
                       &line),
            ErrorCode::kDuplicateFrameId);
  EXPECT_EQ(line, 4u);
}

TEST(ManifestTest, MissingFileIsIo) {
  try {
    ReadManifest("/nonexistent/cevkit/manifest.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}

TEST(ManifestTest, WriteReadIsIdentity) {
  testing::TempDir dir;
  SynthConfig cfg;
  cfg.frames = 500;
  cfg.seed = 11;
  const Manifest m = SynthesizeManifest(cfg);
  WriteManifest(m, dir.file("m.csv"));
  const Manifest back = ReadManifest(dir.file("m.csv"));
  EXPECT_EQ(back.records, m.records);
  WriteManifest(back, dir.file("m2.csv"));
  EXPECT_EQ(ReadFile(dir.file("m.csv")), ReadFile(dir.file("m2.csv")));
}

TEST(ManifestTest, StatsHandCount) {
  // Cardinalities 1, 1, 2, 3.
  const Manifest m = Parse(
      "frame_id,video_id,frame_index,labels\n"
      "a,1,0,colon\n"
      "b,1,1,colon\n"
      "c,1,2,colon;blood\n"
      "d,1,3,stomach;blood;ulcer\n");
  const DatasetStats s = ComputeStats(m);
  EXPECT_EQ(s.total_frames, 4u);
  EXPECT_EQ(s.cardinality_histogram[1], 2u);
  EXPECT_EQ(s.cardinality_histogram[2], 1u);
  EXPECT_EQ(s.cardinality_histogram[3], 1u);
  EXPECT_EQ(s.per_label_count[ParseLabel("colon").index()], 3u);
  EXPECT_EQ(s.per_label_count[ParseLabel("blood").index()], 2u);
  EXPECT_NO_THROW(s.Validate());
}

TEST(ManifestTest, StatsEdgeCases) {
  EXPECT_EQ(ComputeStats(Manifest{}), DatasetStats{});
  const DatasetStats one = ComputeStats(Parse("frame_id,video_id,frame_index,labels\nx,1,0,colon\n"));
  EXPECT_EQ(one.per_label_count[4], 1u);
  EXPECT_EQ(one.cardinality_histogram[1], 1u);
  EXPECT_EQ(one.total_frames, 1u);
}

TEST(ManifestTest, StatsIndependentOfThreadsAndOrder) {
  SynthConfig cfg;
  cfg.frames = 20000;
  cfg.seed = 5;
  Manifest m = SynthesizeManifest(cfg);
  const DatasetStats reference = ComputeStats(m, 1);
  for (unsigned threads : {2u, 3u, 8u}) {
    EXPECT_EQ(ComputeStats(m, threads), reference) << threads;
  }
  Rng rng(3);
  rng.Shuffle(std::span<FrameRecord>(m.records));
  EXPECT_EQ(ComputeStats(m, 4), reference);
  // Both table views agree.
  std::uint64_t weighted = 0, labels = 0;
  for (int k = 1; k <= kNumLabels; ++k) weighted += k * reference.cardinality_histogram[k];
  for (auto c : reference.per_label_count) labels += c;
  EXPECT_EQ(weighted, labels);
}

TEST(ManifestTest, StatsReportRoundTripsReferenceHistogram) {
  // Label-count histogram of a full corpus: 1..5 labels per frame.
  DatasetStats s;
  s.cardinality_histogram[1] = 2994127;
  s.cardinality_histogram[2] = 495142;
  s.cardinality_histogram[3] = 22501;
  s.cardinality_histogram[4] = 1767;
  s.cardinality_histogram[5] = 1;
  s.total_frames = 2994127 + 495142 + 22501 + 1767 + 1;
  // Spread the 4,058,987 label assignments over the classes.
  const std::uint64_t weighted = 2994127 + 2 * 495142 + 3 * 22501 + 4 * 1767 + 5;
  ASSERT_EQ(weighted, 4058987u);
  for (int c = 0; c < kNumLabels; ++c) s.per_label_count[c] = weighted / kNumLabels;
  s.per_label_count[0] += weighted % kNumLabels;

  testing::TempDir dir;
  WriteStatsReport(s, dir.file("stats.json"));
  EXPECT_EQ(ReadStatsReport(dir.file("stats.json")), s);
  WriteStatsReport(ReadStatsReport(dir.file("stats.json")), dir.file("again.json"));
  EXPECT_EQ(ReadFile(dir.file("stats.json")), ReadFile(dir.file("again.json")));
}

TEST(ManifestTest, StatsReportSchema) {
  testing::TempDir dir;
  WriteStatsReport(DatasetStats{}, dir.file("zero.json"));
  const Json doc = ReadJsonFile(dir.file("zero.json"));
  EXPECT_EQ(doc["total"], 0);
  EXPECT_EQ(doc["per_label"].size(), 17u);
  EXPECT_EQ(doc["cardinality_histogram"].size(), 17u);
  EXPECT_EQ(doc["per_label"].begin().key(), "mouth");
  EXPECT_EQ(ReadStatsReport(dir.file("zero.json")), DatasetStats{});
}

TEST(ManifestTest, InconsistentStatsRefused) {
  DatasetStats s;
  s.cardinality_histogram[2] = 1;
  s.total_frames = 1;
  s.per_label_count[0] = 1;  // needs 2 label assignments
  testing::TempDir dir;
  try {
    WriteStatsReport(s, dir.file("bad.json"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConsistency);
  }
  EXPECT_FALSE(std::filesystem::exists(dir.file("bad.json")));

  Json doc = StatsToJson(DatasetStats{});
  doc["total"] = 3;
  try {
    StatsFromJson(doc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConsistency);
  }
}

}  // namespace
}  // namespace cevkit
