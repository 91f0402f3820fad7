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

#include "cevkit/trainer.hpp"

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace cevkit {
namespace {

struct Pipeline {
  Manifest manifest;
  SelectionPlan plan;
};

Pipeline ThirtyTwoFrames() {
  SynthConfig sc;
  sc.frames = 32;
  sc.videos = 1;
  Pipeline p;
  p.manifest = SynthesizeManifest(sc);
  SamplingConfig cfg;
  p.plan = SplitTrainVal(UnderSample(p.manifest, cfg, 1), p.manifest, cfg);
  return p;
}

bool SameParams(const vit::ModelParams& a, const vit::ModelParams& b) {
  const auto x = vit::TensorList(a);
  const auto y = vit::TensorList(b);
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (*x[i] != *y[i]) return false;
  }
  return true;
}

// Shared 200-epoch run on the default config; a few seconds on one core.
const TrainResult& OverfitRun() {
  static const TrainResult result = [] {
    const Pipeline p = ThirtyTwoFrames();
    return Train(p.plan, p.manifest, TrainConfig{});
  }();
  return result;
}

TEST(TrainConfigTest, Defaults) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.learning_rate, 1e-3);
  EXPECT_EQ(cfg.beta1, 0.9);
  EXPECT_EQ(cfg.beta2, 0.999);
  EXPECT_EQ(cfg.epsilon, 1e-8);
  EXPECT_NO_THROW(cfg.Validate());
}

TEST(TrainConfigTest, RejectsBadValues) {
  auto code = [](TrainConfig cfg) {
    try {
      cfg.Validate();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kUnknownLabel;
  };
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_EQ(code(cfg), ErrorCode::kInvalidConfig);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_EQ(code(cfg), ErrorCode::kInvalidConfig);
  cfg = {};
  cfg.learning_rate = -1e-3;
  EXPECT_EQ(code(cfg), ErrorCode::kInvalidConfig);
  cfg = {};
  cfg.beta2 = 1.0;
  EXPECT_EQ(code(cfg), ErrorCode::kInvalidConfig);
}

TEST(TrainConfigTest, JsonRoundTrip) {
  TrainConfig cfg;
  cfg.epochs = 7;
  cfg.batch_size = 3;
  cfg.learning_rate = 0.01;
  cfg.seed = 99;
  cfg.checkpoint_path = "out/ckpt.json";
  cfg.model.num_layers = 1;
  const TrainConfig back = TrainConfigFromJson(TrainConfigToJson(cfg));
  EXPECT_EQ(TrainConfigToJson(back).dump(), TrainConfigToJson(cfg).dump());
}

TEST(TrainConfigTest, JsonPartialAndUnknownKeys) {
  const TrainConfig cfg = TrainConfigFromJson(Json::parse(R"({"epochs": 3})"));
  EXPECT_EQ(cfg.epochs, 3);
  EXPECT_EQ(cfg.batch_size, 8);
  EXPECT_THROW(TrainConfigFromJson(Json::parse(R"({"epoch": 3})")), Error);
  EXPECT_THROW(TrainConfigFromJson(Json::parse(R"({"epochs": "x"})")), Error);
  try {
    TrainConfigFromJson(Json::parse(R"({"epochs": 0})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidConfig);
  }
}

TEST(TrainTest, RequiresSplit) {
  const Pipeline p = ThirtyTwoFrames();
  SelectionPlan unsplit = p.plan;
  unsplit.train.clear();
  EXPECT_THROW(Train(unsplit, p.manifest, TrainConfig{}), Error);
}

TEST(TrainTest, UnknownTrainFrame) {
  const Pipeline p = ThirtyTwoFrames();
  SelectionPlan plan = p.plan;
  plan.train.push_back("nope");
  try {
    Train(plan, p.manifest, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownFrame);
  }
}

TEST(TrainTest, LossNonIncreasingEarly) {
  const auto& curve = OverfitRun().loss_curve;
  ASSERT_EQ(curve.size(), 200u);
  int non_increasing = 0;
  for (int e = 1; e <= 5; ++e) non_increasing += curve[e] <= curve[e - 1];
  EXPECT_GE(non_increasing, 4);
}

TEST(TrainTest, OverfitsTrainingFrames) {
  const Pipeline p = ThirtyTwoFrames();
  const Manifest train = Subset(p.manifest, p.plan.train);
  const EvalReport report = Evaluate(Predict(OverfitRun().params, train), train);
  EXPECT_GE(report.overall[0], 0.95);
}

TEST(TrainTest, ZeroLearningRateFreezesParameters) {
  const Pipeline p = ThirtyTwoFrames();
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 0.0;
  const TrainResult r = Train(p.plan, p.manifest, cfg);
  EXPECT_TRUE(SameParams(r.params, vit::InitParams(cfg.model, cfg.seed, cfg.init_stddev)));
  EXPECT_EQ(r.loss_curve[0], r.loss_curve[1]);
  EXPECT_EQ(r.loss_curve[1], r.loss_curve[2]);
}

TEST(TrainTest, SameSeedSameBytes) {
  const Pipeline p = ThirtyTwoFrames();
  testing::TempDir dir;
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 11;
  cfg.checkpoint_path = dir.file("a.json");
  cfg.loss_curve_path = dir.file("a.csv");
  const TrainResult a = Train(p.plan, p.manifest, cfg);
  cfg.checkpoint_path = dir.file("b.json");
  cfg.loss_curve_path = dir.file("b.csv");
  const TrainResult b = Train(p.plan, p.manifest, cfg);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  EXPECT_EQ(ReadFile(dir.file("a.json")), ReadFile(dir.file("b.json")));
  EXPECT_EQ(ReadFile(dir.file("a.csv")), ReadFile(dir.file("b.csv")));

  cfg.seed = 12;
  cfg.checkpoint_path.clear();
  cfg.loss_curve_path.clear();
  EXPECT_NE(Train(p.plan, p.manifest, cfg).loss_curve, a.loss_curve);
}

TEST(TrainTest, CheckpointReloadsToSameParams) {
  const Pipeline p = ThirtyTwoFrames();
  testing::TempDir dir;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.checkpoint_path = dir.file("ckpt.json");
  const TrainResult r = Train(p.plan, p.manifest, cfg);
  EXPECT_TRUE(SameParams(vit::LoadCheckpoint(cfg.checkpoint_path), r.params));
}

TEST(TrainTest, LossCurveCsv) {
  EXPECT_EQ(FormatLossCurve({0.5, 0.25}), "epoch,mean_loss\n1,0.5\n2,0.25\n");
  EXPECT_EQ(FormatLossCurve({}), "epoch,mean_loss\n");
}

TEST(PredictTest, ZeroHeadGivesHalfEverywhere) {
  const Pipeline p = ThirtyTwoFrames();
  vit::ModelParams params = vit::InitParams(vit::ViTConfig{}, 3);
  params.head_weight.setZero();
  params.head_bias.setZero();
  const PredictionSet pred = Predict(params, p.manifest);
  ASSERT_EQ(pred.rows.size(), p.manifest.records.size());
  for (const auto& row : pred.rows) {
    for (double s : row.scores) EXPECT_EQ(s, 0.5);
  }
  const std::vector<double> taus = {0.5, 0.95};
  const EvalReport report = Evaluate(pred, p.manifest, taus);
  EXPECT_EQ(report.overall[1], 0.0);
}

TEST(PredictTest, ManifestOrderAndSchemaValid) {
  const Pipeline p = ThirtyTwoFrames();
  const PredictionSet pred = Predict(vit::InitParams(vit::ViTConfig{}, 1), p.manifest);
  ASSERT_EQ(pred.rows.size(), p.manifest.records.size());
  for (std::size_t i = 0; i < pred.rows.size(); ++i) {
    EXPECT_EQ(pred.rows[i].frame_id, p.manifest.records[i].frame_id);
    EXPECT_EQ(pred.rows[i].video_id, p.manifest.records[i].video_id);
  }
  std::istringstream in(FormatPredictions(pred));
  EXPECT_EQ(FormatPredictions(ParsePredictions(in)), FormatPredictions(pred));
  EXPECT_NO_THROW(Evaluate(pred, p.manifest));
}

TEST(PredictTest, EmptyFrameListHeaderOnly) {
  testing::TempDir dir;
  const PredictionSet pred = Predict(vit::InitParams(vit::ViTConfig{}, 1), Manifest{});
  EXPECT_TRUE(pred.rows.empty());
  WritePredictions(pred, dir.file("p.csv"));
  EXPECT_EQ(ReadFile(dir.file("p.csv")), PredictionHeader() + "\n");
  EXPECT_TRUE(ReadPredictions(dir.file("p.csv")).rows.empty());
}

TEST(SubsetTest, KeepsManifestOrder) {
  const Pipeline p = ThirtyTwoFrames();
  const auto& r = p.manifest.records;
  const Manifest sub = Subset(p.manifest, {r[5].frame_id, r[1].frame_id});
  ASSERT_EQ(sub.records.size(), 2u);
  EXPECT_EQ(sub.records[0].frame_id, r[1].frame_id);
  EXPECT_EQ(sub.records[1].frame_id, r[5].frame_id);
  EXPECT_THROW(Subset(p.manifest, {"missing"}), Error);
}

}  // namespace
}  // namespace cevkit
