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

#include "cevkit/vit.hpp"

#include <cmath>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "grad_check.hpp"
#include "test_util.hpp"

namespace cevkit::vit {
namespace {

ViTConfig Tiny() {
  ViTConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.channels = 2;
  cfg.hidden_dim = 8;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.mlp_dim = 16;
  return cfg;
}

TEST(ViTConfigTest, Validation) {
  EXPECT_NO_THROW(ViTConfig{}.Validate());
  ViTConfig bad;
  bad.image_size = 30;
  EXPECT_THROW(bad.Validate(), Error);
  bad = ViTConfig{};
  bad.num_heads = 5;
  EXPECT_THROW(bad.Validate(), Error);
  bad = ViTConfig{};
  bad.num_classes = 16;
  EXPECT_THROW(bad.Validate(), Error);
}

TEST(PatchEmbedTest, ToyShape) {
  const ModelParams p = InitParams(ViTConfig{}, 1);
  const Mat tokens = PatchEmbed(testing::RandomImage(ViTConfig{}, 2), p);
  EXPECT_EQ(tokens.rows(), 17);
  EXPECT_EQ(tokens.cols(), 32);
}

TEST(PatchEmbedTest, FullSizeShape) {
  ViTConfig cfg = ViTConfig::Base16();
  EXPECT_EQ(cfg.num_patches(), 196);
  EXPECT_EQ(cfg.num_tokens(), 197);
  cfg.num_layers = 0;  // the encoder does not affect the embedding
  const ModelParams p = InitParams(cfg, 1);
  const Mat tokens = PatchEmbed(testing::RandomImage(cfg, 3), p);
  EXPECT_EQ(tokens.rows(), 197);
  EXPECT_EQ(tokens.cols(), 768);
}

TEST(PatchEmbedTest, ZeroImageYieldsPositions) {
  ModelParams p = InitParams(ViTConfig{}, 4);
  p.patch_weight.setZero();
  p.cls_token.setConstant(0.5);
  Tensor zero({3, 32, 32});
  const Mat tokens = PatchEmbed(zero, p);
  Mat expected = p.pos_embed;
  expected.row(0).array() += 0.5;
  EXPECT_EQ(tokens, expected);
}

TEST(PatchEmbedTest, PatchLayout) {
  // Patch 1 is the second patch of the top row; its first feature is
  // channel 0, pixel (0, patch_size).
  ViTConfig cfg = Tiny();
  Tensor image({2, 8, 8});
  image.at(0, 0, 4) = 7.0;
  image.at(1, 7, 7) = 3.0;
  const Mat patches = ExtractPatches(image, cfg);
  EXPECT_EQ(patches(1, 0), 7.0);
  EXPECT_EQ(patches(3, cfg.patch_dim() - 1), 3.0);
  EXPECT_EQ(patches.sum(), 10.0);
}

TEST(PatchEmbedTest, WrongImageShape) {
  const ModelParams p = InitParams(ViTConfig{}, 1);
  try {
    Forward(Tensor({3, 16, 16}), p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(AttentionTest, IdenticalTokensAttendUniformly) {
  const ModelParams p = testing::RandomParams(ViTConfig{}, 5);
  Mat x(6, 32);
  for (int r = 0; r < 6; ++r) x.row(r) = Mat::Constant(1, 32, 0.3);
  AttentionCache cache;
  Attention(x, p.layers[0], 4, &cache);
  for (const Mat& probs : cache.probs) {
    EXPECT_TRUE(probs.isApproxToConstant(1.0 / 6.0, 1e-12));
  }
}

TEST(AttentionTest, SingleTokenIsValueThenOutputProjection) {
  const ModelParams p = testing::RandomParams(ViTConfig{}, 6);
  const LayerParams& L = p.layers[0];
  Mat x = testing::RandomParams(ViTConfig{}, 7).cls_token;
  x.setRandom();
  const Mat expected = ((x * L.wv + L.bv) * L.wo) + L.bo;
  EXPECT_TRUE(Attention(x, L, 4).isApprox(expected, 1e-12));
}

TEST(AttentionTest, PermutingPatchTokensPermutesOutputs) {
  const ModelParams p = testing::RandomParams(ViTConfig{}, 8);
  Mat x = Mat::Random(4, 32);
  Mat permuted = x;
  permuted.row(1) = x.row(3);
  permuted.row(3) = x.row(2);
  permuted.row(2) = x.row(1);
  const Mat out = Attention(x, p.layers[1], 4);
  const Mat out_permuted = Attention(permuted, p.layers[1], 4);
  EXPECT_TRUE(out_permuted.row(0).isApprox(out.row(0), 1e-12));
  EXPECT_TRUE(out_permuted.row(1).isApprox(out.row(3), 1e-12));
  EXPECT_TRUE(out_permuted.row(2).isApprox(out.row(1), 1e-12));
  EXPECT_TRUE(out_permuted.row(3).isApprox(out.row(2), 1e-12));
}

TEST(AttentionTest, SoftmaxRowsSumToOne) {
  const ModelParams p = testing::RandomParams(ViTConfig{}, 9, 1.0);
  const Mat x = Mat::Random(17, 32) * 5.0;
  AttentionCache cache;
  Attention(x, p.layers[0], 4, &cache);
  for (const Mat& probs : cache.probs) {
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      EXPECT_NEAR(probs.row(r).sum(), 1.0, 1e-12);
      EXPECT_GE(probs.row(r).minCoeff(), 0.0);
    }
  }
}

TEST(LayerNormTest, NormalizesRows) {
  const Mat x = (Mat::Random(10, 32).array() * 3.0 + 2.0).matrix();
  const Mat ones = Mat::Ones(1, 32), zeros = Mat::Zero(1, 32);
  const Mat y = LayerNorm(x, ones, zeros);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double mean = y.row(r).mean();
    const double var = (y.row(r).array() - mean).square().mean();
    EXPECT_LT(std::abs(mean), 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
}

TEST(ForwardTest, ScoresInOpenUnitInterval) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ModelParams p = testing::RandomParams(ViTConfig{}, seed, 0.5);
    for (double s : Forward(testing::RandomImage(ViTConfig{}, seed + 10), p)) {
      EXPECT_GT(s, 0.0);
      EXPECT_LT(s, 1.0);
    }
  }
}

TEST(ForwardTest, ZeroParamsGiveOneHalf) {
  const ModelParams p = ZeroParams(ViTConfig{});
  for (double s : Forward(testing::RandomImage(ViTConfig{}, 1), p)) EXPECT_EQ(s, 0.5);
}

TEST(ForwardTest, DeterministicAndThreadSafe) {
  const ModelParams p = InitParams(ViTConfig{}, 77);
  const Tensor image = testing::RandomImage(ViTConfig{}, 78);
  const ScoreVector reference = Forward(image, p);
  EXPECT_EQ(Forward(image, InitParams(ViTConfig{}, 77)), reference);
  std::vector<ScoreVector> results(4);
  std::vector<std::thread> workers;
  for (int t = 0; t < 4; ++t) {
    workers.emplace_back([&, t] { results[t] = Forward(image, p); });
  }
  for (auto& w : workers) w.join();
  for (const auto& r : results) EXPECT_EQ(r, reference);
}

TEST(BceLossTest, Examples) {
  ScoreVector half;
  half.fill(0.5);
  EXPECT_NEAR(BceLoss(half, LabelSet{}), std::log(2.0), 1e-15);
  EXPECT_NEAR(BceLoss(half, LabelSet::Full()), std::log(2.0), 1e-15);

  const LabelSet target = LabelSetFromNames({"mouth", "ulcer"});
  ScoreVector perfect;
  for (int c = 0; c < kNumLabels; ++c) perfect[c] = target.contains(c) ? 1.0 - 1e-12 : 1e-12;
  EXPECT_LT(BceLoss(perfect, target), 1e-11);

  // Every term is -log(0.9).
  ScoreVector s;
  s.fill(0.1);
  s[0] = 0.9;
  EXPECT_NEAR(BceLoss(s, LabelSetFromNames({"mouth"})), std::log(10.0 / 9.0), 1e-15);

  ScoreVector saturated;
  saturated.fill(0.0);
  EXPECT_NEAR(BceLoss(saturated, LabelSetFromNames({"mouth"})), -std::log(1e-12) / 17, 1e-9);
}

TEST(BackwardTest, MatchesFiniteDifferences) {
  const ViTConfig cfg = Tiny();
  const ModelParams p = testing::RandomParams(cfg, 31);
  const auto checks = testing::CheckGradients(p, testing::RandomImage(cfg, 32),
                                              LabelSetFromNames({"colon", "blood"}));
  for (const auto& c : checks) EXPECT_LT(c.max_rel_error, 1e-4) << c.name;
}

TEST(BackwardTest, EveryTensorReceivesGradient) {
  const ModelParams p = testing::RandomParams(ViTConfig{}, 41);
  const Gradients g =
      Backward(testing::RandomImage(ViTConfig{}, 42), LabelSetFromNames({"polyp"}), p).grads;
  ForEachTensor(g, [](const std::string& name, const Mat& m, InitKind) {
    EXPECT_GT(m.cwiseAbs().maxCoeff(), 1e-10) << name;
  });
}

TEST(BackwardTest, GradientIsLinearInExamples) {
  const ModelParams p = testing::RandomParams(ViTConfig{}, 51);
  const Tensor image = testing::RandomImage(ViTConfig{}, 52);
  const LabelSet target = LabelSetFromNames({"stomach"});
  const Gradients once = Backward(image, target, p).grads;
  Gradients twice = Backward(image, target, p).grads;
  std::vector<const Mat*> second;
  ForEachTensor(once, [&](const std::string&, const Mat& m, InitKind) { second.push_back(&m); });
  std::size_t i = 0;
  ForEachTensor(twice, [&](const std::string& name, Mat& m, InitKind) {
    m += *second[i];
    EXPECT_EQ(m, 2.0 * *second[i]) << name;
    ++i;
  });
}

TEST(CheckpointTest, RoundTripIsByteIdentical) {
  testing::TempDir dir;
  const ModelParams p = testing::RandomParams(ViTConfig{}, 61);
  SaveCheckpoint(p, dir.file("a.json"));
  const ModelParams back = LoadCheckpoint(dir.file("a.json"));
  EXPECT_EQ(back.config, p.config);
  const Tensor image = testing::RandomImage(ViTConfig{}, 62);
  EXPECT_EQ(Forward(image, back), Forward(image, p));
  SaveCheckpoint(back, dir.file("b.json"));
  EXPECT_EQ(ReadFile(dir.file("a.json")), ReadFile(dir.file("b.json")));
}

TEST(CheckpointTest, RejectsForeignOrDamagedFiles) {
  const Json good = CheckpointToJson(InitParams(Tiny(), 1));
  Json wrong_format = good;
  wrong_format["format"] = "something.else";
  EXPECT_THROW(CheckpointFromJson(wrong_format), Error);
  Json wrong_version = good;
  wrong_version["version"] = 2;
  EXPECT_THROW(CheckpointFromJson(wrong_version), Error);
  Json wrong_shape = good;
  wrong_shape["tensors"][0]["shape"] = {1, 1};
  try {
    CheckpointFromJson(wrong_shape);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
  Json truncated = good;
  truncated["tensors"].erase(truncated["tensors"].size() - 1);
  EXPECT_THROW(CheckpointFromJson(truncated), Error);
}

}  // namespace
}  // namespace cevkit::vit
