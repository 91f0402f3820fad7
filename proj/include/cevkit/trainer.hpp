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

// Desk-scale training: Adam over mini-batches of synthetic frames drawn from
// the training half of a SelectionPlan, and batch prediction into the
// prediction-file format consumed by the metrics module.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cevkit/error.hpp"
#include "cevkit/io.hpp"
#include "cevkit/manifest.hpp"
#include "cevkit/metrics.hpp"
#include "cevkit/rng.hpp"
#include "cevkit/sampler.hpp"
#include "cevkit/synth.hpp"
#include "cevkit/vit.hpp"

namespace cevkit {

using ImageSource = std::function<vit::Tensor(const FrameRecord&, const vit::ViTConfig&)>;

inline ImageSource SyntheticImages() { return SynthesizeImage; }

struct TrainConfig {
  int epochs = 200;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  double init_stddev = vit::kInitStddev;
  std::string checkpoint_path;
  std::string loss_curve_path;
  vit::ViTConfig model;

  void Validate() const {
    auto fail = [](const std::string& what) {
      return Error(ErrorCode::kInvalidConfig, "train config: " + what);
    };
    if (epochs < 1) throw fail("epochs must be >= 1");
    if (batch_size < 1) throw fail("batch_size must be >= 1");
    // Zero is allowed: it freezes the parameters.
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw fail("learning_rate must be >= 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw fail("moment decays must be in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw fail("epsilon must be > 0");
    if (!(init_stddev >= 0.0)) throw fail("init_stddev must be >= 0");
    model.Validate();
  }
};

// Keys as in TrainConfig; missing keys keep defaults, unknown keys fail.
inline TrainConfig TrainConfigFromJson(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kSchemaMismatch, "train config must be an object");
  TrainConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs") cfg.epochs = value.get<int>();
      else if (key == "batch_size") cfg.batch_size = value.get<int>();
      else if (key == "learning_rate") cfg.learning_rate = value.get<double>();
      else if (key == "beta1") cfg.beta1 = value.get<double>();
      else if (key == "beta2") cfg.beta2 = value.get<double>();
      else if (key == "epsilon") cfg.epsilon = value.get<double>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else if (key == "init_stddev") cfg.init_stddev = value.get<double>();
      else if (key == "checkpoint_path") cfg.checkpoint_path = value.get<std::string>();
      else if (key == "loss_curve_path") cfg.loss_curve_path = value.get<std::string>();
      else if (key == "model") cfg.model = vit::ConfigFromJson(value);
      else throw Error(ErrorCode::kSchemaMismatch, "train config: unknown key " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kSchemaMismatch, std::string("train config: ") + e.what());
  }
  cfg.Validate();
  return cfg;
}

inline Json TrainConfigToJson(const TrainConfig& cfg) {
  Json j = Json::object();
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["epsilon"] = cfg.epsilon;
  j["seed"] = cfg.seed;
  j["init_stddev"] = cfg.init_stddev;
  j["checkpoint_path"] = cfg.checkpoint_path;
  j["loss_curve_path"] = cfg.loss_curve_path;
  j["model"] = vit::ConfigToJson(cfg.model);
  return j;
}

struct TrainResult {
  vit::ModelParams params;
  std::vector<double> loss_curve;  // mean train loss per epoch
};

class AdamOptimizer {
 public:
  AdamOptimizer(const vit::ViTConfig& model, const TrainConfig& cfg)
      : cfg_(cfg), m_(vit::ZeroParams(model)), v_(vit::ZeroParams(model)) {}

  void Step(vit::ModelParams& params, const vit::Gradients& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto p = vit::TensorList(params);
    const auto g = vit::TensorList(std::as_const(grads));
    const auto m = vit::TensorList(m_);
    const auto v = vit::TensorList(v_);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i]->array() = cfg_.beta1 * m[i]->array() + (1.0 - cfg_.beta1) * g[i]->array();
      v[i]->array() = cfg_.beta2 * v[i]->array() +
                      (1.0 - cfg_.beta2) * g[i]->array().square();
      p[i]->array() -= cfg_.learning_rate * (m[i]->array() / c1) /
                       ((v[i]->array() / c2).sqrt() + cfg_.epsilon);
    }
  }

 private:
  TrainConfig cfg_;
  vit::ModelParams m_, v_;
  std::uint64_t t_ = 0;
};

inline std::string FormatLossCurve(const std::vector<double>& curve) {
  std::string out = "epoch,mean_loss\n";
  for (std::size_t e = 0; e < curve.size(); ++e) {
    out += std::to_string(e + 1) + "," + FormatDouble(curve[e]) + "\n";
  }
  return out;
}

// Deterministic in (plan, manifest, cfg): epoch order comes from a stream
// derived from cfg.seed and every sum runs in a fixed order.
inline TrainResult Train(const SelectionPlan& plan, const Manifest& manifest,
                         const TrainConfig& cfg,
                         const ImageSource& images = SyntheticImages()) {
  cfg.Validate();
  if (plan.train.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "plan has no training frames (run split first)");
  }
  const auto index = manifest.Index();
  std::vector<const FrameRecord*> frames;
  for (const auto& id : plan.train) {
    auto it = index.find(id);
    if (it == index.end()) {
      throw Error(ErrorCode::kUnknownFrame, "train frame '" + id + "' is not in the manifest");
    }
    frames.push_back(&manifest.records[it->second]);
  }

  TrainResult result;
  result.params = vit::InitParams(cfg.model, cfg.seed, cfg.init_stddev);
  AdamOptimizer optimizer(cfg.model, cfg);
  Rng rng(DeriveSeed(cfg.seed, 0x747261696eULL));  // "train"
  std::vector<std::uint32_t> order(frames.size());
  std::vector<double> sample_loss(frames.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.Shuffle(std::span<std::uint32_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      vit::Gradients sum = vit::ZeroParams(cfg.model);
      for (std::size_t b = start; b < end; ++b) {
        const FrameRecord& f = *frames[order[b]];
        auto step = vit::Backward(images(f, cfg.model), f.labels, result.params);
        sample_loss[order[b]] = step.loss;
        const auto acc = vit::TensorList(sum);
        const auto grads = vit::TensorList(std::as_const(step.grads));
        for (std::size_t i = 0; i < acc.size(); ++i) *acc[i] += *grads[i];
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (vit::Mat* t : vit::TensorList(sum)) *t *= scale;
      optimizer.Step(result.params, sum);
    }
    double total = 0.0;
    for (double l : sample_loss) total += l;
    result.loss_curve.push_back(total / static_cast<double>(sample_loss.size()));
  }

  if (!cfg.checkpoint_path.empty()) vit::SaveCheckpoint(result.params, cfg.checkpoint_path);
  if (!cfg.loss_curve_path.empty()) {
    WriteFile(cfg.loss_curve_path, FormatLossCurve(result.loss_curve));
  }
  return result;
}

// One row per manifest frame, in manifest order.
inline PredictionSet Predict(const vit::ModelParams& params, const Manifest& manifest,
                             const ImageSource& images = SyntheticImages()) {
  PredictionSet set;
  set.rows.reserve(manifest.records.size());
  for (const auto& f : manifest.records) {
    PredictionRow row;
    row.frame_id = f.frame_id;
    row.video_id = f.video_id;
    row.scores = vit::Forward(images(f, params.config), params);
    set.rows.push_back(std::move(row));
  }
  return set;
}

// Frames of `manifest` listed in `ids`, in manifest order.
inline Manifest Subset(const Manifest& manifest, const std::vector<std::string>& ids) {
  std::unordered_set<std::string_view> wanted(ids.begin(), ids.end());
  Manifest out;
  out.source_path = manifest.source_path;
  for (const auto& r : manifest.records) {
    if (wanted.contains(r.frame_id)) out.records.push_back(r);
  }
  if (out.records.size() != wanted.size()) {
    throw Error(ErrorCode::kUnknownFrame, "subset lists frames missing from the manifest");
  }
  return out;
}

}  // namespace cevkit
