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

// Command-line front end: synth -> stats -> sample -> split -> train ->
// predict -> eval. Exit codes: 0 success, 1 usage error, 2 data error.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cevkit/error.hpp"
#include "cevkit/manifest.hpp"
#include "cevkit/metrics.hpp"
#include "cevkit/sampler.hpp"
#include "cevkit/synth.hpp"
#include "cevkit/trainer.hpp"
#include "cevkit/vit.hpp"

namespace cevkit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

namespace cli_internal {

// Restricts a manifest to one side of a split plan.
inline Manifest SelectPart(const Manifest& manifest, const std::string& plan_path,
                           const std::string& part) {
  if (plan_path.empty()) return manifest;
  const SelectionPlan plan = ReadPlan(plan_path);
  if (part == "train") return Subset(manifest, plan.train);
  if (part == "validation") return Subset(manifest, plan.validation);
  return Subset(manifest, plan.selected);
}

// Drops predictions for frames of `full` outside `part`; frames unknown to
// `full` are kept so that evaluation still reports them.
inline PredictionSet Restrict(const PredictionSet& predictions, const Manifest& full,
                              const Manifest& part) {
  const auto all = full.Index();
  const auto keep = part.Index();
  PredictionSet out;
  for (const auto& row : predictions.rows) {
    if (keep.contains(row.frame_id) || !all.contains(row.frame_id)) out.rows.push_back(row);
  }
  return out;
}

}  // namespace cli_internal

inline int Run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"cevkit: multi-label capsule-endoscopy dataset curation and evaluation",
               "cevkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  unsigned threads = 1;

  // synth
  SynthConfig synth_cfg;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic frame manifest");
  synth->add_option("--frames", synth_cfg.frames, "Number of frames")->default_val(200);
  synth->add_option("--seed", synth_cfg.seed, "Random seed")->default_val(0);
  synth->add_option("--videos", synth_cfg.videos, "Number of videos")
      ->default_val(3)->check(CLI::PositiveNumber);
  synth->add_option("-o,--output", synth_out, "Output manifest CSV")->required();

  // stats
  std::string stats_manifest, stats_out;
  auto* stats = app.add_subcommand("stats", "Per-label and label-count statistics");
  stats->add_option("manifest", stats_manifest, "Manifest CSV")->required();
  stats->add_option("-o,--output", stats_out, "Output stats JSON")->required();
  stats->add_option("--threads", threads, "Worker threads")->default_val(1)
      ->check(CLI::PositiveNumber);

  // sample
  SamplingConfig sample_cfg;
  std::string sample_manifest, sample_out;
  auto* sample = app.add_subcommand("sample", "Multi-label under-sampling");
  sample->add_option("manifest", sample_manifest, "Manifest CSV")->required();
  sample->add_option("--target", sample_cfg.target_per_class, "Target frames per class")
      ->default_val(3000);
  sample->add_option("--min-full-cardinality", sample_cfg.full_inclusion_min_cardinality,
                     "Frames with at least this many labels are always kept")
      ->default_val(4);
  sample->add_option("--seed", sample_cfg.seed, "Random seed")->default_val(0);
  sample->add_option("--threads", threads, "Worker threads")->default_val(1)
      ->check(CLI::PositiveNumber);
  sample->add_option("-o,--output", sample_out, "Output plan JSON")->required();

  // split
  std::string split_plan, split_out, split_manifest;
  double split_fraction = 0.2;
  std::optional<std::uint64_t> split_seed;
  auto* split = app.add_subcommand("split", "Train/validation split of a selection plan");
  split->add_option("plan", split_plan, "Plan JSON from `sample`")->required();
  split->add_option("--val-fraction", split_fraction, "Validation fraction in (0, 1)")
      ->default_val(0.2);
  split->add_option("--seed", split_seed, "Split seed (default: the plan's sampling seed)");
  split->add_option("--manifest", split_manifest,
                    "Manifest CSV (default: the path recorded in the plan)");
  split->add_option("-o,--output", split_out, "Output plan JSON (default: overwrite plan)");

  // train
  std::string train_plan, train_config, train_manifest, train_checkpoint, train_curve;
  auto* train = app.add_subcommand("train", "Train the ViT on the plan's training frames");
  train->add_option("plan", train_plan, "Split plan JSON")->required();
  train->add_option("--config", train_config, "Training config JSON")->required();
  train->add_option("--manifest", train_manifest,
                    "Manifest CSV (default: the path recorded in the plan)");
  train->add_option("--checkpoint", train_checkpoint,
                    "Checkpoint output (overrides checkpoint_path)");
  train->add_option("--loss-curve", train_curve,
                    "Loss curve CSV output (overrides loss_curve_path)");

  // predict
  std::string predict_checkpoint, predict_manifest, predict_out, predict_plan;
  std::string predict_part = "selected";
  auto* predict = app.add_subcommand("predict", "Score every manifest frame");
  predict->add_option("checkpoint", predict_checkpoint, "Checkpoint JSON")->required();
  predict->add_option("manifest", predict_manifest, "Manifest CSV")->required();
  predict->add_option("-o,--output", predict_out, "Output prediction CSV")->required();
  predict->add_option("--plan", predict_plan, "Restrict to frames of this plan");
  predict->add_option("--part", predict_part, "Plan part: train, validation or selected")
      ->check(CLI::IsMember({"train", "validation", "selected"}));

  // eval
  std::string eval_preds, eval_manifest, eval_out, eval_plan;
  std::string eval_part = "selected";
  std::vector<double> eval_thresholds(kDefaultThresholds.begin(), kDefaultThresholds.end());
  auto* eval = app.add_subcommand("eval", "Per-video and overall mAP");
  eval->add_option("predictions", eval_preds, "Prediction CSV")->required();
  eval->add_option("manifest", eval_manifest, "Ground-truth manifest CSV")->required();
  eval->add_option("--thresholds", eval_thresholds, "Comma-separated score thresholds")
      ->delimiter(',')
      ->default_str("0.5,0.95");
  eval->add_option("-o,--output", eval_out, "Output report JSON")->required();
  eval->add_option("--plan", eval_plan, "Restrict evaluation to frames of this plan");
  eval->add_option("--part", eval_part, "Plan part: train, validation or selected")
      ->check(CLI::IsMember({"train", "validation", "selected"}));

  std::vector<const char*> argv;
  argv.push_back("cevkit");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help()
                                          : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "cevkit: usage error: " << e.what() << " (see --help)\n";
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      WriteManifest(SynthesizeManifest(synth_cfg), synth_out);
    } else if (stats->parsed()) {
      WriteStatsReport(ComputeStats(ReadManifest(stats_manifest), threads), stats_out);
    } else if (sample->parsed()) {
      sample_cfg.split_seed = sample_cfg.seed;
      WritePlan(UnderSample(ReadManifest(sample_manifest), sample_cfg, threads), sample_out);
    } else if (split->parsed()) {
      const SelectionPlan plan = ReadPlan(split_plan);
      const Manifest manifest =
          ReadManifest(split_manifest.empty() ? plan.manifest_path : split_manifest);
      SamplingConfig cfg = plan.config;
      cfg.validation_fraction = split_fraction;
      cfg.split_seed = split_seed.value_or(plan.config.seed);
      WritePlan(SplitTrainVal(plan, manifest, cfg), split_out.empty() ? split_plan : split_out);
    } else if (train->parsed()) {
      const SelectionPlan plan = ReadPlan(train_plan);
      TrainConfig cfg = TrainConfigFromJson(ReadJsonFile(train_config));
      if (!train_checkpoint.empty()) cfg.checkpoint_path = train_checkpoint;
      if (!train_curve.empty()) cfg.loss_curve_path = train_curve;
      if (cfg.checkpoint_path.empty()) {
        throw Error(ErrorCode::kInvalidConfig,
                    "no checkpoint path (set checkpoint_path or pass --checkpoint)");
      }
      const Manifest manifest =
          ReadManifest(train_manifest.empty() ? plan.manifest_path : train_manifest);
      ValidatePlanAgainst(plan, manifest);
      const TrainResult result = Train(plan, manifest, cfg);
      out << "final mean loss " << FormatDouble(result.loss_curve.back()) << "\n";
    } else if (predict->parsed()) {
      const vit::ModelParams params = vit::LoadCheckpoint(predict_checkpoint);
      const Manifest manifest = cli_internal::SelectPart(ReadManifest(predict_manifest),
                                                         predict_plan, predict_part);
      WritePredictions(Predict(params, manifest), predict_out);
    } else if (eval->parsed()) {
      CheckThresholds(eval_thresholds);
      const Manifest full = ReadManifest(eval_manifest);
      const Manifest truth = cli_internal::SelectPart(full, eval_plan, eval_part);
      PredictionSet predictions = ReadPredictions(eval_preds);
      if (!eval_plan.empty()) predictions = cli_internal::Restrict(predictions, full, truth);
      const EvalReport report = Evaluate(predictions, truth, eval_thresholds);
      WriteReport(report, eval_out);
      out << FormatReportTable(report);
    }
  } catch (const Error& e) {
    err << "cevkit: " << e.what() << "\n";
    return e.code() == ErrorCode::kInvalidConfig ? kExitUsage : kExitData;
  } catch (const std::exception& e) {
    err << "cevkit: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace cevkit::cli
