// Copyright (c) 2026 cascadesv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cascade/io_util.hpp"
#include "cascade/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::optional<std::string> config_path;
  std::vector<std::string> set_overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> workdir;
  std::string init = "teacher";
  bool use_filtered = false;
  bool allow_raw_checkpoint = false;
};

void add_common_options(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("--config", args->config_path, "pipeline config JSON file");
  cmd->add_option("--set", args->set_overrides,
                  "dotted.key=value config override (repeatable)");
  cmd->add_option("--seed", args->seed, "global seed override");
  cmd->add_option("--workdir", args->workdir, "working directory override");
}

void add_variant_options(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("--init", args->init,
                  "finetune initialization: teacher|student|random")
      ->check(CLI::IsMember({"teacher", "student", "random"}));
  cmd->add_option("--use-filtered", args->use_filtered,
                  "use the filtered pretraining manifest (true|false)");
}

cascade::PipelineConfig load_config(const CommonArgs& args) {
  std::vector<std::string> overrides = args.set_overrides;
  if (args.seed.has_value()) {
    overrides.push_back("seed=" + std::to_string(*args.seed));
  }
  if (args.workdir.has_value()) {
    overrides.push_back("workdir=" + *args.workdir);
  }
  std::optional<fs::path> path;
  if (args.config_path.has_value()) path = *args.config_path;
  return cascade::PipelineConfig::load(path, overrides);
}

void print_report(const std::string& tag, const cascade::MetricsReport& r) {
  std::printf("[%s] EER %.3f%% (threshold %.4f), minDCF %.4f "
              "(%zu targets, %zu nontargets)\n",
              tag.c_str(), 100.0 * r.eer, r.eer_threshold, r.min_dcf,
              r.targets, r.nontargets);
}

// ---------------------------------------------------------------------------
// inspect

void inspect_checkpoint(const fs::path& path) {
  const auto ckpt = cascade::load_checkpoint(path);
  std::printf("checkpoint (CSPK v1)\n");
  std::printf("  role: %s\n",
              cascade::checkpoint_role_name(ckpt.role).c_str());
  std::printf("  encoder config: %s\n", ckpt.config.to_json_text().c_str());
  std::printf("  tensors: %zu (%zu values)\n", ckpt.params.size(),
              ckpt.params.total_values());
  for (const auto& t : ckpt.params) {
    if (t.rank == 1) {
      std::printf("    %-20s [%zu]\n", t.name.c_str(), t.value.cols());
    } else {
      std::printf("    %-20s [%zu x %zu]\n", t.name.c_str(), t.value.rows(),
                  t.value.cols());
    }
  }
}

void inspect_features(const fs::path& path) {
  const auto seq = cascade::read_features(path);
  double lo = seq.frames.data()[0], hi = lo, sum = 0.0;
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const double v = seq.frames.data()[i];
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  std::printf("feature file (CSPF v1)\n");
  std::printf("  frames: %zu, dim: %zu\n", seq.num_frames(), seq.dim());
  std::printf("  value range: [%.4f, %.4f], mean %.4f\n", lo, hi,
              sum / static_cast<double>(seq.frames.size()));
}

// Text artifacts are told apart by their line shapes.
void inspect_text(const fs::path& path) {
  const std::string text = cascade::read_file_text(path);
  const auto lines = cascade::split_lines(text);
  if (lines.empty()) {
    throw cascade::ParseError(cascade::ParseError::Kind::kMalformed,
                              "empty file: " + path.string());
  }

  if (!lines[0].empty() && lines[0][0] == '{') {
    // Single-document JSON (possibly pretty-printed) first, then JSONL.
    json first;
    bool whole_document = false;
    try {
      first = json::parse(text);
      whole_document = true;
    } catch (const json::exception&) {
    }
    if (!whole_document) {
      try {
        first = json::parse(lines[0]);
      } catch (const json::exception& e) {
        throw cascade::ParseError(
            cascade::ParseError::Kind::kMalformed,
            "unparseable JSON line in " + path.string() + ": " + e.what());
      }
    }
    if (first.contains("eer")) {
      const auto report = cascade::MetricsReport::from_json_text(text);
      std::printf("metrics report\n");
      print_report(path.stem().string(), report);
      return;
    }
    if (first.contains("decision") || first.contains("summary")) {
      std::printf("confidence file: %zu lines\n", lines.size());
      json last = json::parse(lines.back());
      if (last.contains("summary")) {
        std::printf("  summary: %s\n", last["summary"].dump().c_str());
      } else {
        std::printf("  (no trailing summary line)\n");
      }
      return;
    }
    if (first.contains("utterance_id")) {
      const bool labeled = first.contains("speaker_label");
      const auto records = cascade::parse_manifest(text, labeled);
      std::size_t frames = 0, segments = 0;
      for (const auto& r : records) {
        frames += r.frame_count;
        segments += r.vad_segments.size();
      }
      std::printf("%s manifest: %zu records, %zu frames, %zu vad segments\n",
                  labeled ? "labeled" : "unlabeled", records.size(), frames,
                  segments);
      return;
    }
    if (first.contains("loss")) {
      std::printf("training log: %zu steps", lines.size());
      json last = json::parse(lines.back());
      if (last.contains("loss")) {
        std::printf(", final loss %.6f", last["loss"].get<double>());
      }
      std::printf("\n");
      return;
    }
    if (first.contains("stage")) {
      std::printf("run records: %zu stages\n", lines.size());
      for (const auto& line : lines) {
        if (line.empty()) continue;
        json j = json::parse(line);
        std::printf("  %-24s %8.1f ms  (config %s)\n",
                    j["stage"].get<std::string>().c_str(),
                    j["wall_ms"].get<double>(),
                    j["config_hash"].get<std::string>().c_str());
      }
      return;
    }
    std::printf("JSON lines file: %zu lines\n", lines.size());
    return;
  }

  // Tab-separated trial or score lines.
  const auto tabs = std::count(lines[0].begin(), lines[0].end(), '\t');
  if (tabs == 2) {
    const auto trials = cascade::parse_trials(text);
    std::size_t targets = 0;
    for (const auto& t : trials) targets += t.is_target.value_or(false);
    std::printf("trial list: %zu trials (%zu target, %zu nontarget)\n",
                trials.size(), targets, trials.size() - targets);
    return;
  }
  if (tabs == 3 || tabs == 4) {
    const auto set = cascade::parse_scores(text);
    std::printf("score file: %zu trials, %s\n", set.scores.size(),
                set.all_normalized() ? "normalized" : "raw only");
    return;
  }
  throw cascade::ParseError(
      cascade::ParseError::Kind::kMalformed,
      "unrecognized artifact " + path.string() +
          " (recognized: CSPK/CSPF binaries, manifest/confidence/log JSONL, "
          "metrics JSON, trial and score lists)");
}

void cmd_inspect(const fs::path& path) {
  if (!fs::exists(path)) {
    throw cascade::IoError("no such file: " + path.string());
  }
  std::string magic;
  {
    const auto bytes = cascade::read_file_bytes(path);
    if (bytes.size() >= 4) {
      magic.assign(bytes.begin(), bytes.begin() + 4);
    }
  }
  if (magic == "CSPK") {
    inspect_checkpoint(path);
  } else if (magic == "CSPF") {
    inspect_features(path);
  } else {
    inspect_text(path);
  }
}

int error_exit_code(const cascade::Error& e) {
  switch (e.category()) {
    case cascade::ErrorCategory::kConfig:
      return 2;
    case cascade::ErrorCategory::kInput:
      return 3;
    case cascade::ErrorCategory::kNumerical:
      return 4;
    case cascade::ErrorCategory::kInternal:
      return 5;
  }
  return 5;
}

const char* error_category_name(const cascade::Error& e) {
  switch (e.category()) {
    case cascade::ErrorCategory::kConfig:
      return "config";
    case cascade::ErrorCategory::kInput:
      return "input";
    case cascade::ErrorCategory::kNumerical:
      return "numerical";
    case cascade::ErrorCategory::kInternal:
      return "internal";
  }
  return "internal";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cascadesv: cascade speaker-embedding training on synthetic "
               "corpora (generate, filter, pretrain, finetune, score)"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string inspect_path;

  auto* generate = app.add_subcommand("generate",
                                      "generate the synthetic corpora");
  add_common_options(generate, &args);

  auto* pretrain = app.add_subcommand("pretrain",
                                      "DINO self-distillation pretraining");
  add_common_options(pretrain, &args);
  pretrain->add_option("--use-filtered", args.use_filtered,
                       "train on the filtered manifest (true|false)");

  auto* filter = app.add_subcommand("filter",
                                    "confidence-based data filtering");
  add_common_options(filter, &args);

  auto* finetune = app.add_subcommand("finetune", "supervised finetuning");
  add_common_options(finetune, &args);
  add_variant_options(finetune, &args);

  auto* score = app.add_subcommand("score", "score the evaluation trials");
  add_common_options(score, &args);
  add_variant_options(score, &args);
  score->add_flag("--allow-raw-checkpoint", args.allow_raw_checkpoint,
                  "score a raw pretraining checkpoint (no finetuning)");

  auto* eval = app.add_subcommand("eval", "compute EER/minDCF from scores");
  add_common_options(eval, &args);
  add_variant_options(eval, &args);
  eval->add_flag("--allow-raw-checkpoint", args.allow_raw_checkpoint,
                 "evaluate the raw-checkpoint score file");

  auto* inspect = app.add_subcommand("inspect",
                                     "describe a toolkit artifact");
  inspect->add_option("path", inspect_path, "artifact path")->required();

  auto* run_all = app.add_subcommand(
      "run-all", "full cascade plus the four-way ablation grid");
  add_common_options(run_all, &args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (inspect->parsed()) {
      cmd_inspect(inspect_path);
      return 0;
    }

    auto config = load_config(args);
    const auto init = cascade::finetune_init_from_name(args.init);
    auto variant_tag = [&]() {
      std::string tag = cascade::Pipeline::variant_name(init,
                                                        args.use_filtered);
      if (args.allow_raw_checkpoint) {
        if (init == cascade::FinetuneInit::kRandom) {
          throw cascade::ConfigError(
              "--allow-raw-checkpoint needs --init teacher or student");
        }
        tag = std::string("raw_") +
              (args.use_filtered ? "filtered" : "unfiltered") + "_" +
              cascade::finetune_init_name(init);
      }
      return tag;
    };

    cascade::WorkdirLock lock(config.workdir);
    cascade::Pipeline pipeline(config);

    if (generate->parsed()) {
      pipeline.generate();
      std::printf("generated corpora under %s\n",
                  (pipeline.workdir() / "corpus").string().c_str());
    } else if (pretrain->parsed()) {
      const auto result = pipeline.pretrain(args.use_filtered);
      std::printf("pretrained on %zu utterances (%zu skipped as too short), "
                  "%zu steps, final loss %.6f\n",
                  result.usable_utterances, result.skipped_utterances,
                  result.steps, result.final_loss);
    } else if (filter->parsed()) {
      const auto result = pipeline.filter();
      const auto& s = result.summary;
      std::printf("filter summary: kept %zu, drop_multi_speaker %zu, "
                  "drop_low_confidence %zu, drop_too_short %zu\n",
                  s.kept, s.drop_multi_speaker, s.drop_low_confidence,
                  s.drop_too_short);
      std::printf("frames kept: %zu of %zu (%.1f%%)\n", s.kept_frames,
                  s.total_frames,
                  s.total_frames == 0
                      ? 0.0
                      : 100.0 * static_cast<double>(s.kept_frames) /
                            static_cast<double>(s.total_frames));
    } else if (finetune->parsed()) {
      const auto result = pipeline.finetune(init, args.use_filtered);
      std::printf("finetuned (%s): %zu speakers, %zu steps, final loss "
                  "%.6f, final train accuracy %.3f\n",
                  cascade::Pipeline::variant_name(init, args.use_filtered)
                      .c_str(),
                  result.num_speakers, result.steps, result.final_loss,
                  result.final_accuracy);
    } else if (score->parsed()) {
      const std::string tag = variant_tag();
      fs::path ckpt;
      if (args.allow_raw_checkpoint) {
        ckpt = pipeline.pretrain_dir(args.use_filtered) /
               (cascade::finetune_init_name(init) + ".cspk");
      } else {
        ckpt = pipeline.finetune_dir(tag) / "model.cspk";
      }
      pipeline.score(ckpt, tag, args.allow_raw_checkpoint);
      std::printf("scores written to %s\n",
                  pipeline.scores_path(tag).string().c_str());
    } else if (eval->parsed()) {
      const std::string tag = variant_tag();
      const auto report = pipeline.evaluate(tag);
      print_report(tag, report);
      std::printf("report written to %s\n",
                  pipeline.metrics_path(tag).string().c_str());
    } else if (run_all->parsed()) {
      const auto reports = pipeline.run_all();
      for (const auto& r : reports) print_report(r.tag, r.report);
    }
    return 0;
  } catch (const cascade::Error& e) {
    json err;
    err["error"]["category"] = error_category_name(e);
    err["error"]["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return error_exit_code(e);
  } catch (const std::exception& e) {
    json err;
    err["error"]["category"] = "internal";
    err["error"]["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 5;
  }
}
