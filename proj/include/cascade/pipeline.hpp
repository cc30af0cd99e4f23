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

#ifndef CASCADE_PIPELINE_HPP_
#define CASCADE_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cascade/corpus.hpp"
#include "cascade/dino.hpp"
#include "cascade/filter.hpp"
#include "cascade/finetune.hpp"
#include "cascade/scoring.hpp"

namespace cascade {

inline constexpr const char* kToolVersion = "0.1.0";

struct ScoringConfig {
  double p_target = 0.01;
  double c_miss = 1.0;
  double c_fa = 1.0;
  std::size_t asnorm_k = 20;
  bool asnorm_enabled = true;

  void validate() const;
};

// Sizing of the labeled train/eval corpora generated alongside the wild
// pretraining corpus. Eval speakers are disjoint from training speakers.
struct SupervisedSpec {
  std::size_t train_utterances_per_speaker = 6;
  std::size_t eval_speakers = 10;
  std::size_t eval_utterances_per_speaker = 4;
  std::size_t trials_per_class = 250;
  std::size_t enrolls_per_trial = 3;

  void validate() const;
};

// The one config file driving every stage. Section seeds equal to 0 are
// derived from the global seed, so a single --seed reseeds the whole run.
struct PipelineConfig {
  // Section seeds start at 0 = "derive from the global seed".
  PipelineConfig() {
    corpus.seed = 0;
    dino.seed = 0;
    filter.seed = 0;
    finetune.seed = 0;
  }

  std::uint64_t seed = 1234;
  std::string workdir = "runs/default";
  SyntheticCorpusSpec corpus;
  SupervisedSpec supervised;
  EncoderConfig encoder;
  DinoConfig dino;
  FilterConfig filter;
  FinetuneConfig finetune;
  ScoringConfig scoring;

  // Fills zero section seeds from the global seed.
  void resolve_seeds();
  void validate() const;

  std::string to_json_text() const;
  static PipelineConfig from_json_text(const std::string& text);

  // Parsed file (or defaults), dotted-path --set overrides applied in
  // order, then seeds resolved and the whole config validated.
  static PipelineConfig load(
      const std::optional<std::filesystem::path>& config_path,
      const std::vector<std::string>& set_overrides);
};

// Exclusive ownership of a workdir while a pipeline command runs.
class WorkdirLock {
 public:
  explicit WorkdirLock(const std::filesystem::path& workdir);
  ~WorkdirLock();
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  std::filesystem::path lock_path_;
};

struct TaggedReport {
  std::string tag;
  MetricsReport report;
};

// Stage orchestration over one workdir. Each stage reads only declared
// inputs, writes only into the workdir, and appends a run record.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  const PipelineConfig& config() const { return config_; }
  std::filesystem::path workdir() const { return workdir_; }

  // Artifact locations inside the workdir.
  std::filesystem::path pretrain_manifest_path() const;
  std::filesystem::path train_manifest_path() const;
  std::filesystem::path eval_manifest_path() const;
  std::filesystem::path trials_path() const;
  std::filesystem::path filtered_manifest_path() const;
  std::filesystem::path confidence_path() const;
  std::filesystem::path pretrain_dir(bool use_filtered) const;
  std::filesystem::path finetune_dir(const std::string& variant) const;
  std::filesystem::path scores_path(const std::string& tag) const;
  std::filesystem::path metrics_path(const std::string& tag) const;

  static std::string variant_name(FinetuneInit init, bool use_filtered);

  void generate();
  PretrainResult pretrain(bool use_filtered);
  FilterResult filter();
  FinetuneResult finetune(FinetuneInit init, bool use_filtered);
  // Scores the given checkpoint against the eval trials; `tag` names the
  // score/metrics artifacts.
  void score(const std::filesystem::path& checkpoint_path,
             const std::string& tag, bool allow_raw_checkpoint);
  MetricsReport evaluate(const std::string& tag);

  // The full cascade: generate, pretrain on raw data, filter, pretrain on
  // filtered data, then the four finetune/score/eval ablation runs
  // (filtering on/off x teacher/student initialization).
  std::vector<TaggedReport> run_all();

 private:
  void append_run_record(const std::string& stage,
                         const std::vector<std::string>& inputs,
                         const std::vector<std::string>& outputs,
                         double wall_ms);

  PipelineConfig config_;
  std::filesystem::path workdir_;
  std::string config_hash_;
};

}  // namespace cascade

#endif  // CASCADE_PIPELINE_HPP_
