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

#ifndef CASCADE_FINETUNE_HPP_
#define CASCADE_FINETUNE_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cascade/dino.hpp"
#include "cascade/encoder.hpp"

namespace cascade {

enum class FinetuneInit { kTeacher, kStudent, kRandom };

std::string finetune_init_name(FinetuneInit init);
FinetuneInit finetune_init_from_name(const std::string& name);

struct LargeMarginStage {
  bool enabled = false;
  std::size_t extra_epochs = 10;
  double margin = 0.5;      // margin_lm >= the base margin
  std::size_t crop_len = 225;  // crop_len_lm >= the base crop
};

struct FinetuneConfig {
  FinetuneInit init = FinetuneInit::kTeacher;
  std::size_t epochs = 50;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double aam_scale = 32.0;
  double aam_margin = 0.2;  // radians, in [0, pi/2)
  LargeMarginStage large_margin;
  std::size_t crop_len = 150;
  std::size_t batch_size = 32;
  AugmentationConfig augmentation{0.05, 0.95, 1.05, 0.0};
  std::uint64_t seed = 1;

  void validate() const;
};

// Backbone copied verbatim from a stage-2 checkpoint (head discarded) plus
// a freshly initialized classifier matrix of shape num_speakers x E.
// Finetuned checkpoints are rejected as initialization sources.
Parameters init_from_pretrained(const Checkpoint& pretrained,
                                std::size_t num_speakers, Rng& rng);
Parameters init_finetune_random(const EncoderConfig& config,
                                std::size_t num_speakers, Rng& rng);

// Additive-angular-margin logits over L2-normalized embedding and class
// weights. With a label (training mode) the true class gets
// s cos(theta_y + m), falling back to s (cos theta_y - m sin m) when
// theta_y + m exceeds pi; without a label all classes get s cos theta.
std::vector<double> aam_logits(const std::vector<double>& embedding,
                               const Matrix& classifier, double scale,
                               double margin,
                               std::optional<std::size_t> true_label);

struct AamGradients {
  double loss = 0.0;
  std::vector<double> dembedding;
  Matrix dclassifier;
  std::size_t predicted = 0;  // argmax of the inference-mode logits
};

// Softmax cross-entropy over aam_logits with exact analytic gradients
// w.r.t. the raw embedding and classifier rows.
AamGradients aam_cross_entropy(const std::vector<double>& embedding,
                               const Matrix& classifier, double scale,
                               double margin, std::size_t label);

struct TrainLogEntry {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double margin_in_effect = 0.0;
};

std::string train_log_to_text(const std::vector<TrainLogEntry>& log);

struct FinetuneResult {
  std::size_t num_speakers = 0;
  std::size_t steps = 0;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  std::vector<TrainLogEntry> log;
};

struct FinetunePaths {
  std::filesystem::path checkpoint;
  std::filesystem::path train_log;
};

// Supervised stage over a labeled manifest (speaker_label on every record,
// contiguous from 0, at least two speakers). Per step: random crop with
// the shared augmentation family, embed, AAM cross-entropy, SGD update of
// backbone and classifier; optionally a large-margin continuation. The
// emitted checkpoint has role=finetuned; its classifier tensor is carried
// for reproducibility but ignored by scoring.
FinetuneResult finetune(const std::vector<UtteranceRecord>& manifest,
                        const std::filesystem::path& manifest_path,
                        const EncoderConfig& encoder_config,
                        const FinetuneConfig& config,
                        const std::optional<std::filesystem::path>& init_ckpt,
                        const FinetunePaths& paths);

// In-memory variant exposing the final parameters.
FinetuneResult finetune_params(
    const std::vector<UtteranceRecord>& manifest,
    const std::filesystem::path& manifest_path,
    const EncoderConfig& encoder_config, const FinetuneConfig& config,
    const std::optional<std::filesystem::path>& init_ckpt, Parameters& params);

// Mirrors the 6-second concatenation policy: same-speaker records are
// appended until every emitted utterance reaches min_len frames. Writes
// the concatenated feature files and the new labeled manifest.
std::vector<UtteranceRecord> concat_short_utterances(
    const std::vector<UtteranceRecord>& manifest,
    const std::filesystem::path& manifest_path, std::size_t min_len,
    const std::filesystem::path& features_dir,
    const std::filesystem::path& out_manifest_path);

}  // namespace cascade

#endif  // CASCADE_FINETUNE_HPP_
