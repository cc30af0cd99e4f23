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

#ifndef CASCADE_DINO_HPP_
#define CASCADE_DINO_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cascade/corpus.hpp"
#include "cascade/encoder.hpp"

namespace cascade {

struct AugmentationConfig {
  double noise_std = 0.1;
  double gain_lo = 0.9;
  double gain_hi = 1.1;
  double frame_dropout_prob = 0.05;

  bool disabled() const {
    return noise_std == 0.0 && gain_lo == 1.0 && gain_hi == 1.0 &&
           frame_dropout_prob == 0.0;
  }
  void validate() const;
};

struct DinoConfig {
  std::size_t num_global_views = 2;   // N
  std::size_t num_local_views = 4;    // M
  std::size_t global_len = 30;        // frames, 0.3 s at 100 frames/s
  std::size_t local_len = 20;         // frames, 0.2 s at 100 frames/s
  double student_temperature = 0.1;   // tau_s
  double teacher_temperature = 0.04;  // tau_t, sharper than the student
  double ema_lambda = 0.99;
  // Optional linear ramp of the EMA momentum across training; < 0 disables.
  double ema_lambda_end = -1.0;
  double center_momentum = 0.9;  // m_c
  double learning_rate = 0.02;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t warmup_steps = 0;
  std::size_t batch_size = 16;
  std::size_t epochs = 5;
  AugmentationConfig augmentation;
  std::uint64_t seed = 1;

  void validate() const;
};

struct ViewSet {
  std::vector<FeatureSequence> global_views;  // N
  std::vector<FeatureSequence> local_views;   // M
};

// N long and M short crops from one utterance at uniformly random offsets,
// each independently augmented (additive noise, scalar gain, frame
// dropout). Requires T >= global_len; shorter utterances are skipped by
// the caller, not here.
ViewSet sample_views(const FeatureSequence& seq, const DinoConfig& config,
                     Rng& rng);

struct DinoLossResult {
  double loss = 0.0;
  // dLoss/dStudentLogits, one K-vector per student view (globals first).
  std::vector<std::vector<double>> dstudent_logits;
  // Number of cross-entropy terms evaluated: N(N+M-1).
  std::size_t term_count = 0;
};

// Self-distillation loss: teacher distributions softmax((t_i - c)/tau_t)
// are constants; student distributions softmax(s_j/tau_s) receive the
// gradient. Student logits are ordered globals first, so index i < N is
// the student view of the same crop the teacher saw as t_i and the inner
// sum skips j == i.
DinoLossResult dino_loss(const std::vector<std::vector<double>>& student_logits,
                         const std::vector<std::vector<double>>& teacher_logits,
                         const std::vector<double>& center, double tau_s,
                         double tau_t);

// theta_t <- lambda theta_t + (1 - lambda) theta_s, every tensor.
void ema_update(Parameters& teacher, const Parameters& student, double lambda);

// c <- m_c c + (1 - m_c) mean(batch teacher logits).
std::vector<double> center_update(
    const std::vector<double>& center,
    const std::vector<std::vector<double>>& teacher_logits_batch,
    double center_momentum);

// Student/teacher parameters, the center vector and the step counter: the
// complete state of pretraining.
struct DinoState {
  Parameters student;
  Parameters teacher;
  std::vector<double> center;
  std::size_t step = 0;
};

struct LossLogEntry {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double center_norm = 0.0;
  double ema_lambda = 0.0;
};

struct PretrainResult {
  std::size_t skipped_utterances = 0;
  std::size_t usable_utterances = 0;
  std::size_t steps = 0;
  double final_loss = 0.0;
  std::vector<LossLogEntry> loss_log;
};

struct PretrainPaths {
  std::filesystem::path teacher_checkpoint;
  std::filesystem::path student_checkpoint;
  std::filesystem::path loss_log;
};

std::string loss_log_to_text(const std::vector<LossLogEntry>& log);

// Stage-2 pretraining over a manifest. Per step: sample views, student
// forward on all N+M views, teacher forward on the N globals, loss,
// backprop through the student only, SGD-with-momentum update, EMA update
// of the teacher, center update. Writes teacher/student checkpoints plus a
// JSONL loss log. Deterministic per seed.
PretrainResult pretrain(const std::vector<UtteranceRecord>& manifest,
                        const std::filesystem::path& manifest_path,
                        const EncoderConfig& encoder_config,
                        const DinoConfig& config, const PretrainPaths& paths);

// In-memory variant used by tests that need to observe the state; the
// file-writing pretrain() wraps it.
PretrainResult pretrain_state(const std::vector<UtteranceRecord>& manifest,
                              const std::filesystem::path& manifest_path,
                              const EncoderConfig& encoder_config,
                              const DinoConfig& config, DinoState& state);

}  // namespace cascade

#endif  // CASCADE_DINO_HPP_
