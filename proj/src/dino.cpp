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

#include "cascade/dino.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "cascade/io_util.hpp"

namespace cascade {

using nlohmann::json;

void AugmentationConfig::validate() const {
  if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
  if (gain_lo > gain_hi || gain_lo <= 0.0) {
    throw ConfigError("gain_range must satisfy 0 < lo <= hi");
  }
  if (frame_dropout_prob < 0.0 || frame_dropout_prob >= 1.0) {
    throw ConfigError("frame_dropout_prob must lie in [0, 1)");
  }
}

void DinoConfig::validate() const {
  if (num_global_views < 2) {
    throw ConfigError("num_global_views must be >= 2 so teacher/student "
                      "cross pairs exist");
  }
  if (local_len >= global_len) {
    throw ConfigError("local_len must be < global_len");
  }
  if (local_len < 2) throw ConfigError("local_len must be >= 2 frames");
  if (!(teacher_temperature > 0.0) || !(student_temperature > 0.0) ||
      teacher_temperature >= student_temperature) {
    throw ConfigError("temperatures must satisfy 0 < tau_t < tau_s");
  }
  if (!(ema_lambda > 0.0) || ema_lambda > 1.0) {
    throw ConfigError("ema_lambda must lie in (0, 1]");
  }
  if (ema_lambda_end >= 0.0 &&
      (!(ema_lambda_end > 0.0) || ema_lambda_end > 1.0)) {
    throw ConfigError("ema_lambda_end must lie in (0, 1] when set");
  }
  if (center_momentum < 0.0 || center_momentum >= 1.0) {
    throw ConfigError("center_momentum must lie in [0, 1)");
  }
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  augmentation.validate();
}

namespace {

void augment_inplace(FeatureSequence& view, const AugmentationConfig& aug,
                     Rng& rng) {
  Matrix& m = view.frames;
  if (aug.noise_std > 0.0) {
    for (double& v : m.storage()) v += aug.noise_std * rng.gaussian();
  }
  const double gain = rng.uniform(aug.gain_lo, aug.gain_hi);
  if (gain != 1.0) {
    for (double& v : m.storage()) v *= gain;
  }
  if (aug.frame_dropout_prob > 0.0) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      if (rng.next_double() < aug.frame_dropout_prob) {
        double* row = m.data() + r * m.cols();
        std::fill(row, row + m.cols(), 0.0);
      }
    }
  }
}

FeatureSequence sample_one_view(const FeatureSequence& seq, std::size_t len,
                                const AugmentationConfig& aug, Rng& rng) {
  const std::size_t start =
      static_cast<std::size_t>(rng.uniform_below(seq.num_frames() - len + 1));
  FeatureSequence view = crop(seq, start, len);
  augment_inplace(view, aug, rng);
  return view;
}

}  // namespace

ViewSet sample_views(const FeatureSequence& seq, const DinoConfig& config,
                     Rng& rng) {
  if (seq.num_frames() < config.global_len) {
    throw InvalidInputError("utterance shorter than global_len");
  }
  ViewSet views;
  views.global_views.reserve(config.num_global_views);
  for (std::size_t i = 0; i < config.num_global_views; ++i) {
    views.global_views.push_back(
        sample_one_view(seq, config.global_len, config.augmentation, rng));
  }
  views.local_views.reserve(config.num_local_views);
  for (std::size_t i = 0; i < config.num_local_views; ++i) {
    views.local_views.push_back(
        sample_one_view(seq, config.local_len, config.augmentation, rng));
  }
  return views;
}

DinoLossResult dino_loss(
    const std::vector<std::vector<double>>& student_logits,
    const std::vector<std::vector<double>>& teacher_logits,
    const std::vector<double>& center, double tau_s, double tau_t) {
  const std::size_t n = teacher_logits.size();
  const std::size_t total = student_logits.size();
  if (n < 1 || total < 2 || total < n) {
    throw InvalidInputError("dino_loss needs N teacher and N+M student views");
  }
  const std::size_t k = center.size();
  for (const auto& v : teacher_logits) {
    if (v.size() != k) throw InvalidInputError("teacher logit dim mismatch");
  }
  for (const auto& v : student_logits) {
    if (v.size() != k) throw InvalidInputError("student logit dim mismatch");
  }

  // Teacher distributions are constants: centered then sharpened.
  std::vector<std::vector<double>> p(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> centered(k);
    for (std::size_t d = 0; d < k; ++d) {
      centered[d] = teacher_logits[i][d] - center[d];
    }
    p[i] = softmax(centered, tau_t);
  }
  std::vector<std::vector<double>> q(total);
  for (std::size_t j = 0; j < total; ++j) {
    q[j] = softmax(student_logits[j], tau_s);
  }

  DinoLossResult result;
  result.dstudent_logits.assign(total, std::vector<double>(k, 0.0));
  const double prefactor =
      1.0 / (static_cast<double>(n) * static_cast<double>(total - 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < total; ++j) {
      if (j == i) continue;
      result.loss += prefactor * cross_entropy(p[i], q[j]);
      ++result.term_count;
      // d H(p_i, softmax(s_j/tau_s)) / d s_j = (q_j - p_i) / tau_s
      auto& grad = result.dstudent_logits[j];
      for (std::size_t d = 0; d < k; ++d) {
        grad[d] += prefactor * (q[j][d] - p[i][d]) / tau_s;
      }
    }
  }
  return result;
}

void ema_update(Parameters& teacher, const Parameters& student,
                double lambda) {
  if (!teacher.same_shape(student)) {
    throw InvalidInputError("ema_update shape mismatch");
  }
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    double* t = teacher[i].value.data();
    const double* s = student[i].value.data();
    const std::size_t count = teacher[i].value.size();
    for (std::size_t j = 0; j < count; ++j) {
      t[j] = lambda * t[j] + (1.0 - lambda) * s[j];
    }
  }
}

std::vector<double> center_update(
    const std::vector<double>& center,
    const std::vector<std::vector<double>>& teacher_logits_batch,
    double center_momentum) {
  if (teacher_logits_batch.empty()) {
    throw InvalidInputError("center_update with empty batch");
  }
  const std::size_t k = center.size();
  std::vector<double> mean(k, 0.0);
  for (const auto& v : teacher_logits_batch) {
    if (v.size() != k) throw InvalidInputError("center dim mismatch");
    for (std::size_t d = 0; d < k; ++d) mean[d] += v[d];
  }
  const double inv = 1.0 / static_cast<double>(teacher_logits_batch.size());
  std::vector<double> out(k);
  for (std::size_t d = 0; d < k; ++d) {
    out[d] = center_momentum * center[d] + (1.0 - center_momentum) * mean[d] * inv;
  }
  return out;
}

std::string loss_log_to_text(const std::vector<LossLogEntry>& log) {
  std::string out;
  for (const auto& e : log) {
    json j;
    j["step"] = e.step;
    j["epoch"] = e.epoch;
    j["loss"] = e.loss;
    j["center_norm"] = e.center_norm;
    j["ema_lambda"] = e.ema_lambda;
    out += j.dump();
    out += '\n';
  }
  return out;
}

PretrainResult pretrain_state(const std::vector<UtteranceRecord>& manifest,
                              const std::filesystem::path& manifest_path,
                              const EncoderConfig& encoder_config,
                              const DinoConfig& config, DinoState& state) {
  encoder_config.validate();
  config.validate();

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (manifest[i].frame_count >= config.global_len) usable.push_back(i);
  }
  PretrainResult result;
  result.skipped_utterances = manifest.size() - usable.size();
  result.usable_utterances = usable.size();
  if (usable.empty()) {
    throw ConfigError("no usable utterances: all " +
                      std::to_string(manifest.size()) +
                      " are shorter than global_len");
  }

  Rng rng(config.seed);
  state.student = init_params(encoder_config, rng, /*with_head=*/true);
  state.teacher = state.student;  // exact copy at step 0
  state.center.assign(encoder_config.head_output_dim, 0.0);
  state.step = 0;

  Parameters momentum_buf = state.student.zeros_like();
  const std::size_t steps_per_epoch =
      (usable.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    // Fisher-Yates with the stage generator.
    std::vector<std::size_t> order = usable;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_below(i)]);
    }

    for (std::size_t begin = 0; begin < order.size();
         begin += config.batch_size) {
      const std::size_t end =
          std::min(begin + config.batch_size, order.size());
      const std::size_t batch = end - begin;

      Parameters grads = state.student.zeros_like();
      std::vector<std::vector<double>> teacher_batch_logits;
      double batch_loss = 0.0;

      for (std::size_t bi = begin; bi < end; ++bi) {
        const UtteranceRecord& rec = manifest[order[bi]];
        FeatureSequence seq =
            read_features(resolve_feature_path(manifest_path, rec));
        if (seq.num_frames() != rec.frame_count) {
          throw ParseError(ParseError::Kind::kDimensionMismatch,
                           "manifest frame_count disagrees with feature file "
                           "for " + rec.utterance_id);
        }
        ViewSet views = sample_views(seq, config, rng);

        std::vector<EmbedTrace> etraces;
        std::vector<HeadTrace> htraces;
        std::vector<std::vector<double>> student_logits;
        auto forward_student = [&](const FeatureSequence& v) {
          etraces.push_back(embed(encoder_config, state.student, v));
          htraces.push_back(head_forward(encoder_config, state.student,
                                         etraces.back().embedding));
          student_logits.push_back(htraces.back().logits);
        };
        for (const auto& v : views.global_views) forward_student(v);
        for (const auto& v : views.local_views) forward_student(v);

        std::vector<std::vector<double>> teacher_logits;
        for (const auto& v : views.global_views) {
          auto et = embed(encoder_config, state.teacher, v);
          auto ht = head_forward(encoder_config, state.teacher, et.embedding);
          teacher_logits.push_back(ht.logits);
          teacher_batch_logits.push_back(std::move(ht.logits));
        }

        auto loss = dino_loss(student_logits, teacher_logits, state.center,
                              config.student_temperature,
                              config.teacher_temperature);
        batch_loss += loss.loss;
        for (std::size_t v = 0; v < student_logits.size(); ++v) {
          backward(encoder_config, state.student, etraces[v], htraces[v],
                   loss.dstudent_logits[v], grads);
        }
      }

      // Batch reduction is the mean over utterances.
      const double inv_batch = 1.0 / static_cast<double>(batch);
      grads.scale(inv_batch);
      batch_loss *= inv_batch;

      double lr = config.learning_rate;
      if (config.warmup_steps > 0 && state.step < config.warmup_steps) {
        lr *= static_cast<double>(state.step + 1) /
              static_cast<double>(config.warmup_steps);
      }
      // v <- momentum v + g + wd theta; theta <- theta - lr v
      for (std::size_t ti = 0; ti < state.student.size(); ++ti) {
        double* theta = state.student[ti].value.data();
        double* vel = momentum_buf[ti].value.data();
        const double* g = grads[ti].value.data();
        const std::size_t count = state.student[ti].value.size();
        for (std::size_t j = 0; j < count; ++j) {
          vel[j] = config.momentum * vel[j] + g[j] +
                   config.weight_decay * theta[j];
          theta[j] -= lr * vel[j];
        }
      }

      double lambda = config.ema_lambda;
      if (config.ema_lambda_end >= 0.0 && total_steps > 1) {
        lambda += (config.ema_lambda_end - config.ema_lambda) *
                  static_cast<double>(state.step) /
                  static_cast<double>(total_steps - 1);
      }
      ema_update(state.teacher, state.student, lambda);
      state.center = center_update(state.center, teacher_batch_logits,
                                   config.center_momentum);

      ++state.step;
      result.loss_log.push_back(LossLogEntry{
          state.step, epoch, batch_loss, norm2(state.center), lambda});
      result.final_loss = batch_loss;
    }
  }
  result.steps = state.step;
  return result;
}

PretrainResult pretrain(const std::vector<UtteranceRecord>& manifest,
                        const std::filesystem::path& manifest_path,
                        const EncoderConfig& encoder_config,
                        const DinoConfig& config, const PretrainPaths& paths) {
  DinoState state;
  PretrainResult result =
      pretrain_state(manifest, manifest_path, encoder_config, config, state);
  save_checkpoint(paths.teacher_checkpoint,
                  Checkpoint{CheckpointRole::kTeacher, encoder_config,
                             state.teacher});
  save_checkpoint(paths.student_checkpoint,
                  Checkpoint{CheckpointRole::kStudent, encoder_config,
                             state.student});
  atomic_write_text(paths.loss_log, loss_log_to_text(result.loss_log));
  return result;
}

}  // namespace cascade
