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

#include "cascade/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "cascade/io_util.hpp"

namespace cascade {

using nlohmann::json;

std::string finetune_init_name(FinetuneInit init) {
  switch (init) {
    case FinetuneInit::kTeacher:
      return "teacher";
    case FinetuneInit::kStudent:
      return "student";
    case FinetuneInit::kRandom:
      return "random";
  }
  throw InvalidInputError("unreachable finetune init");
}

FinetuneInit finetune_init_from_name(const std::string& name) {
  if (name == "teacher") return FinetuneInit::kTeacher;
  if (name == "student") return FinetuneInit::kStudent;
  if (name == "random") return FinetuneInit::kRandom;
  throw ConfigError("unknown finetune init '" + name +
                    "' (expected teacher|student|random)");
}

void FinetuneConfig::validate() const {
  if (epochs < 1) throw ConfigError("finetune epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (!(aam_scale > 0.0)) throw ConfigError("aam_scale must be > 0");
  if (aam_margin < 0.0 || aam_margin >= M_PI / 2.0) {
    throw ConfigError("aam_margin must lie in [0, pi/2)");
  }
  if (crop_len < 2) throw ConfigError("crop_len must be >= 2");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (large_margin.enabled) {
    if (large_margin.margin < aam_margin) {
      throw ConfigError("large-margin stage margin must be >= aam_margin");
    }
    if (large_margin.margin >= M_PI / 2.0) {
      throw ConfigError("large-margin stage margin must be < pi/2");
    }
    if (large_margin.crop_len < crop_len) {
      throw ConfigError("large-margin crop_len must be >= crop_len");
    }
    if (large_margin.extra_epochs < 1) {
      throw ConfigError("large-margin extra_epochs must be >= 1");
    }
  }
  augmentation.validate();
}

namespace {

Matrix init_classifier(std::size_t num_speakers, std::size_t embedding_dim,
                       Rng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(embedding_dim + num_speakers));
  Matrix w(num_speakers, embedding_dim);
  for (double& v : w.storage()) v = rng.uniform(-limit, limit);
  return w;
}

bool is_backbone_tensor(const std::string& name) {
  return name.rfind("frame.", 0) == 0 || name.rfind("embed.", 0) == 0;
}

}  // namespace

Parameters init_from_pretrained(const Checkpoint& pretrained,
                                std::size_t num_speakers, Rng& rng) {
  if (pretrained.role == CheckpointRole::kFinetuned) {
    throw ParseError(ParseError::Kind::kBadRole,
                     "finetune initialization requires a teacher or student "
                     "checkpoint, got role=finetuned");
  }
  if (num_speakers < 2) {
    throw ConfigError("finetune needs at least 2 speakers");
  }
  Parameters params;
  for (const auto& t : pretrained.params) {
    if (is_backbone_tensor(t.name)) {
      params.add(t.name, t.rank, t.value);
    }
    // head.* tensors are the stage-2 prediction layers; discarded.
  }
  params.add("classifier.weight", 2,
             init_classifier(num_speakers,
                             pretrained.config.embedding_dim, rng));
  return params;
}

Parameters init_finetune_random(const EncoderConfig& config,
                                std::size_t num_speakers, Rng& rng) {
  if (num_speakers < 2) {
    throw ConfigError("finetune needs at least 2 speakers");
  }
  Parameters params = init_params(config, rng, /*with_head=*/false);
  params.add("classifier.weight", 2,
             init_classifier(num_speakers, config.embedding_dim, rng));
  return params;
}

namespace {

struct AamForward {
  std::vector<double> unit_embedding;
  double embedding_norm = 0.0;
  std::vector<double> cosines;        // cos theta_k
  std::vector<double> logits;         // margin-adjusted, training mode
  double dtarget_dcos = 1.0;          // d logit_y / d cos theta_y (per scale)
};

AamForward aam_forward(const std::vector<double>& embedding,
                       const Matrix& classifier, double scale, double margin,
                       std::optional<std::size_t> true_label) {
  if (embedding.size() != classifier.cols()) {
    throw InvalidInputError("embedding dim does not match classifier");
  }
  if (true_label.has_value() && *true_label >= classifier.rows()) {
    throw InvalidInputError("label out of range");
  }
  AamForward f;
  f.embedding_norm = norm2(embedding);
  f.unit_embedding = l2_normalize(embedding);
  const std::size_t k = classifier.rows();
  f.cosines.resize(k);
  f.logits.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double cy = cosine(embedding, classifier.row(c));
    f.cosines[c] = cy;
    f.logits[c] = scale * cy;
  }
  if (true_label.has_value() && margin > 0.0) {
    const std::size_t y = *true_label;
    const double cy = f.cosines[y];
    if (cy >= std::cos(M_PI - margin)) {
      const double sin_theta = std::sqrt(std::max(1.0 - cy * cy, 0.0));
      f.logits[y] =
          scale * (cy * std::cos(margin) - sin_theta * std::sin(margin));
      // The derivative denominator is clamped; the value is exact.
      f.dtarget_dcos = std::cos(margin) +
                       std::sin(margin) * cy / std::max(sin_theta, 1e-6);
    } else {
      // theta_y + m > pi: the easy-margin fallback, linear in cos theta.
      f.logits[y] = scale * (cy - margin * std::sin(margin));
      f.dtarget_dcos = 1.0;
    }
  }
  return f;
}

}  // namespace

std::vector<double> aam_logits(const std::vector<double>& embedding,
                               const Matrix& classifier, double scale,
                               double margin,
                               std::optional<std::size_t> true_label) {
  return aam_forward(embedding, classifier, scale, margin, true_label).logits;
}

AamGradients aam_cross_entropy(const std::vector<double>& embedding,
                               const Matrix& classifier, double scale,
                               double margin, std::size_t label) {
  const AamForward f =
      aam_forward(embedding, classifier, scale, margin, label);
  const std::size_t k = classifier.rows();
  const std::size_t dim = classifier.cols();
  const auto probs = softmax(f.logits, 1.0);

  AamGradients g;
  g.loss = -std::log(std::max(probs[label], kLogClampEpsilon));
  g.predicted = static_cast<std::size_t>(
      std::max_element(f.cosines.begin(), f.cosines.end()) -
      f.cosines.begin());
  g.dembedding.assign(dim, 0.0);
  g.dclassifier = Matrix(k, dim);

  for (std::size_t c = 0; c < k; ++c) {
    double dlogit = probs[c] - (c == label ? 1.0 : 0.0);
    double dcos = dlogit * scale * (c == label ? f.dtarget_dcos : 1.0);
    if (dcos == 0.0) continue;

    const auto row = classifier.row(c);
    const double wnorm = norm2(row);
    const auto unit_w = l2_normalize(row);
    const double cy = f.cosines[c];
    // d cos / d e = (w_hat - cos * e_hat) / |e|
    for (std::size_t i = 0; i < dim; ++i) {
      g.dembedding[i] +=
          dcos * (unit_w[i] - cy * f.unit_embedding[i]) / f.embedding_norm;
    }
    // d cos / d w = (e_hat - cos * w_hat) / |w|
    double* dw = g.dclassifier.data() + c * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      dw[i] += dcos * (f.unit_embedding[i] - cy * unit_w[i]) / wnorm;
    }
  }
  return g;
}

std::string train_log_to_text(const std::vector<TrainLogEntry>& log) {
  std::string out;
  for (const auto& e : log) {
    json j;
    j["step"] = e.step;
    j["epoch"] = e.epoch;
    j["loss"] = e.loss;
    j["train_accuracy"] = e.train_accuracy;
    j["margin_in_effect"] = e.margin_in_effect;
    out += j.dump();
    out += '\n';
  }
  return out;
}

FinetuneResult finetune_params(
    const std::vector<UtteranceRecord>& manifest,
    const std::filesystem::path& manifest_path,
    const EncoderConfig& encoder_config, const FinetuneConfig& config,
    const std::optional<std::filesystem::path>& init_ckpt,
    Parameters& params) {
  encoder_config.validate();
  config.validate();
  if (manifest.empty()) throw ConfigError("finetune manifest is empty");

  // Labels must be contiguous from zero.
  std::size_t max_label = 0;
  std::vector<bool> seen;
  for (const auto& rec : manifest) {
    if (!rec.speaker_label.has_value() || *rec.speaker_label < 0) {
      throw ConfigError("finetune manifest record '" + rec.utterance_id +
                        "' has no speaker_label");
    }
    const auto label = static_cast<std::size_t>(*rec.speaker_label);
    max_label = std::max(max_label, label);
    if (seen.size() <= label) seen.resize(label + 1, false);
    seen[label] = true;
  }
  const std::size_t num_speakers = max_label + 1;
  for (std::size_t s = 0; s < num_speakers; ++s) {
    if (!seen[s]) {
      throw ConfigError("speaker labels are not contiguous: missing " +
                        std::to_string(s));
    }
  }
  if (num_speakers < 2) {
    throw ConfigError("finetune needs at least 2 speakers, got 1");
  }

  Rng rng(config.seed);
  if (config.init == FinetuneInit::kRandom) {
    params = init_finetune_random(encoder_config, num_speakers, rng);
  } else {
    if (!init_ckpt.has_value()) {
      throw ConfigError("finetune init=" + finetune_init_name(config.init) +
                        " requires a checkpoint path");
    }
    Checkpoint pretrained = load_checkpoint(*init_ckpt);
    const auto expected_role = config.init == FinetuneInit::kTeacher
                                   ? CheckpointRole::kTeacher
                                   : CheckpointRole::kStudent;
    if (pretrained.role != expected_role) {
      throw ParseError(ParseError::Kind::kBadRole,
                       "expected a " + checkpoint_role_name(expected_role) +
                           " checkpoint, got " +
                           checkpoint_role_name(pretrained.role));
    }
    if (pretrained.config.feature_dim != encoder_config.feature_dim ||
        pretrained.config.hidden_dims != encoder_config.hidden_dims ||
        pretrained.config.embedding_dim != encoder_config.embedding_dim) {
      throw ParseError(ParseError::Kind::kShapeMismatch,
                       "pretrained backbone shape does not match the "
                       "configured encoder");
    }
    params = init_from_pretrained(pretrained, num_speakers, rng);
  }

  FinetuneResult result;
  result.num_speakers = num_speakers;
  Parameters momentum_buf = params.zeros_like();

  const std::size_t total_epochs =
      config.epochs +
      (config.large_margin.enabled ? config.large_margin.extra_epochs : 0);

  for (std::size_t epoch = 0; epoch < total_epochs; ++epoch) {
    const bool lm = epoch >= config.epochs;
    const double margin = lm ? config.large_margin.margin : config.aam_margin;
    const std::size_t crop_len =
        lm ? config.large_margin.crop_len : config.crop_len;

    std::vector<std::size_t> order(manifest.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_below(i)]);
    }

    for (std::size_t begin = 0; begin < order.size();
         begin += config.batch_size) {
      const std::size_t end =
          std::min(begin + config.batch_size, order.size());
      const std::size_t batch = end - begin;

      Parameters grads = params.zeros_like();
      double batch_loss = 0.0;
      std::size_t batch_correct = 0;

      for (std::size_t bi = begin; bi < end; ++bi) {
        const UtteranceRecord& rec = manifest[order[bi]];
        FeatureSequence seq =
            read_features(resolve_feature_path(manifest_path, rec));
        const std::size_t len = std::min(crop_len, seq.num_frames());
        const std::size_t start = static_cast<std::size_t>(
            rng.uniform_below(seq.num_frames() - len + 1));
        FeatureSequence view = crop(seq, start, len);
        if (!config.augmentation.disabled()) {
          if (config.augmentation.noise_std > 0.0) {
            for (double& v : view.frames.storage()) {
              v += config.augmentation.noise_std * rng.gaussian();
            }
          }
          const double gain = rng.uniform(config.augmentation.gain_lo,
                                          config.augmentation.gain_hi);
          for (double& v : view.frames.storage()) v *= gain;
          if (config.augmentation.frame_dropout_prob > 0.0) {
            for (std::size_t r = 0; r < view.frames.rows(); ++r) {
              if (rng.next_double() < config.augmentation.frame_dropout_prob) {
                double* row = view.frames.data() + r * view.frames.cols();
                std::fill(row, row + view.frames.cols(), 0.0);
              }
            }
          }
        }

        auto etrace = embed(encoder_config, params, view);
        const auto label = static_cast<std::size_t>(*rec.speaker_label);
        auto aam = aam_cross_entropy(etrace.embedding,
                                     params.at("classifier.weight"),
                                     config.aam_scale, margin, label);
        batch_loss += aam.loss;
        if (aam.predicted == label) ++batch_correct;
        embed_backward(encoder_config, params, etrace, aam.dembedding, grads);
        {
          Matrix& dc = grads.at("classifier.weight");
          const double* src = aam.dclassifier.data();
          double* dst = dc.data();
          for (std::size_t i = 0; i < dc.size(); ++i) dst[i] += src[i];
        }
      }

      const double inv_batch = 1.0 / static_cast<double>(batch);
      grads.scale(inv_batch);
      batch_loss *= inv_batch;

      for (std::size_t ti = 0; ti < params.size(); ++ti) {
        double* theta = params[ti].value.data();
        double* vel = momentum_buf[ti].value.data();
        const double* g = grads[ti].value.data();
        const std::size_t count = params[ti].value.size();
        for (std::size_t j = 0; j < count; ++j) {
          vel[j] = config.momentum * vel[j] + g[j] +
                   config.weight_decay * theta[j];
          theta[j] -= config.learning_rate * vel[j];
        }
      }

      ++result.steps;
      result.final_loss = batch_loss;
      result.final_accuracy =
          static_cast<double>(batch_correct) / static_cast<double>(batch);
      result.log.push_back(TrainLogEntry{result.steps, epoch, batch_loss,
                                         result.final_accuracy, margin});
    }
  }
  return result;
}

FinetuneResult finetune(const std::vector<UtteranceRecord>& manifest,
                        const std::filesystem::path& manifest_path,
                        const EncoderConfig& encoder_config,
                        const FinetuneConfig& config,
                        const std::optional<std::filesystem::path>& init_ckpt,
                        const FinetunePaths& paths) {
  Parameters params;
  FinetuneResult result = finetune_params(manifest, manifest_path,
                                          encoder_config, config, init_ckpt,
                                          params);
  save_checkpoint(paths.checkpoint, Checkpoint{CheckpointRole::kFinetuned,
                                               encoder_config, params});
  atomic_write_text(paths.train_log, train_log_to_text(result.log));
  return result;
}

std::vector<UtteranceRecord> concat_short_utterances(
    const std::vector<UtteranceRecord>& manifest,
    const std::filesystem::path& manifest_path, std::size_t min_len,
    const std::filesystem::path& features_dir,
    const std::filesystem::path& out_manifest_path) {
  // Group record indices by label, preserving manifest order.
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (!manifest[i].speaker_label.has_value()) {
      throw ConfigError("concat_short_utterances needs a labeled manifest");
    }
    groups[*manifest[i].speaker_label].push_back(i);
  }

  std::vector<UtteranceRecord> out;
  for (const auto& [label, indices] : groups) {
    std::vector<FeatureSequence> buffer;
    std::vector<std::string> buffer_ids;
    std::size_t buffered = 0;
    auto flush = [&]() {
      if (buffer.empty()) return;
      const std::size_t dim = buffer[0].dim();
      Matrix all(buffered, dim);
      std::size_t at = 0;
      for (const auto& seq : buffer) {
        std::copy(seq.frames.data(),
                  seq.frames.data() + seq.frames.size(),
                  all.data() + at * dim);
        at += seq.num_frames();
      }
      UtteranceRecord rec;
      rec.utterance_id = buffer_ids.front();
      if (buffer_ids.size() > 1) rec.utterance_id += "+cat";
      rec.frame_count = buffered;
      rec.vad_segments = {{0, buffered}};
      rec.truth_speakers = manifest[indices.front()].truth_speakers;
      rec.truth_quality = TruthQuality::kClean;
      rec.speaker_label = label;
      const auto file = features_dir / (rec.utterance_id + ".cspf");
      write_features(file, FeatureSequence{std::move(all)});
      rec.feature_path =
          file.lexically_relative(out_manifest_path.parent_path())
              .generic_string();
      out.push_back(std::move(rec));
      buffer.clear();
      buffer_ids.clear();
      buffered = 0;
    };

    for (std::size_t idx : indices) {
      const auto& rec = manifest[idx];
      buffer.push_back(read_features(resolve_feature_path(manifest_path, rec)));
      buffer_ids.push_back(rec.utterance_id);
      buffered += buffer.back().num_frames();
      if (buffered >= min_len) flush();
    }
    // A leftover shorter than min_len joins the previous emission if one
    // exists, otherwise it is emitted as-is (a lone short speaker cannot
    // be fixed by concatenation).
    if (!buffer.empty()) {
      if (!out.empty() && out.back().speaker_label == label) {
        const auto& prev = out.back();
        buffer.insert(buffer.begin(),
                      read_features(resolve_feature_path(out_manifest_path,
                                                         prev)));
        buffer_ids.insert(buffer_ids.begin(), prev.utterance_id);
        buffered += prev.frame_count;
        out.pop_back();
      }
      flush();
    }
  }

  write_manifest(out_manifest_path, out);
  return out;
}

}  // namespace cascade
