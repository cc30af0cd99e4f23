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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cascade/dino.hpp"
#include "cascade/io_util.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cascade;
using cascade::testing::TempDir;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig config;
  config.feature_dim = 6;
  config.hidden_dims = {10};
  config.embedding_dim = 8;
  config.head_hidden_dims = {12};
  config.head_output_dim = 16;
  return config;
}

DinoConfig tiny_dino() {
  DinoConfig config;
  config.global_len = 12;
  config.local_len = 6;
  config.batch_size = 4;
  config.epochs = 1;
  config.seed = 3;
  return config;
}

FeatureSequence random_sequence(std::size_t t, std::size_t d, Rng& rng) {
  Matrix frames(t, d);
  for (double& v : frames.storage()) v = rng.gaussian();
  return FeatureSequence{std::move(frames)};
}

std::vector<UtteranceRecord> make_corpus(const TempDir& dir,
                                         const SyntheticCorpusSpec& spec) {
  return generate_corpus(spec, dir.path() / "features",
                         dir.path() / "manifest.jsonl");
}

bool params_equal(const Parameters& a, const Parameters& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].value.storage() != b[i].value.storage()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("sample_views: N globals of global_len and M locals of local_len") {
  auto config = tiny_dino();
  Rng rng(1);
  auto seq = random_sequence(40, 6, rng);
  auto views = sample_views(seq, config, rng);
  CHECK(views.global_views.size() == 2);
  CHECK(views.local_views.size() == 4);
  for (const auto& v : views.global_views) {
    CHECK(v.num_frames() == config.global_len);
  }
  for (const auto& v : views.local_views) {
    CHECK(v.num_frames() == config.local_len);
  }
}

TEST_CASE("sample_views: disabled augmentation gives exact crops") {
  auto config = tiny_dino();
  config.augmentation = AugmentationConfig{0.0, 1.0, 1.0, 0.0};
  Rng rng(5);
  auto seq = random_sequence(30, 6, rng);
  auto views = sample_views(seq, config, rng);
  for (const auto& v : views.global_views) {
    bool found = false;
    for (std::size_t start = 0;
         start + config.global_len <= seq.num_frames() && !found; ++start) {
      found = crop(seq, start, config.global_len).frames.storage() ==
              v.frames.storage();
    }
    CHECK(found);
  }
}

TEST_CASE("sample_views: determinism and short input") {
  auto config = tiny_dino();
  Rng data_rng(4);
  auto seq = random_sequence(25, 6, data_rng);

  Rng r1(7), r2(7);
  auto v1 = sample_views(seq, config, r1);
  auto v2 = sample_views(seq, config, r2);
  for (std::size_t i = 0; i < v1.global_views.size(); ++i) {
    CHECK(v1.global_views[i].frames.storage() ==
          v2.global_views[i].frames.storage());
  }
  for (std::size_t i = 0; i < v1.local_views.size(); ++i) {
    CHECK(v1.local_views[i].frames.storage() ==
          v2.local_views[i].frames.storage());
  }

  auto short_seq = random_sequence(config.global_len - 1, 6, data_rng);
  Rng r3(1);
  CHECK_THROWS_AS(sample_views(short_seq, config, r3), InvalidInputError);
}

TEST_CASE("dino_loss: term count is N(N+M-1)") {
  Rng rng(11);
  for (std::size_t n = 2; n <= 4; ++n) {
    for (std::size_t m = 0; m <= 6; ++m) {
      const std::size_t k = 5;
      std::vector<std::vector<double>> student(n + m), teacher(n);
      for (auto& v : student) {
        v.resize(k);
        for (double& x : v) x = rng.gaussian();
      }
      for (auto& v : teacher) {
        v.resize(k);
        for (double& x : v) x = rng.gaussian();
      }
      auto result = dino_loss(student, teacher, std::vector<double>(k, 0.0),
                              0.1, 0.04);
      CHECK(result.term_count == n * (n + m - 1));
    }
  }
}

TEST_CASE("dino_loss: identical logits with equal temperatures give the "
          "common entropy") {
  const std::size_t k = 4;
  std::vector<double> logits(k, 0.7);  // uniform distribution
  std::vector<std::vector<double>> student(6, logits), teacher(2, logits);
  // tau_t < tau_s is a config-level rule; the loss itself accepts any
  // positive temperatures, so the equal-temperature identity is testable.
  auto result = dino_loss(student, teacher, std::vector<double>(k, 0.0),
                          0.1, 0.1);
  CHECK(result.loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("dino_loss: nonnegative on random instances") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng.uniform_below(6);
    const std::size_t n = 2 + rng.uniform_below(2);
    const std::size_t m = rng.uniform_below(4);
    std::vector<std::vector<double>> student(n + m), teacher(n);
    std::vector<double> center(k);
    for (auto& v : student) {
      v.resize(k);
      for (double& x : v) x = 3.0 * rng.gaussian();
    }
    for (auto& v : teacher) {
      v.resize(k);
      for (double& x : v) x = 3.0 * rng.gaussian();
    }
    for (double& x : center) x = rng.gaussian();
    auto result = dino_loss(student, teacher, center, 0.1, 0.04);
    CHECK(result.loss >= 0.0);
  }
}

TEST_CASE("dino_loss: gradient matches finite differences") {
  Rng rng(17);
  const std::size_t k = 5, n = 2, m = 3;
  // Logit spread stays moderate so no student probability falls below the
  // log clamp; the analytic (q - p)/tau identity holds off-clamp only.
  std::vector<std::vector<double>> student(n + m), teacher(n);
  std::vector<double> center(k);
  for (auto& v : student) {
    v.resize(k);
    for (double& x : v) x = 0.3 * rng.gaussian();
  }
  for (auto& v : teacher) {
    v.resize(k);
    for (double& x : v) x = 0.3 * rng.gaussian();
  }
  for (double& x : center) x = 0.1 * rng.gaussian();

  auto base = dino_loss(student, teacher, center, 0.1, 0.04);
  for (std::size_t j = 0; j < student.size(); ++j) {
    auto loss = [&]() {
      return dino_loss(student, teacher, center, 0.1, 0.04).loss;
    };
    const double err = cascade::testing::finite_difference_check_vector(
        student[j], base.dstudent_logits[j], loss, 1e-5);
    CHECK_MESSAGE(err <= 1e-6, "student view ", j, " rel err ", err);
  }
}

TEST_CASE("ema_update: identity at lambda=1 and plain arithmetic") {
  EncoderConfig config = tiny_encoder();
  Rng rng(19);
  auto teacher = init_params(config, rng);
  auto student = init_params(config, rng);
  auto saved = teacher;

  ema_update(teacher, student, 1.0);
  CHECK(params_equal(teacher, saved));

  Parameters one;
  one.add("x", 1, Matrix(1, 1, {1.0}));
  Parameters zero;
  zero.add("x", 1, Matrix(1, 1, {0.0}));
  ema_update(one, zero, 0.9);
  CHECK(one.at("x")(0, 0) == doctest::Approx(0.9).epsilon(1e-15));

  Parameters bad;
  bad.add("y", 1, Matrix(1, 2));
  CHECK_THROWS_AS(ema_update(bad, zero, 0.5), InvalidInputError);
}

TEST_CASE("ema_update: frozen student gives geometric decay over 50 steps") {
  EncoderConfig config = tiny_encoder();
  Rng rng(23);
  auto teacher = init_params(config, rng);
  auto student = init_params(config, rng);
  const double lambda = 0.97;

  auto distance = [&]() {
    double acc = 0.0;
    for (std::size_t i = 0; i < teacher.size(); ++i) {
      const auto& t = teacher[i].value.storage();
      const auto& s = student[i].value.storage();
      for (std::size_t j = 0; j < t.size(); ++j) {
        acc += (t[j] - s[j]) * (t[j] - s[j]);
      }
    }
    return std::sqrt(acc);
  };

  const double d0 = distance();
  double expected = d0;
  for (int step = 1; step <= 50; ++step) {
    ema_update(teacher, student, lambda);
    expected *= lambda;
    CHECK(std::abs(distance() - expected) <= 1e-9);
  }
}

TEST_CASE("center_update: arithmetic, fixed point, geometric convergence") {
  auto c = center_update({0.0, 0.0}, {{1.0, -1.0}}, 0.9);
  CHECK(c[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(c[1] == doctest::Approx(-0.1).epsilon(1e-15));

  // Batch mean equal to the center is a fixed point.
  auto fixed = center_update({0.5, -0.25}, {{0.5, -0.25}, {0.5, -0.25}}, 0.7);
  CHECK(fixed[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(fixed[1] == doctest::Approx(-0.25).epsilon(1e-15));

  CHECK_THROWS_AS(center_update({0.0}, {}, 0.9), InvalidInputError);

  // Constant teacher logits g: ||c_k - g|| = m_c^k ||c_0 - g||.
  const std::vector<double> g{2.0, -3.0, 0.5};
  std::vector<double> center{0.0, 0.0, 0.0};
  const double mc = 0.9;
  double expected = norm2(g);
  for (int step = 1; step <= 50; ++step) {
    center = center_update(center, {g}, mc);
    expected *= mc;
    std::vector<double> diff(3);
    for (std::size_t i = 0; i < 3; ++i) diff[i] = center[i] - g[i];
    CHECK(std::abs(norm2(diff) - expected) <= 1e-9);
  }
}

TEST_CASE("pretrain: all-short manifest is a configuration error") {
  TempDir dir("dino_short");
  SyntheticCorpusSpec spec;
  spec.num_speakers = 2;
  spec.utterances_per_speaker = 2;
  spec.frames_per_utterance = 8;
  spec.feature_dim = 6;
  spec.multi_speaker_fraction = 0.0;
  spec.noisy_fraction = 0.0;
  spec.seed = 2;
  auto manifest = make_corpus(dir, spec);

  auto dconfig = tiny_dino();  // global_len 12 > 8
  DinoState state;
  CHECK_THROWS_AS(pretrain_state(manifest, dir.path() / "manifest.jsonl",
                                 tiny_encoder(), dconfig, state),
                  ConfigError);
}

TEST_CASE("pretrain: short utterances are skipped and counted") {
  TempDir dir("dino_skip");
  SyntheticCorpusSpec spec;
  spec.num_speakers = 3;
  spec.utterances_per_speaker = 2;
  spec.frames_per_utterance = 30;
  spec.feature_dim = 6;
  spec.multi_speaker_fraction = 0.0;
  spec.noisy_fraction = 0.0;
  spec.seed = 4;
  auto manifest = make_corpus(dir, spec);
  // Shorten two records below global_len by editing frame_count-consistent
  // feature files.
  for (int i : {0, 3}) {
    auto path = resolve_feature_path(dir.path() / "manifest.jsonl",
                                     manifest[i]);
    auto seq = read_features(path);
    write_features(path, crop(seq, 0, 5));
    manifest[i].frame_count = 5;
    manifest[i].vad_segments = {{0, 5}};
  }

  auto dconfig = tiny_dino();
  DinoState state;
  auto result = pretrain_state(manifest, dir.path() / "manifest.jsonl",
                               tiny_encoder(), dconfig, state);
  CHECK(result.skipped_utterances == 2);
  CHECK(result.usable_utterances == 4);
  CHECK(result.steps == 1);  // batch_size 4 covers the epoch
}

TEST_CASE("pretrain: teacher after step 1 is exactly lambda init + "
          "(1-lambda) student") {
  TempDir dir("dino_step1");
  SyntheticCorpusSpec spec;
  spec.num_speakers = 2;
  spec.utterances_per_speaker = 2;
  spec.frames_per_utterance = 30;
  spec.feature_dim = 6;
  spec.multi_speaker_fraction = 0.0;
  spec.noisy_fraction = 0.0;
  spec.seed = 6;
  auto manifest = make_corpus(dir, spec);

  auto encoder_config = tiny_encoder();
  auto dconfig = tiny_dino();
  dconfig.batch_size = 8;  // single step per epoch
  dconfig.epochs = 1;

  DinoState state;
  pretrain_state(manifest, dir.path() / "manifest.jsonl", encoder_config,
                 dconfig, state);
  REQUIRE(state.step == 1);

  // The stage generator initializes the student first, so replaying the
  // seed reproduces the exact initialization.
  Rng replay(dconfig.seed);
  auto init = init_params(encoder_config, replay, true);
  const double lambda = dconfig.ema_lambda;
  for (std::size_t t = 0; t < init.size(); ++t) {
    const auto& i0 = init[t].value.storage();
    const auto& s1 = state.student[t].value.storage();
    const auto& t1 = state.teacher[t].value.storage();
    for (std::size_t j = 0; j < i0.size(); ++j) {
      CHECK(t1[j] == lambda * i0[j] + (1.0 - lambda) * s1[j]);
    }
  }
}

TEST_CASE("pretrain: teacher parameters are the EMA chain of the student "
          "trajectory (no gradient path)") {
  TempDir dir("dino_ema_chain");
  SyntheticCorpusSpec spec;
  spec.num_speakers = 2;
  spec.utterances_per_speaker = 2;
  spec.frames_per_utterance = 30;
  spec.feature_dim = 6;
  spec.multi_speaker_fraction = 0.0;
  spec.noisy_fraction = 0.0;
  spec.seed = 8;
  auto manifest = make_corpus(dir, spec);

  auto encoder_config = tiny_encoder();
  auto dconfig = tiny_dino();
  dconfig.batch_size = 8;

  // One-epoch and two-epoch runs share the RNG stream prefix, so the first
  // step of both runs is identical and t2 = lambda t1 + (1-lambda) s2 must
  // hold bitwise.
  DinoState one, two;
  dconfig.epochs = 1;
  pretrain_state(manifest, dir.path() / "manifest.jsonl", encoder_config,
                 dconfig, one);
  dconfig.epochs = 2;
  pretrain_state(manifest, dir.path() / "manifest.jsonl", encoder_config,
                 dconfig, two);
  const double lambda = dconfig.ema_lambda;
  for (std::size_t t = 0; t < one.teacher.size(); ++t) {
    const auto& t1 = one.teacher[t].value.storage();
    const auto& t2 = two.teacher[t].value.storage();
    const auto& s2 = two.student[t].value.storage();
    for (std::size_t j = 0; j < t1.size(); ++j) {
      CHECK(t2[j] == lambda * t1[j] + (1.0 - lambda) * s2[j]);
    }
  }
}

TEST_CASE("pretrain: a small-lr step does not increase the loss on the "
          "same batch (20 seeds)") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    auto encoder_config = tiny_encoder();
    auto dconfig = tiny_dino();
    auto params = init_params(encoder_config, rng, true);
    auto teacher = params;
    std::vector<double> center(encoder_config.head_output_dim, 0.0);

    auto seq = random_sequence(24, encoder_config.feature_dim, rng);
    auto views = sample_views(seq, dconfig, rng);

    auto forward_loss = [&](const Parameters& student, Parameters* grads) {
      std::vector<EmbedTrace> etraces;
      std::vector<HeadTrace> htraces;
      std::vector<std::vector<double>> student_logits, teacher_logits;
      auto fwd = [&](const FeatureSequence& v) {
        etraces.push_back(embed(encoder_config, student, v));
        htraces.push_back(
            head_forward(encoder_config, student, etraces.back().embedding));
        student_logits.push_back(htraces.back().logits);
      };
      for (const auto& v : views.global_views) fwd(v);
      for (const auto& v : views.local_views) fwd(v);
      for (const auto& v : views.global_views) {
        auto et = embed(encoder_config, teacher, v);
        teacher_logits.push_back(
            head_forward(encoder_config, teacher, et.embedding).logits);
      }
      auto loss = dino_loss(student_logits, teacher_logits, center, 0.1, 0.04);
      if (grads != nullptr) {
        for (std::size_t v = 0; v < student_logits.size(); ++v) {
          backward(encoder_config, params, etraces[v], htraces[v],
                   loss.dstudent_logits[v], *grads);
        }
      }
      return loss.loss;
    };

    auto grads = params.zeros_like();
    const double before = forward_loss(params, &grads);
    params.add_scaled(grads, -1e-4);  // plain SGD step, lr 1e-4
    const double after = forward_loss(params, nullptr);
    CHECK_MESSAGE(after <= before + 1e-12, "seed ", seed, ": ", before,
                  " -> ", after);
  }
}

TEST_CASE("pretrain: deterministic checkpoints and loss log; truth fields "
          "never read") {
  TempDir dir("dino_det");
  SyntheticCorpusSpec spec;
  spec.num_speakers = 4;
  spec.utterances_per_speaker = 2;
  spec.frames_per_utterance = 30;
  spec.feature_dim = 6;
  spec.multi_speaker_fraction = 0.25;
  spec.noisy_fraction = 0.25;
  spec.seed = 10;
  auto manifest = make_corpus(dir, spec);

  auto encoder_config = tiny_encoder();
  auto dconfig = tiny_dino();
  dconfig.epochs = 2;

  auto run = [&](const std::string& tag,
                 const std::vector<UtteranceRecord>& m) {
    PretrainPaths paths{dir.path() / (tag + "_teacher.cspk"),
                        dir.path() / (tag + "_student.cspk"),
                        dir.path() / (tag + "_loss.jsonl")};
    pretrain(m, dir.path() / "manifest.jsonl", encoder_config, dconfig,
             paths);
    return paths;
  };

  auto p1 = run("a", manifest);
  auto p2 = run("b", manifest);
  CHECK(read_file_bytes(p1.teacher_checkpoint) ==
        read_file_bytes(p2.teacher_checkpoint));
  CHECK(read_file_bytes(p1.student_checkpoint) ==
        read_file_bytes(p2.student_checkpoint));
  CHECK(read_file_bytes(p1.loss_log) == read_file_bytes(p2.loss_log));

  // Corrupting evaluation-only ground truth must not change training.
  auto corrupted = manifest;
  for (auto& rec : corrupted) {
    rec.truth_speakers = {"spk99999"};
    rec.truth_quality = TruthQuality::kNoisy;
  }
  auto p3 = run("c", corrupted);
  CHECK(read_file_bytes(p1.teacher_checkpoint) ==
        read_file_bytes(p3.teacher_checkpoint));
  CHECK(read_file_bytes(p1.student_checkpoint) ==
        read_file_bytes(p3.student_checkpoint));

  // Loss log lines carry the contract fields.
  const auto lines = split_lines(read_file_text(p1.loss_log));
  REQUIRE(lines.size() >= 2);  // 2 epochs x 1+ steps
  CHECK(lines[0].find("\"step\":1") != std::string::npos);
  CHECK(lines[0].find("\"epoch\":0") != std::string::npos);
  CHECK(lines[0].find("\"loss\":") != std::string::npos);
  CHECK(lines[0].find("\"center_norm\":") != std::string::npos);
  CHECK(lines[0].find("\"ema_lambda\":0.99") != std::string::npos);
}

TEST_CASE("pretrain: teacher embeddings separate speakers better after "
          "training") {
  TempDir dir("dino_learn");
  SyntheticCorpusSpec spec;
  spec.num_speakers = 20;
  spec.utterances_per_speaker = 3;
  spec.frames_per_utterance = 60;
  spec.feature_dim = 8;
  spec.speaker_scale = 1.0;
  spec.multi_speaker_fraction = 0.0;
  spec.noisy_fraction = 0.0;
  spec.seed = 17;
  auto manifest = make_corpus(dir, spec);
  const auto manifest_path = dir.path() / "manifest.jsonl";

  EncoderConfig encoder_config;
  encoder_config.feature_dim = 8;
  encoder_config.hidden_dims = {24};
  encoder_config.embedding_dim = 12;
  encoder_config.head_hidden_dims = {24};
  encoder_config.head_output_dim = 32;

  DinoConfig dconfig;
  dconfig.global_len = 30;
  dconfig.local_len = 15;
  dconfig.batch_size = 10;
  dconfig.epochs = 6;
  dconfig.learning_rate = 0.02;
  dconfig.seed = 17;

  auto gap = [&](const Parameters& params) {
    std::vector<std::vector<double>> embeddings;
    std::vector<std::string> speakers;
    for (const auto& rec : manifest) {
      auto seq = read_features(resolve_feature_path(manifest_path, rec));
      embeddings.push_back(
          embed(encoder_config, params, seq).embedding);
      speakers.push_back(rec.truth_speakers[0]);
    }
    double within = 0.0, cross = 0.0;
    std::size_t nw = 0, nc = 0;
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
      for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
        const double c = cosine(embeddings[i], embeddings[j]);
        if (speakers[i] == speakers[j]) {
          within += c;
          ++nw;
        } else {
          cross += c;
          ++nc;
        }
      }
    }
    return within / nw - cross / nc;
  };

  Rng replay(dconfig.seed);
  auto init = init_params(encoder_config, replay, true);
  const double gap_before = gap(init);

  DinoState state;
  pretrain_state(manifest, manifest_path, encoder_config, dconfig, state);
  const double gap_after = gap(state.teacher);

  CHECK(gap_after > 0.0);
  CHECK(gap_after > gap_before);
}

TEST_CASE("config validation rejects bad dino settings") {
  DinoConfig config;
  config.num_global_views = 1;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = DinoConfig{};
  config.local_len = config.global_len;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = DinoConfig{};
  config.teacher_temperature = 0.2;  // not sharper than the student
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = DinoConfig{};
  config.ema_lambda = 0.0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = DinoConfig{};
  config.center_momentum = 1.0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
}
