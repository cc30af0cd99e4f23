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
#include <functional>
#include <map>
#include <set>

#include "cascade/scoring.hpp"
#include "cascade/io_util.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cascade;
using cascade::testing::TempDir;

TEST_CASE("enroll_embedding: identities and hand value") {
  Embedding a{1.0, 0.0};
  CHECK(enroll_embedding({a}) == a);
  CHECK(enroll_embedding({a, a}) == a);

  auto mixed = enroll_embedding({{1.0, 0.0}, {0.0, 1.0}});
  const double r = 1.0 / std::sqrt(2.0);
  CHECK(mixed[0] == doctest::Approx(r).epsilon(1e-12));
  CHECK(mixed[1] == doctest::Approx(r).epsilon(1e-12));

  CHECK_THROWS_AS(enroll_embedding({}), InvalidInputError);
}

TEST_CASE("enroll_embedding: output is unit norm (property)") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_below(5);
    const std::size_t dim = 2 + rng.uniform_below(8);
    std::vector<Embedding> embeddings;
    for (std::size_t i = 0; i < n; ++i) {
      Embedding e(dim);
      for (double& v : e) v = rng.gaussian();
      embeddings.push_back(l2_normalize(e));
    }
    CHECK(std::abs(norm2(enroll_embedding(embeddings)) - 1.0) <= 1e-9);
  }
}

TEST_CASE("compute_eer: perfect separation, chance, and the worked 3+3 "
          "example") {
  auto perfect = compute_eer({1.0}, {0.0});
  CHECK(perfect.eer == 0.0);

  auto chance = compute_eer({0.1, 0.9}, {0.1, 0.9});
  CHECK(chance.eer == doctest::Approx(0.5).epsilon(1e-12));

  auto worked = compute_eer({0.9, 0.6, 0.4}, {0.5, 0.3, 0.1});
  CHECK(worked.eer == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(worked.threshold > 0.4);
  CHECK(worked.threshold <= 0.5);

  CHECK_THROWS_AS(compute_eer({}, {0.0}), InvalidInputError);
  CHECK_THROWS_AS(compute_eer({1.0}, {}), InvalidInputError);
}

TEST_CASE("compute_eer: all scores identical is chance") {
  auto r = compute_eer({0.3, 0.3, 0.3}, {0.3, 0.3});
  CHECK(r.eer == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("compute_min_dcf: degenerate endpoints") {
  CHECK(compute_min_dcf({1.0}, {0.0}) == 0.0);
  // All scores equal: rejecting everything is optimal and normalizes to 1.
  CHECK(compute_min_dcf({0.5, 0.5}, {0.5, 0.5, 0.5}) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("metrics: agreement with the midpoint-sweep oracles on 500 "
          "random score sets") {
  Rng rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t nt = 2 + rng.uniform_below(199);
    const std::size_t nn = 2 + rng.uniform_below(199);
    const double sep = rng.uniform(-0.5, 2.0);
    std::vector<double> targets(nt), nontargets(nn);
    for (double& v : targets) v = sep + rng.gaussian();
    for (double& v : nontargets) v = rng.gaussian();
    if (trial % 7 == 0) {
      // Exercise ties: quantize the scores.
      for (double& v : targets) v = std::round(v * 4.0) / 4.0;
      for (double& v : nontargets) v = std::round(v * 4.0) / 4.0;
    }

    const auto eer = compute_eer(targets, nontargets);
    const double oracle_e = cascade::testing::oracle_eer(targets, nontargets);
    CHECK(std::abs(eer.eer - oracle_e) <= 1e-12);

    const double dcf = compute_min_dcf(targets, nontargets);
    const double oracle_d =
        cascade::testing::oracle_min_dcf(targets, nontargets, 0.01, 1.0, 1.0);
    CHECK(dcf == oracle_d);  // identical operating-point sets: exact
  }
}

TEST_CASE("metrics: invariant under strictly increasing transforms") {
  Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t nt = 3 + rng.uniform_below(40);
    const std::size_t nn = 3 + rng.uniform_below(40);
    std::vector<double> targets(nt), nontargets(nn);
    for (double& v : targets) v = 0.8 + rng.gaussian();
    for (double& v : nontargets) v = rng.gaussian();

    const double base_eer = compute_eer(targets, nontargets).eer;
    const double base_dcf = compute_min_dcf(targets, nontargets);

    auto affine = [&](double x) { return 3.5 * x + 2.0; };
    auto cubic = [&](double x) { return x * x * x + 0.5 * x; };
    for (auto&& f : {std::function<double(double)>(affine),
                     std::function<double(double)>(cubic)}) {
      std::vector<double> t2(targets), n2(nontargets);
      for (double& v : t2) v = f(v);
      for (double& v : n2) v = f(v);
      CHECK(std::abs(compute_eer(t2, n2).eer - base_eer) <= 1e-12);
      CHECK(std::abs(compute_min_dcf(t2, n2) - base_dcf) <= 1e-12);
    }
  }
}

TEST_CASE("metrics: EER bounds on separated random classes") {
  Rng rng(66);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t nt = 2 + rng.uniform_below(60);
    const std::size_t nn = 2 + rng.uniform_below(60);
    std::vector<double> targets(nt), nontargets(nn);
    // Half a sigma of separation keeps the crossing in the lower half.
    for (double& v : targets) v = 0.5 + rng.gaussian();
    for (double& v : nontargets) v = rng.gaussian();
    const double eer = compute_eer(targets, nontargets).eer;
    CHECK(eer >= 0.0);
    CHECK(eer <= 1.0);

    // Reversed classes still stay within [0, 1].
    const double reversed = compute_eer(nontargets, targets).eer;
    CHECK(reversed >= 0.0);
    CHECK(reversed <= 1.0);
  }
}

TEST_CASE("asnorm_normalize: identity and arithmetic cases") {
  // Cohort built so top-K stats are mu=0, sd=1 for both sides.
  std::vector<double> unit_cohort{1.0, -1.0, 1.0, -1.0};
  const double raw = 0.37;
  CHECK(asnorm_normalize(raw, unit_cohort, unit_cohort, 4) ==
        doctest::Approx(raw).epsilon(1e-12));

  // mu_e 0.2 sd_e 0.1, mu_t 0.0 sd_t 0.2, s = 0.4 -> 0.5 (2 + 2) = 2.
  std::vector<double> enroll{0.3, 0.1};   // mean .2, population sd .1
  std::vector<double> test{0.2, -0.2};    // mean 0, sd .2
  CHECK(asnorm_normalize(0.4, enroll, test, 2) ==
        doctest::Approx(2.0).epsilon(1e-12));

  CHECK_THROWS_AS(asnorm_normalize(0.4, {0.1}, {0.1, 0.2}, 2), ConfigError);
}

TEST_CASE("asnorm_normalize: invariant under cohort reordering; finite "
          "under zero variance; shift cancellation") {
  Rng rng(77);
  std::vector<double> enroll(30), test(30);
  for (double& v : enroll) v = rng.gaussian();
  for (double& v : test) v = rng.gaussian();
  const double raw = 0.42;
  const double base = asnorm_normalize(raw, enroll, test, 10);

  auto shuffled = enroll;
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(asnorm_normalize(raw, shuffled, test, 10) == base);

  // Constant cohorts engage the sigma clamp but stay finite.
  std::vector<double> constant(20, 0.5);
  CHECK(std::isfinite(asnorm_normalize(0.5, constant, constant, 5)));

  // Adding c to every raw score (trial and cohort) cancels.
  const double c = 0.37;
  std::vector<double> enroll_c(enroll), test_c(test);
  for (double& v : enroll_c) v += c;
  for (double& v : test_c) v += c;
  CHECK(std::abs(asnorm_normalize(raw + c, enroll_c, test_c, 10) - base) <=
        1e-9);
}

TEST_CASE("trial and score files round-trip") {
  std::vector<Trial> trials;
  Trial t1;
  t1.enroll_ids = {"ev_spk1_utt0", "ev_spk1_utt1"};
  t1.test_id = "ev_spk1_utt2";
  t1.is_target = true;
  Trial t2;
  t2.enroll_ids = {"ev_spk2_utt0"};
  t2.test_id = "ev_spk1_utt2";
  t2.is_target = false;
  trials = {t1, t2};

  const auto text = trials_to_text(trials);
  CHECK(text ==
        "ev_spk1_utt0,ev_spk1_utt1\tev_spk1_utt2\ttarget\n"
        "ev_spk2_utt0\tev_spk1_utt2\tnontarget\n");
  const auto parsed = parse_trials(text);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0].enroll_ids == t1.enroll_ids);
  CHECK(*parsed[0].is_target);
  CHECK_FALSE(*parsed[1].is_target);
  CHECK(trials_to_text(parsed) == text);

  TrialScoreSet set;
  set.scores.push_back(TrialScore{t1, 0.625, std::nullopt});
  set.scores.push_back(TrialScore{t2, -0.125, 1.75});
  const auto stext = scores_to_text(set);
  const auto sparsed = parse_scores(stext);
  REQUIRE(sparsed.scores.size() == 2);
  CHECK(sparsed.scores[0].raw == 0.625);
  CHECK(!sparsed.scores[0].normalized.has_value());
  CHECK(*sparsed.scores[1].normalized == 1.75);
  CHECK(scores_to_text(sparsed) == stext);

  CHECK_THROWS_AS(parse_trials("only_two\tfields\n"), ParseError);
  CHECK_THROWS_AS(parse_trials("a\tb\tmaybe\n"), ParseError);
  CHECK_THROWS_AS(parse_scores("a\tb\ttarget\tnot_a_number\n"), ParseError);
}

TEST_CASE("metrics report JSON round-trips") {
  MetricsReport r;
  r.eer = 0.125;
  r.eer_threshold = 0.44;
  r.min_dcf = 0.5;
  r.targets = 100;
  r.nontargets = 200;
  const auto text = r.to_json_text();
  const auto parsed = MetricsReport::from_json_text(text);
  CHECK(parsed.eer == r.eer);
  CHECK(parsed.eer_threshold == r.eer_threshold);
  CHECK(parsed.min_dcf == r.min_dcf);
  CHECK(parsed.targets == 100);
  CHECK(parsed.nontargets == 200);
  CHECK(parsed.to_json_text() == text);
}

namespace {

struct ScoringFixture {
  TempDir dir{"scoring_fx"};
  EncoderConfig encoder_config;
  std::filesystem::path manifest_path;
  std::vector<UtteranceRecord> manifest;
  Checkpoint checkpoint;

  ScoringFixture() {
    SyntheticCorpusSpec spec;
    spec.num_speakers = 5;
    spec.utterances_per_speaker = 4;
    spec.frames_per_utterance = 30;
    spec.feature_dim = 6;
    spec.speaker_scale = 2.0;
    spec.multi_speaker_fraction = 0.0;
    spec.noisy_fraction = 0.0;
    spec.seed = 9;
    GenerateOptions options;
    options.labeled = true;
    manifest_path = dir.path() / "eval.jsonl";
    manifest = generate_corpus(spec, dir.path() / "features", manifest_path,
                               options);

    encoder_config.feature_dim = 6;
    encoder_config.hidden_dims = {12};
    encoder_config.embedding_dim = 8;
    encoder_config.head_hidden_dims = {};
    encoder_config.head_output_dim = 4;
    Rng rng(123);
    Parameters params = init_params(encoder_config, rng, /*with_head=*/false);
    Matrix classifier(5, 8);
    for (double& v : classifier.storage()) v = rng.uniform(-0.5, 0.5);
    params.add("classifier.weight", 2, classifier);
    checkpoint =
        Checkpoint{CheckpointRole::kFinetuned, encoder_config, params};
  }
};

}  // namespace

TEST_CASE("score_trials: self-trial scores 1, single-enroll symmetry") {
  ScoringFixture fx;
  Trial self;
  self.enroll_ids = {fx.manifest[0].utterance_id};
  self.test_id = fx.manifest[0].utterance_id;
  self.is_target = true;
  Trial ab;
  ab.enroll_ids = {fx.manifest[0].utterance_id};
  ab.test_id = fx.manifest[5].utterance_id;
  ab.is_target = false;
  Trial ba;
  ba.enroll_ids = {fx.manifest[5].utterance_id};
  ba.test_id = fx.manifest[0].utterance_id;
  ba.is_target = false;

  auto scored = score_trials({self, ab, ba}, fx.manifest, fx.manifest_path,
                             fx.checkpoint);
  REQUIRE(scored.set.scores.size() == 3);
  CHECK(scored.set.scores[0].raw == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(scored.set.scores[1].raw - scored.set.scores[2].raw) <=
        1e-12);
}

TEST_CASE("score_trials: raw checkpoints need the override") {
  ScoringFixture fx;
  Checkpoint raw = fx.checkpoint;
  raw.role = CheckpointRole::kTeacher;
  Parameters with_head;
  {
    Rng rng(123);
    with_head = init_params(fx.encoder_config, rng, /*with_head=*/true);
  }
  raw.params = with_head;

  Trial t;
  t.enroll_ids = {fx.manifest[0].utterance_id};
  t.test_id = fx.manifest[1].utterance_id;
  t.is_target = true;

  CHECK_THROWS_AS(score_trials({t}, fx.manifest, fx.manifest_path, raw),
                  ParseError);
  ScoreOptions options;
  options.allow_raw_checkpoint = true;
  auto scored =
      score_trials({t}, fx.manifest, fx.manifest_path, raw, options);
  CHECK(scored.set.scores.size() == 1);
}

TEST_CASE("score_trials: unresolvable ids fail together with a list") {
  ScoringFixture fx;
  Trial bad1;
  bad1.enroll_ids = {"nope_1"};
  bad1.test_id = fx.manifest[0].utterance_id;
  bad1.is_target = true;
  Trial bad2;
  bad2.enroll_ids = {fx.manifest[0].utterance_id};
  bad2.test_id = "nope_2";
  bad2.is_target = false;
  try {
    score_trials({bad1, bad2}, fx.manifest, fx.manifest_path, fx.checkpoint);
    FAIL("expected failure");
  } catch (const IoError& e) {
    const std::string what = e.what();
    CHECK(what.find("nope_1") != std::string::npos);
    CHECK(what.find("nope_2") != std::string::npos);
  }
}

TEST_CASE("apply_as_norm: fills every trial; cohort order is irrelevant") {
  ScoringFixture fx;
  std::vector<Trial> trials;
  for (std::size_t i = 1; i < 5; ++i) {
    Trial t;
    t.enroll_ids = {fx.manifest[0].utterance_id};
    t.test_id = fx.manifest[i].utterance_id;
    t.is_target = i < 2;
    trials.push_back(std::move(t));
  }
  auto scored =
      score_trials(trials, fx.manifest, fx.manifest_path, fx.checkpoint);
  auto cohort =
      cohort_by_speaker(fx.manifest, fx.manifest_path, fx.checkpoint);
  REQUIRE(cohort.size() == 5);

  auto scored2 = scored;
  apply_as_norm(scored, cohort, 3);
  std::reverse(cohort.begin(), cohort.end());
  apply_as_norm(scored2, cohort, 3);
  for (std::size_t i = 0; i < scored.set.scores.size(); ++i) {
    REQUIRE(scored.set.scores[i].normalized.has_value());
    CHECK(*scored.set.scores[i].normalized ==
          *scored2.set.scores[i].normalized);
    CHECK(std::isfinite(*scored.set.scores[i].normalized));
  }

  CHECK_THROWS_AS(apply_as_norm(scored, cohort, 6), ConfigError);
}

TEST_CASE("make_trials: balanced, resolvable, deterministic") {
  ScoringFixture fx;
  Rng rng(31);
  auto trials = make_trials(fx.manifest, 20, 2, rng);
  REQUIRE(trials.size() == 40);
  std::size_t targets = 0;
  std::set<std::string> ids;
  for (const auto& rec : fx.manifest) ids.insert(rec.utterance_id);
  std::map<std::string, int> speaker_of;
  for (const auto& rec : fx.manifest) {
    speaker_of[rec.utterance_id] = *rec.speaker_label;
  }
  for (const auto& t : trials) {
    targets += *t.is_target;
    CHECK(t.enroll_ids.size() == 2);
    CHECK(ids.count(t.test_id) == 1);
    const int enroll_speaker = speaker_of[t.enroll_ids[0]];
    for (const auto& id : t.enroll_ids) {
      CHECK(ids.count(id) == 1);
      CHECK(speaker_of[id] == enroll_speaker);
    }
    if (*t.is_target) {
      CHECK(speaker_of[t.test_id] == enroll_speaker);
      // Test utterance never among the enrollments.
      for (const auto& id : t.enroll_ids) CHECK(id != t.test_id);
    } else {
      CHECK(speaker_of[t.test_id] != enroll_speaker);
    }
  }
  CHECK(targets == 20);

  Rng rng2(31);
  auto trials2 = make_trials(fx.manifest, 20, 2, rng2);
  CHECK(trials_to_text(trials) == trials_to_text(trials2));
}

TEST_CASE("compute_metrics: uses normalized scores when all present") {
  Trial t1;
  t1.enroll_ids = {"a"};
  t1.test_id = "b";
  t1.is_target = true;
  Trial t2 = t1;
  t2.is_target = false;

  TrialScoreSet set;
  // Raw scores are anti-separating; normalized scores are perfect.
  set.scores.push_back(TrialScore{t1, 0.0, 5.0});
  set.scores.push_back(TrialScore{t2, 1.0, -5.0});
  auto report = compute_metrics(set);
  CHECK(report.eer == 0.0);
  CHECK(report.targets == 1);
  CHECK(report.nontargets == 1);
}
