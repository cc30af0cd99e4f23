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
#include <set>

#include "cascade/filter.hpp"
#include "cascade/io_util.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cascade;
using cascade::testing::TempDir;

namespace {

FilterConfig test_config() {
  FilterConfig config;
  config.window_len = 20;
  config.window_shift = 10;
  config.max_clusters = 4;
  config.eigengap_floor = 0.05;
  config.seed = 7;
  return config;
}

// Orthogonal unit embeddings: groups of identical basis vectors.
std::vector<Embedding> orthogonal_groups(const std::vector<std::size_t>& sizes,
                                         std::size_t dim) {
  std::vector<Embedding> out;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    Embedding e(dim, 0.0);
    e[g] = 1.0;
    for (std::size_t i = 0; i < sizes[g]; ++i) out.push_back(e);
  }
  return out;
}

std::vector<int> truth_labels(const std::vector<std::size_t>& sizes) {
  std::vector<int> out;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    out.insert(out.end(), sizes[g], static_cast<int>(g));
  }
  return out;
}

}  // namespace

TEST_CASE("window_offsets: stride rule plus right-aligned tail") {
  // length 300, window 150, shift 75 -> {0, 75, 150}
  auto offsets = window_offsets(0, 300, 150, 75);
  CHECK(offsets == std::vector<std::size_t>{0, 75, 150});

  // Exactly one window when the segment equals the window.
  CHECK(window_offsets(10, 160, 150, 75) == std::vector<std::size_t>{10});

  // Uncovered tail below shift/2: no extra window.
  CHECK(window_offsets(0, 330, 150, 75) ==
        std::vector<std::size_t>{0, 75, 150});

  // Uncovered tail of at least shift/2: right-aligned final window.
  CHECK(window_offsets(0, 340, 150, 75) ==
        std::vector<std::size_t>{0, 75, 150, 190});

  CHECK_THROWS_AS(window_offsets(0, 100, 150, 75), InvalidInputError);
}

TEST_CASE("window_embeddings: unit norm, one per offset") {
  TempDir dir("filter_we");
  EncoderConfig encoder_config;
  encoder_config.feature_dim = 6;
  encoder_config.hidden_dims = {8};
  encoder_config.embedding_dim = 5;
  encoder_config.head_hidden_dims = {};
  encoder_config.head_output_dim = 4;
  Rng rng(3);
  auto params = init_params(encoder_config, rng);

  Matrix frames(55, 6);
  for (double& v : frames.storage()) v = rng.gaussian();
  FeatureSequence seq{frames};

  auto config = test_config();
  auto embeddings =
      window_embeddings(seq, 0, 55, encoder_config, params, config);
  CHECK(embeddings.size() == window_offsets(0, 55, 20, 10).size());
  for (const auto& e : embeddings) {
    CHECK(std::abs(norm2(e) - 1.0) <= 1e-9);
  }
}

TEST_CASE("spectral_cluster: two orthogonal groups recovered") {
  auto embeddings = orthogonal_groups({4, 4}, 6);
  auto result = spectral_cluster(embeddings, test_config());
  CHECK(result.num_clusters == 2);
  CHECK(cascade::testing::same_partition(result.labels,
                                         truth_labels({4, 4})));
  // Canonical labels start at the first embedding.
  CHECK(result.labels[0] == 0);
  CHECK(result.centroids.size() == 2);
  for (const auto& c : result.centroids) {
    CHECK(std::abs(norm2(c) - 1.0) <= 1e-9);
  }
}

TEST_CASE("spectral_cluster: identical embeddings collapse to one cluster") {
  std::vector<Embedding> embeddings(5, Embedding{0.6, 0.8, 0.0});
  auto result = spectral_cluster(embeddings, test_config());
  CHECK(result.num_clusters == 1);
  for (int label : result.labels) CHECK(label == 0);
}

TEST_CASE("spectral_cluster: single embedding is trivially one cluster") {
  std::vector<Embedding> one{Embedding{1.0, 0.0}};
  auto result = spectral_cluster(one, test_config());
  CHECK(result.num_clusters == 1);
  CHECK(result.labels == std::vector<int>{0});
}

TEST_CASE("spectral_cluster: three orthogonal groups of five match the "
          "brute-force partition oracle") {
  auto embeddings = orthogonal_groups({5, 5, 5}, 8);
  auto config = test_config();
  config.max_clusters = 8;
  auto result = spectral_cluster(embeddings, config);
  CHECK(result.num_clusters == 3);
  CHECK(cascade::testing::same_partition(result.labels,
                                         truth_labels({5, 5, 5})));

  // Independent route: exhaustively best k-means partition of the raw
  // embeddings (15 points) with the same k.
  Matrix points(15, 8);
  for (std::size_t i = 0; i < 15; ++i) {
    for (std::size_t j = 0; j < 8; ++j) points(i, j) = embeddings[i][j];
  }
  auto oracle = cascade::testing::oracle_best_partition(points, 3);
  CHECK(cascade::testing::same_partition(result.labels, oracle));
}

TEST_CASE("spectral_cluster: noisy well-separated instances agree with the "
          "exhaustive partition oracle") {
  std::size_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    Rng rng(seed);
    const std::size_t dim = 8;
    const std::size_t groups = 2 + rng.uniform_below(2);  // 2..3
    std::vector<std::size_t> sizes;
    std::size_t n = 0;
    for (std::size_t g = 0; g < groups; ++g) {
      sizes.push_back(2 + rng.uniform_below(3));  // 2..4 points each
      n += sizes.back();
    }
    std::vector<Embedding> embeddings;
    std::vector<int> truth;
    for (std::size_t g = 0; g < groups; ++g) {
      Embedding base(dim, 0.0);
      base[g] = 1.0;
      for (std::size_t i = 0; i < sizes[g]; ++i) {
        Embedding e = base;
        for (double& v : e) v += 0.05 * rng.gaussian();
        embeddings.push_back(l2_normalize(e));
        truth.push_back(static_cast<int>(g));
      }
    }

    auto config = test_config();
    auto result = spectral_cluster(embeddings, config);
    if (result.num_clusters != groups) continue;  // eigengap may disagree
    ++checked;
    CHECK(cascade::testing::same_partition(result.labels, truth));

    // Dual route for the k-means stage: exhaustive enumeration over the
    // same spectral rows.
    auto oracle = cascade::testing::oracle_best_partition(
        result.spectral_rows, static_cast<int>(result.num_clusters));
    CHECK(cascade::testing::same_partition(result.labels, oracle));
  }
  CHECK(checked >= 20);  // the eigengap must find the structure most times
}

TEST_CASE("confidence: identities and permutation invariance") {
  std::vector<Embedding> same(4, Embedding{0.0, 1.0, 0.0});
  auto c1 = spectral_cluster(same, test_config());
  CHECK(confidence(same, c1.centroids[0]) == doctest::Approx(1.0));

  // Two orthogonal unit embeddings: centroid at 45 degrees.
  std::vector<Embedding> two{{1.0, 0.0}, {0.0, 1.0}};
  Embedding centroid = l2_normalize(Embedding{0.5, 0.5});
  CHECK(confidence(two, centroid) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));

  std::vector<Embedding> swapped{two[1], two[0]};
  CHECK(confidence(two, centroid) == confidence(swapped, centroid));

  CHECK_THROWS_AS(confidence({}, centroid), InvalidInputError);
}

namespace {

// A corpus small enough for fast filtering tests: short windows, clear
// speaker structure.
struct FilterFixture {
  TempDir dir{"filter_fx"};
  EncoderConfig encoder_config;
  std::filesystem::path manifest_path;
  std::filesystem::path extractor_path;
  std::vector<UtteranceRecord> manifest;

  explicit FilterFixture(double multi = 0.2, double noisy = 0.2,
                         std::uint64_t seed = 3, std::size_t speakers = 8,
                         std::size_t utts = 5) {
    SyntheticCorpusSpec spec;
    spec.num_speakers = speakers;
    spec.utterances_per_speaker = utts;
    spec.frames_per_utterance = 80;
    spec.feature_dim = 8;
    spec.speaker_scale = 1.5;
    spec.multi_speaker_fraction = multi;
    spec.noisy_fraction = noisy;
    spec.seed = seed;
    manifest_path = dir.path() / "manifest.jsonl";
    manifest = generate_corpus(spec, dir.path() / "features", manifest_path);

    encoder_config.feature_dim = 8;
    encoder_config.hidden_dims = {16};
    encoder_config.embedding_dim = 8;
    encoder_config.head_hidden_dims = {};
    encoder_config.head_output_dim = 8;
    Rng rng(99);
    auto params = init_params(encoder_config, rng);
    extractor_path = (dir.path() / "extractor.cspk");
    save_checkpoint(extractor_path, Checkpoint{CheckpointRole::kTeacher,
                                               encoder_config, params});
  }

  FilterConfig config(double threshold) const {
    FilterConfig c;
    c.window_len = 20;
    c.window_shift = 10;
    c.max_clusters = 4;
    c.eigengap_floor = 0.05;
    c.confidence_threshold = threshold;
    c.extractor_checkpoint = extractor_path.string();
    c.seed = 7;
    return c;
  }

  // Each run gets its own directory with an identical internal layout, so
  // relative feature paths (and therefore manifest bytes) are comparable
  // across runs.
  FilterPaths paths(const std::string& tag) const {
    const auto base = dir.path() / tag;
    return FilterPaths{base / "filtered.jsonl", base / "features",
                       base / "confidence.jsonl"};
  }
};

}  // namespace

TEST_CASE("filter_manifest: every segment decided exactly once; summary "
          "adds up") {
  FilterFixture fx;
  auto result = filter_manifest(fx.manifest, fx.manifest_path, fx.config(0.4),
                                fx.paths("base"));

  std::size_t expected_segments = 0;
  for (const auto& rec : fx.manifest) {
    expected_segments += rec.vad_segments.size();
  }
  CHECK(result.segments.size() == expected_segments);
  CHECK(result.summary.kept + result.summary.drop_multi_speaker +
            result.summary.drop_low_confidence +
            result.summary.drop_too_short ==
        expected_segments);
  CHECK(result.kept_records.size() == result.summary.kept);

  std::set<std::pair<std::string, std::size_t>> seen;
  for (const auto& seg : result.segments) {
    CHECK(seen.emplace(seg.utterance_id, seg.segment_index).second);
    // confidence present iff exactly one cluster was detected.
    CHECK(seg.confidence.has_value() == (seg.num_clusters_detected == 1));
    if (seg.decision == SegmentDecision::kDropMultiSpeaker) {
      CHECK(seg.num_clusters_detected > 1);
    }
    if (seg.decision == SegmentDecision::kKeep) {
      CHECK(*seg.confidence > 0.4);
    }
    if (seg.decision == SegmentDecision::kDropLowConfidence) {
      CHECK(*seg.confidence <= 0.4);
    }
  }

  // Kept records are standalone: extracted features round-trip.
  for (const auto& rec : result.kept_records) {
    auto seq = read_features(
        resolve_feature_path(fx.paths("base").filtered_manifest, rec));
    CHECK(seq.num_frames() == rec.frame_count);
  }
}

TEST_CASE("filter_manifest: strict threshold boundary") {
  // Synthesized segment records around the boundary are exercised through
  // the kernel: confidence exactly at the threshold drops.
  FilterFixture fx;
  auto r1 = filter_manifest(fx.manifest, fx.manifest_path, fx.config(-1.0),
                            fx.paths("all"));
  // threshold -1: every single-cluster segment with window_len frames kept.
  for (const auto& seg : r1.segments) {
    if (seg.num_clusters_detected == 1) {
      CHECK(seg.decision == SegmentDecision::kKeep);
    }
  }

  // threshold +1: nothing can exceed it (cosine <= 1), so nothing is kept.
  auto r2 = filter_manifest(fx.manifest, fx.manifest_path, fx.config(1.0),
                            fx.paths("none"));
  CHECK(r2.summary.kept == 0);
}

TEST_CASE("filter_manifest: raising the threshold shrinks the kept set "
          "monotonically") {
  FilterFixture fx;
  std::vector<std::set<std::string>> kept_sets;
  for (double threshold : {0.0, 0.2, 0.4, 0.6}) {
    auto result = filter_manifest(fx.manifest, fx.manifest_path,
                                  fx.config(threshold),
                                  fx.paths("t" + std::to_string(threshold)));
    std::set<std::string> kept;
    for (const auto& rec : result.kept_records) kept.insert(rec.utterance_id);
    kept_sets.push_back(std::move(kept));
  }
  for (std::size_t i = 1; i < kept_sets.size(); ++i) {
    for (const auto& id : kept_sets[i]) {
      CHECK(kept_sets[i - 1].count(id) == 1);
    }
  }
}

TEST_CASE("filter_manifest: filter disabled keeps every long-enough "
          "segment") {
  FilterFixture fx;
  auto config = fx.config(-1.0);
  config.eigengap_floor = 1e9;  // k forced to 1 everywhere
  auto result = filter_manifest(fx.manifest, fx.manifest_path, config,
                                fx.paths("disabled"));
  CHECK(result.summary.drop_multi_speaker == 0);
  CHECK(result.summary.drop_low_confidence == 0);
  CHECK(result.summary.kept + result.summary.drop_too_short ==
        result.segments.size());
}

TEST_CASE("filter_manifest: deterministic confidence file bytes") {
  FilterFixture fx;
  filter_manifest(fx.manifest, fx.manifest_path, fx.config(0.4),
                  fx.paths("d1"));
  filter_manifest(fx.manifest, fx.manifest_path, fx.config(0.4),
                  fx.paths("d2"));
  CHECK(read_file_bytes(fx.paths("d1").confidence_file) ==
        read_file_bytes(fx.paths("d2").confidence_file));
  CHECK(read_file_bytes(fx.paths("d1").filtered_manifest) ==
        read_file_bytes(fx.paths("d2").filtered_manifest));
}

TEST_CASE("filter_manifest: too-short segments get their own decision") {
  FilterFixture fx;
  auto manifest = fx.manifest;
  // Shrink one record's VAD segment below the window length.
  manifest[0].vad_segments = {{0, 10}};
  auto result = filter_manifest(manifest, fx.manifest_path, fx.config(0.4),
                                fx.paths("short"));
  bool found = false;
  for (const auto& seg : result.segments) {
    if (seg.utterance_id == manifest[0].utterance_id &&
        seg.segment_index == 0) {
      CHECK(seg.decision == SegmentDecision::kDropTooShort);
      CHECK(!seg.confidence.has_value());
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("filter_manifest: missing feature files are recorded, majority "
          "failure aborts") {
  FilterFixture fx;
  auto manifest = fx.manifest;
  manifest[0].feature_path = "features/missing.cspf";
  auto result = filter_manifest(manifest, fx.manifest_path, fx.config(0.4),
                                fx.paths("err"));
  CHECK(result.record_errors.size() == 1);
  CHECK(result.record_errors[0].first == manifest[0].utterance_id);

  // Break more than half of the records.
  for (std::size_t i = 0; i + 1 < manifest.size(); i += 2) {
    manifest[i].feature_path = "features/missing.cspf";
  }
  std::size_t broken = 0;
  for (auto& rec : manifest) {
    broken += rec.feature_path == "features/missing.cspf";
  }
  if (2 * broken <= manifest.size()) {
    manifest[1].feature_path = "features/missing.cspf";
  }
  CHECK_THROWS_AS(filter_manifest(manifest, fx.manifest_path, fx.config(0.4),
                                  fx.paths("err2")),
                  IoError);
}

TEST_CASE("filter_manifest: confidence file has one line per segment plus "
          "summary") {
  FilterFixture fx;
  auto result = filter_manifest(fx.manifest, fx.manifest_path, fx.config(0.4),
                                fx.paths("lines"));
  const auto text = read_file_text(fx.paths("lines").confidence_file);
  const auto lines = split_lines(text);
  CHECK(lines.size() == result.segments.size() + 1);
  CHECK(lines.back().find("\"summary\"") != std::string::npos);
  CHECK(lines.back().find("\"kept\":" +
                          std::to_string(result.summary.kept)) !=
        std::string::npos);
}

TEST_CASE("filter config validation") {
  FilterConfig config;
  config.window_shift = config.window_len + 1;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = FilterConfig{};
  config.max_clusters = 1;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = FilterConfig{};
  config.confidence_threshold = 1.5;
  CHECK_THROWS_AS(config.validate(), ConfigError);
}
