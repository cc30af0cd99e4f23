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

#ifndef CASCADE_SCORING_HPP_
#define CASCADE_SCORING_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cascade/encoder.hpp"
#include "cascade/filter.hpp"

namespace cascade {

// One verification question: does the test utterance match the speaker
// enrolled by enroll_ids? The label is absent in blind mode.
struct Trial {
  std::vector<std::string> enroll_ids;
  std::string test_id;
  std::optional<bool> is_target;
};

struct TrialScore {
  Trial trial;
  double raw = 0.0;
  std::optional<double> normalized;
};

struct TrialScoreSet {
  std::vector<TrialScore> scores;

  // The score used for metrics: normalized when every trial has one.
  std::vector<double> effective_scores() const;
  bool all_normalized() const;
};

// Mean of unit-normalized embeddings, re-normalized.
Embedding enroll_embedding(const std::vector<Embedding>& embeddings);

// Trial list: "enroll_id[,enroll_id...] TAB test_id TAB target|nontarget".
std::string trials_to_text(const std::vector<Trial>& trials);
std::vector<Trial> parse_trials(const std::string& text);
std::vector<Trial> read_trials(const std::filesystem::path& path);
void write_trials(const std::filesystem::path& path,
                  const std::vector<Trial>& trials);

// Score file: trial-list prefix + TAB raw [+ TAB normalized].
std::string scores_to_text(const TrialScoreSet& set);
TrialScoreSet parse_scores(const std::string& text);
TrialScoreSet read_scores(const std::filesystem::path& path);
void write_scores(const std::filesystem::path& path,
                  const TrialScoreSet& set);

struct ScoreOptions {
  // Permits scoring a raw teacher/student checkpoint (no-finetune mode).
  bool allow_raw_checkpoint = false;
};

struct ScoredTrials {
  TrialScoreSet set;
  // Per trial, for score normalization.
  std::vector<Embedding> enroll_embeddings;
  std::vector<Embedding> test_embeddings;
};

// Cosine scoring of trials against an evaluation manifest. Embeddings are
// computed over each utterance's full feature sequence and unit-normalized;
// the enrollment side averages multiple utterances. Unresolvable ids are
// collected and reported together as one failure.
ScoredTrials score_trials(const std::vector<Trial>& trials,
                          const std::vector<UtteranceRecord>& manifest,
                          const std::filesystem::path& manifest_path,
                          const Checkpoint& checkpoint,
                          const ScoreOptions& options = {});

// AS-norm kernel on plain cohort scores: z-normalize the raw score against
// the top-K cohort statistics of each side and average the two.
double asnorm_normalize(double raw,
                        const std::vector<double>& enroll_cohort_scores,
                        const std::vector<double>& test_cohort_scores,
                        std::size_t top_k);

// Fills `normalized` on every trial from cosine scores against the cohort.
void apply_as_norm(ScoredTrials& scored, const std::vector<Embedding>& cohort,
                   std::size_t top_k);

// Per-speaker averaged embeddings of a labeled manifest; the AS-norm
// cohort.
std::vector<Embedding> cohort_by_speaker(
    const std::vector<UtteranceRecord>& manifest,
    const std::filesystem::path& manifest_path, const Checkpoint& checkpoint);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// FRR(t) = P(target < t), FAR(t) = P(nontarget >= t), swept over all
// distinct scores plus a point above the maximum; linear interpolation
// where the curves cross between sweep points.
EerResult compute_eer(const std::vector<double>& target_scores,
                      const std::vector<double>& nontarget_scores);

struct DcfParams {
  double p_target = 0.01;
  double c_miss = 1.0;
  double c_fa = 1.0;
};

// min over the same sweep of c_miss p_t P_miss + c_fa (1-p_t) P_fa,
// normalized by the best trivial system min(c_miss p_t, c_fa (1-p_t)).
double compute_min_dcf(const std::vector<double>& target_scores,
                       const std::vector<double>& nontarget_scores,
                       const DcfParams& params = {});

struct MetricsReport {
  double eer = 0.0;
  double eer_threshold = 0.0;
  double min_dcf = 0.0;
  DcfParams dcf_params;
  std::size_t targets = 0;
  std::size_t nontargets = 0;

  std::string to_json_text() const;
  static MetricsReport from_json_text(const std::string& text);
};

MetricsReport compute_metrics(const TrialScoreSet& set,
                              const DcfParams& params = {});

// Balanced target/nontarget trial sampling from a labeled eval manifest.
std::vector<Trial> make_trials(const std::vector<UtteranceRecord>& manifest,
                               std::size_t trials_per_class,
                               std::size_t enrolls_per_trial, Rng& rng);

}  // namespace cascade

#endif  // CASCADE_SCORING_HPP_
