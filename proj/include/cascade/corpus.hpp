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

#ifndef CASCADE_CORPUS_HPP_
#define CASCADE_CORPUS_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cascade/numerics.hpp"

namespace cascade {

// Parameters of a synthetic speaker corpus. Clean utterance frames follow
//   x_t = speaker_scale * v_s + u + eps_t
// with v_s a per-speaker vector, u a per-utterance offset and eps_t frame
// noise, all standard Gaussian scaled as configured. Noisy utterances use
// 5x frame noise; multi-speaker utterances concatenate two speakers'
// halves.
struct SyntheticCorpusSpec {
  std::size_t num_speakers = 30;
  std::size_t utterances_per_speaker = 8;
  std::size_t frames_per_utterance = 400;
  std::size_t feature_dim = 20;
  double speaker_scale = 1.0;
  double utterance_noise = 0.3;
  double frame_noise = 1.0;
  double multi_speaker_fraction = 0.1;
  double noisy_fraction = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

enum class TruthQuality { kClean, kMultiSpeaker, kNoisy };

std::string truth_quality_name(TruthQuality q);
TruthQuality truth_quality_from_name(const std::string& name);

// One manifest line. `truth_speakers` and `truth_quality` are ground truth
// for evaluation and reporting only; training code paths never read them.
// `speaker_label` appears only in labeled manifests (supervised stage).
struct UtteranceRecord {
  std::string utterance_id;
  std::string feature_path;  // relative to the manifest's directory
  std::size_t frame_count = 0;
  std::vector<std::pair<std::size_t, std::size_t>> vad_segments;  // [start,end)
  std::vector<std::string> truth_speakers;
  TruthQuality truth_quality = TruthQuality::kClean;
  std::optional<int> speaker_label;

  void validate() const;
};

// A T x D block of real-valued frames; the unit of model input.
struct FeatureSequence {
  Matrix frames;

  std::size_t num_frames() const { return frames.rows(); }
  std::size_t dim() const { return frames.cols(); }
};

// Contiguous frame slice [start, start+len), copied.
FeatureSequence crop(const FeatureSequence& seq, std::size_t start,
                     std::size_t len);

// Feature file format "CSPF": magic, version u32=1, T u32, D u32, then
// T*D little-endian float32 values row-major.
void write_features(const std::filesystem::path& path,
                    const FeatureSequence& seq);
FeatureSequence read_features(const std::filesystem::path& path);

struct GenerateOptions {
  // Speaker indices start here; disjoint offsets give disjoint speakers
  // across sub-corpora.
  std::size_t speaker_id_offset = 0;
  // Emit speaker_label on every record (supervised corpora).
  bool labeled = false;
  // Prepended to utterance ids so sub-corpora sharing a feature directory
  // never collide.
  std::string id_prefix;
};

// Writes one feature file per utterance under features_dir plus a manifest
// at manifest_path, and returns the records. Fully deterministic per seed.
std::vector<UtteranceRecord> generate_corpus(
    const SyntheticCorpusSpec& spec, const std::filesystem::path& features_dir,
    const std::filesystem::path& manifest_path,
    const GenerateOptions& options = {});

// Manifest lines are UTF-8, one JSON object per line with exactly the
// UtteranceRecord keys (plus speaker_label when labeled); unknown keys are
// rejected.
std::string manifest_to_text(const std::vector<UtteranceRecord>& records);
std::vector<UtteranceRecord> parse_manifest(const std::string& text,
                                            bool labeled);
std::vector<UtteranceRecord> read_manifest(const std::filesystem::path& path,
                                           bool labeled);
void write_manifest(const std::filesystem::path& path,
                    const std::vector<UtteranceRecord>& records);

// Resolves a record's feature_path against the directory containing the
// manifest it came from.
std::filesystem::path resolve_feature_path(
    const std::filesystem::path& manifest_path, const UtteranceRecord& record);

}  // namespace cascade

#endif  // CASCADE_CORPUS_HPP_
