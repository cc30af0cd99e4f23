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

#ifndef CASCADE_FILTER_HPP_
#define CASCADE_FILTER_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cascade/corpus.hpp"
#include "cascade/encoder.hpp"

namespace cascade {

using Embedding = std::vector<double>;

struct FilterConfig {
  std::size_t window_len = 150;   // 1.5 s at 100 frames/s
  std::size_t window_shift = 75;  // 0.75 s
  std::size_t max_clusters = 4;
  double eigengap_floor = 0.05;
  // Per-row affinity refinement: values below the row's p-th percentile
  // are zeroed before symmetrization.
  double binarize_percentile = 30.0;
  double confidence_threshold = 0.4;
  std::string extractor_checkpoint;
  std::uint64_t seed = 1;  // k-means restart seeds

  void validate() const;
};

enum class SegmentDecision {
  kKeep,
  kDropMultiSpeaker,
  kDropLowConfidence,
  kDropTooShort,
};

std::string segment_decision_name(SegmentDecision d);

// One filtering decision. `confidence` is present iff exactly one cluster
// was detected; multi-speaker and too-short segments never get one.
struct SegmentRecord {
  std::string utterance_id;
  std::size_t segment_index = 0;
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;
  std::size_t num_clusters_detected = 0;
  std::optional<double> confidence;
  SegmentDecision decision = SegmentDecision::kKeep;
};

// Sliding-window start offsets within [seg_start, seg_end): multiples of
// window_shift, plus a final window right-aligned to the segment end when
// the last stride leaves at least window_shift/2 frames uncovered.
std::vector<std::size_t> window_offsets(std::size_t seg_start,
                                        std::size_t seg_end,
                                        std::size_t window_len,
                                        std::size_t window_shift);

// One L2-normalized embedding per window.
std::vector<Embedding> window_embeddings(const FeatureSequence& seq,
                                         std::size_t seg_start,
                                         std::size_t seg_end,
                                         const EncoderConfig& encoder_config,
                                         const Parameters& extractor,
                                         const FilterConfig& config);

struct ClusterResult {
  std::vector<int> labels;  // compact, ordered by first occurrence
  std::size_t num_clusters = 0;
  std::vector<Embedding> centroids;  // unit-norm mean embedding per label
  // Rows of the first k eigenvectors, the points k-means actually
  // clustered; empty when k == 1.
  Matrix spectral_rows;
};

// Spectral clustering on the cosine affinity graph: per-row percentile
// pruning, symmetrization, unnormalized Laplacian, eigengap cluster count
// (with a floor forcing k=1), then seeded k-means (20 restarts) on the
// first k eigenvectors.
ClusterResult spectral_cluster(const std::vector<Embedding>& embeddings,
                               const FilterConfig& config);

// Mean cosine between each embedding and the (single) cluster centroid.
double confidence(const std::vector<Embedding>& embeddings,
                  const Embedding& centroid);

struct FilterSummary {
  std::size_t kept = 0;
  std::size_t drop_multi_speaker = 0;
  std::size_t drop_low_confidence = 0;
  std::size_t drop_too_short = 0;
  std::size_t kept_frames = 0;
  std::size_t total_frames = 0;
  std::size_t record_errors = 0;
};

struct FilterPaths {
  std::filesystem::path filtered_manifest;
  std::filesystem::path features_dir;  // kept segments' extracted features
  std::filesystem::path confidence_file;
};

struct FilterResult {
  std::vector<SegmentRecord> segments;
  std::vector<UtteranceRecord> kept_records;
  std::vector<std::pair<std::string, std::string>> record_errors;
  FilterSummary summary;
};

// Runs the Figure-2 pipeline over every VAD segment of every record:
// window embeddings -> spectral clustering -> multi-speaker rejection ->
// confidence thresholding (strict >). Kept segments are materialized as
// standalone records with extracted feature files; every segment lands in
// the confidence file with its decision.
FilterResult filter_manifest(const std::vector<UtteranceRecord>& manifest,
                             const std::filesystem::path& manifest_path,
                             const FilterConfig& config,
                             const FilterPaths& paths);

std::string confidence_file_text(const FilterResult& result);

}  // namespace cascade

#endif  // CASCADE_FILTER_HPP_
