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

#include "cascade/filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "cascade/io_util.hpp"

namespace cascade {

using nlohmann::json;

void FilterConfig::validate() const {
  if (window_len < 2) throw ConfigError("window_len must be >= 2");
  if (window_shift < 1 || window_shift > window_len) {
    throw ConfigError("window_shift must lie in [1, window_len]");
  }
  if (max_clusters < 2) throw ConfigError("max_clusters must be >= 2");
  if (binarize_percentile <= 0.0 || binarize_percentile >= 100.0) {
    throw ConfigError("binarize_percentile must lie in (0, 100)");
  }
  if (confidence_threshold < -1.0 || confidence_threshold > 1.0) {
    throw ConfigError("confidence_threshold must lie in [-1, 1]");
  }
  if (eigengap_floor < 0.0) throw ConfigError("eigengap_floor must be >= 0");
}

std::string segment_decision_name(SegmentDecision d) {
  switch (d) {
    case SegmentDecision::kKeep:
      return "keep";
    case SegmentDecision::kDropMultiSpeaker:
      return "drop_multi_speaker";
    case SegmentDecision::kDropLowConfidence:
      return "drop_low_confidence";
    case SegmentDecision::kDropTooShort:
      return "drop_too_short";
  }
  throw InvalidInputError("unreachable segment decision");
}

std::vector<std::size_t> window_offsets(std::size_t seg_start,
                                        std::size_t seg_end,
                                        std::size_t window_len,
                                        std::size_t window_shift) {
  if (seg_end < seg_start + window_len) {
    throw InvalidInputError("segment shorter than window_len");
  }
  std::vector<std::size_t> offsets;
  for (std::size_t o = seg_start; o + window_len <= seg_end;
       o += window_shift) {
    offsets.push_back(o);
  }
  const std::size_t covered_end = offsets.back() + window_len;
  const std::size_t uncovered = seg_end - covered_end;
  if (2 * uncovered >= window_shift) {
    offsets.push_back(seg_end - window_len);
  }
  return offsets;
}

std::vector<Embedding> window_embeddings(const FeatureSequence& seq,
                                         std::size_t seg_start,
                                         std::size_t seg_end,
                                         const EncoderConfig& encoder_config,
                                         const Parameters& extractor,
                                         const FilterConfig& config) {
  if (seg_end > seq.num_frames()) {
    throw InvalidInputError("segment exceeds sequence length");
  }
  const auto offsets =
      window_offsets(seg_start, seg_end, config.window_len, config.window_shift);
  std::vector<Embedding> out;
  out.reserve(offsets.size());
  for (std::size_t o : offsets) {
    FeatureSequence window = crop(seq, o, config.window_len);
    auto trace = embed(encoder_config, extractor, window);
    out.push_back(l2_normalize(trace.embedding));
  }
  return out;
}

namespace {

// Nearest-rank p-th percentile (floor convention). Rows here are short
// (a handful of windows per segment); cutting at an interpolated rank
// would zero a 2-window row's only edge and disconnect real structure,
// while the floor convention prunes only strictly weaker entries.
double percentile(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(
      p / 100.0 * static_cast<double>(values.size()));
  rank = std::min(rank, values.size() - 1);
  return values[rank];
}

struct KMeansResult {
  std::vector<int> labels;
  double inertia = std::numeric_limits<double>::infinity();
};

double sq_dist(const double* a, const double* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

KMeansResult kmeans_once(const Matrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows(), d = points.cols();
  std::vector<std::vector<double>> centers;
  centers.reserve(k);

  // k-means++ seeding.
  centers.push_back(points.row(rng.uniform_below(n)));
  std::vector<double> dist2(n);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) {
        best = std::min(best, sq_dist(points.data() + i * d, c.data(), d));
      }
      dist2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = rng.next_double() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += dist2[i];
        if (r < acc) {
          pick = i;
          break;
        }
      }
    } else {
      // All points coincide with existing centers; any choice works.
      pick = rng.uniform_below(n);
    }
    centers.push_back(points.row(pick));
  }

  std::vector<int> labels(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best_label = 0;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dd =
            sq_dist(points.data() + i * d, centers[c].data(), d);
        if (dd < best) {
          best = dd;
          best_label = static_cast<int>(c);
        }
      }
      if (labels[i] != best_label) {
        labels[i] = best_label;
        changed = true;
      }
    }

    std::vector<std::vector<double>> sums(k, std::vector<double>(d, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = points.data() + i * d;
      auto& s = sums[labels[i]];
      for (std::size_t j = 0; j < d; ++j) s[j] += p[j];
      ++counts[labels[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster with the point farthest from its center.
        std::size_t far_i = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double dd = sq_dist(points.data() + i * d,
                                    centers[labels[i]].data(), d);
          if (dd > far_d) {
            far_d = dd;
            far_i = i;
          }
        }
        centers[c] = points.row(far_i);
        changed = true;
      } else {
        for (std::size_t j = 0; j < d; ++j) {
          centers[c][j] = sums[c][j] / static_cast<double>(counts[c]);
        }
      }
    }
    if (!changed) break;
  }

  KMeansResult result;
  result.labels = std::move(labels);
  result.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    result.inertia +=
        sq_dist(points.data() + i * d, centers[result.labels[i]].data(), d);
  }
  return result;
}

// 20 seeded restarts; ties broken by lowest inertia then lowest seed index.
std::vector<int> kmeans(const Matrix& points, std::size_t k,
                        std::uint64_t seed) {
  KMeansResult best;
  for (std::uint64_t r = 0; r < 20; ++r) {
    Rng rng(derive_seed(seed, "kmeans_restart_" + std::to_string(r)));
    KMeansResult cur = kmeans_once(points, k, rng);
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  return best.labels;
}

// Relabel clusters in order of first occurrence so output is canonical.
std::vector<int> compact_labels(const std::vector<int>& labels,
                                std::size_t* num_out) {
  std::vector<int> mapping;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int found = -1;
    for (std::size_t m = 0; m < mapping.size(); ++m) {
      if (mapping[m] == labels[i]) {
        found = static_cast<int>(m);
        break;
      }
    }
    if (found < 0) {
      found = static_cast<int>(mapping.size());
      mapping.push_back(labels[i]);
    }
    out[i] = found;
  }
  *num_out = mapping.size();
  return out;
}

}  // namespace

ClusterResult spectral_cluster(const std::vector<Embedding>& embeddings,
                               const FilterConfig& config) {
  config.validate();
  const std::size_t n = embeddings.size();
  if (n == 0) throw InvalidInputError("spectral_cluster with no embeddings");
  const std::size_t dim = embeddings[0].size();
  std::vector<Embedding> unit(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (embeddings[i].size() != dim) {
      throw InvalidInputError("embedding dim mismatch");
    }
    unit[i] = l2_normalize(embeddings[i]);
  }

  ClusterResult result;
  if (n == 1) {
    result.labels = {0};
    result.num_clusters = 1;
    result.centroids = {unit[0]};
    return result;
  }

  // Cosine affinity clipped at zero. The diagonal stays 0: self-similarity
  // is no clustering evidence, the unnormalized Laplacian is invariant to
  // it, and keeping it out of the row percentile stops tiny rows from
  // pruning their only real edges.
  Matrix affinity(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double c = std::max(0.0, dot(unit[i], unit[j]));
      affinity(i, j) = c;
      affinity(j, i) = c;
    }
  }

  // Per-row percentile pruning, then symmetrization.
  Matrix pruned(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double cut = percentile(affinity.row(i), config.binarize_percentile);
    for (std::size_t j = 0; j < n; ++j) {
      pruned(i, j) = affinity(i, j) < cut ? 0.0 : affinity(i, j);
    }
  }
  Matrix sym(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      sym(i, j) = 0.5 * (pruned(i, j) + pruned(j, i));
    }
  }

  // Unnormalized Laplacian L = D - A.
  Matrix laplacian(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double degree = 0.0;
    for (std::size_t j = 0; j < n; ++j) degree += sym(i, j);
    for (std::size_t j = 0; j < n; ++j) laplacian(i, j) = -sym(i, j);
    laplacian(i, i) += degree;
  }

  auto dec = sym_eigen(laplacian);
  // Ascending order for the eigengap scan.
  std::vector<double> ascending(dec.eigenvalues.rbegin(),
                                dec.eigenvalues.rend());

  const std::size_t max_k = std::min<std::size_t>(config.max_clusters, n);
  std::size_t k = 1;
  double best_gap = -1.0;
  for (std::size_t g = 1; g < max_k; ++g) {
    const double gap = ascending[g] - ascending[g - 1];
    if (gap > best_gap) {
      best_gap = gap;
      k = g;
    }
  }
  if (best_gap < config.eigengap_floor) k = 1;

  if (k == 1) {
    result.labels.assign(n, 0);
    result.num_clusters = 1;
  } else {
    // Rows of the first k eigenvectors (ascending eigenvalues); column j of
    // dec.vectors holds the eigenvector of the j-th *descending* value.
    Matrix rows(n, k);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t src = n - 1 - j;
      for (std::size_t i = 0; i < n; ++i) rows(i, j) = dec.vectors(i, src);
    }
    auto labels = kmeans(rows, k, config.seed);
    result.labels = compact_labels(labels, &result.num_clusters);
    result.spectral_rows = std::move(rows);
  }

  result.centroids.resize(result.num_clusters);
  for (std::size_t c = 0; c < result.num_clusters; ++c) {
    std::vector<double> mean(dim, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (result.labels[i] != static_cast<int>(c)) continue;
      for (std::size_t d = 0; d < dim; ++d) mean[d] += unit[i][d];
      ++count;
    }
    for (double& v : mean) v /= static_cast<double>(count);
    result.centroids[c] = l2_normalize(mean);
  }
  return result;
}

double confidence(const std::vector<Embedding>& embeddings,
                  const Embedding& centroid) {
  if (embeddings.empty()) {
    throw InvalidInputError("confidence of empty embedding list");
  }
  double acc = 0.0;
  for (const auto& e : embeddings) acc += cosine(e, centroid);
  return acc / static_cast<double>(embeddings.size());
}

namespace {

json segment_to_json(const SegmentRecord& seg) {
  json j;
  j["utterance_id"] = seg.utterance_id;
  j["segment_index"] = seg.segment_index;
  j["start_frame"] = seg.start_frame;
  j["end_frame"] = seg.end_frame;
  j["num_clusters_detected"] = seg.num_clusters_detected;
  if (seg.confidence.has_value()) j["confidence"] = *seg.confidence;
  j["decision"] = segment_decision_name(seg.decision);
  return j;
}

}  // namespace

std::string confidence_file_text(const FilterResult& result) {
  std::string out;
  for (const auto& seg : result.segments) {
    out += segment_to_json(seg).dump();
    out += '\n';
  }
  for (const auto& [utt, message] : result.record_errors) {
    json j;
    j["utterance_id"] = utt;
    j["error"] = message;
    out += j.dump();
    out += '\n';
  }
  json summary;
  summary["kept"] = result.summary.kept;
  summary["drop_multi_speaker"] = result.summary.drop_multi_speaker;
  summary["drop_low_confidence"] = result.summary.drop_low_confidence;
  summary["drop_too_short"] = result.summary.drop_too_short;
  summary["kept_frames"] = result.summary.kept_frames;
  summary["total_frames"] = result.summary.total_frames;
  summary["record_errors"] = result.summary.record_errors;
  json line;
  line["summary"] = summary;
  out += line.dump();
  out += '\n';
  return out;
}

FilterResult filter_manifest(const std::vector<UtteranceRecord>& manifest,
                             const std::filesystem::path& manifest_path,
                             const FilterConfig& config,
                             const FilterPaths& paths) {
  config.validate();
  Checkpoint extractor = load_checkpoint(config.extractor_checkpoint);

  FilterResult result;
  for (const auto& rec : manifest) {
    FeatureSequence seq;
    try {
      seq = read_features(resolve_feature_path(manifest_path, rec));
      if (seq.num_frames() != rec.frame_count) {
        throw ParseError(ParseError::Kind::kDimensionMismatch,
                         "manifest frame_count disagrees with feature file");
      }
    } catch (const Error& e) {
      result.record_errors.emplace_back(rec.utterance_id, e.what());
      continue;
    }

    for (std::size_t si = 0; si < rec.vad_segments.size(); ++si) {
      const auto [start, end] = rec.vad_segments[si];
      SegmentRecord seg;
      seg.utterance_id = rec.utterance_id;
      seg.segment_index = si;
      seg.start_frame = start;
      seg.end_frame = end;
      result.summary.total_frames += end - start;

      if (end - start < config.window_len) {
        seg.decision = SegmentDecision::kDropTooShort;
        seg.num_clusters_detected = 0;
        ++result.summary.drop_too_short;
        result.segments.push_back(std::move(seg));
        continue;
      }

      const auto embeddings = window_embeddings(
          seq, start, end, extractor.config, extractor.params, config);
      const auto clusters = spectral_cluster(embeddings, config);
      seg.num_clusters_detected = clusters.num_clusters;

      if (clusters.num_clusters > 1) {
        seg.decision = SegmentDecision::kDropMultiSpeaker;
        ++result.summary.drop_multi_speaker;
        result.segments.push_back(std::move(seg));
        continue;
      }

      seg.confidence = confidence(embeddings, clusters.centroids[0]);
      // Strict inequality: a segment scoring exactly at the threshold drops.
      if (*seg.confidence > config.confidence_threshold) {
        seg.decision = SegmentDecision::kKeep;
        ++result.summary.kept;
        result.summary.kept_frames += end - start;

        UtteranceRecord kept;
        kept.utterance_id =
            rec.utterance_id + "#s" + std::to_string(si);
        kept.frame_count = end - start;
        kept.vad_segments = {{0, end - start}};
        kept.truth_speakers = rec.truth_speakers;
        kept.truth_quality = rec.truth_quality;
        kept.speaker_label = rec.speaker_label;
        const auto file = paths.features_dir / (kept.utterance_id + ".cspf");
        write_features(file, crop(seq, start, end - start));
        kept.feature_path =
            file.lexically_relative(paths.filtered_manifest.parent_path())
                .generic_string();
        result.kept_records.push_back(std::move(kept));
      } else {
        seg.decision = SegmentDecision::kDropLowConfidence;
        ++result.summary.drop_low_confidence;
      }
      result.segments.push_back(std::move(seg));
    }
  }

  result.summary.record_errors = result.record_errors.size();
  if (!manifest.empty() &&
      2 * result.record_errors.size() > manifest.size()) {
    throw IoError("more than half of the manifest records failed (" +
                  std::to_string(result.record_errors.size()) + " of " +
                  std::to_string(manifest.size()) + ")");
  }

  write_manifest(paths.filtered_manifest, result.kept_records);
  atomic_write_text(paths.confidence_file, confidence_file_text(result));
  return result;
}

}  // namespace cascade
