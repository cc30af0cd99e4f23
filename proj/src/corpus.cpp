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

#include "cascade/corpus.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "cascade/io_util.hpp"

namespace cascade {

using nlohmann::json;

void SyntheticCorpusSpec::validate() const {
  if (num_speakers < 1 || utterances_per_speaker < 1 ||
      frames_per_utterance < 1 || feature_dim < 1) {
    throw ConfigError("corpus counts must all be >= 1");
  }
  if (!(speaker_scale > 0.0) || !(utterance_noise > 0.0) ||
      !(frame_noise > 0.0)) {
    throw ConfigError("corpus scales must be positive");
  }
  if (multi_speaker_fraction < 0.0 || noisy_fraction < 0.0 ||
      multi_speaker_fraction + noisy_fraction > 1.0) {
    throw ConfigError(
        "multi_speaker_fraction + noisy_fraction must lie in [0, 1]");
  }
  // Multi-speaker utterances need two non-trivial halves; filtering needs a
  // defined std over windows.
  if (frames_per_utterance < 4) {
    throw ConfigError("frames_per_utterance must be >= 4");
  }
}

std::string truth_quality_name(TruthQuality q) {
  switch (q) {
    case TruthQuality::kClean:
      return "clean";
    case TruthQuality::kMultiSpeaker:
      return "multi_speaker";
    case TruthQuality::kNoisy:
      return "noisy";
  }
  throw InvalidInputError("unreachable truth quality");
}

TruthQuality truth_quality_from_name(const std::string& name) {
  if (name == "clean") return TruthQuality::kClean;
  if (name == "multi_speaker") return TruthQuality::kMultiSpeaker;
  if (name == "noisy") return TruthQuality::kNoisy;
  throw ParseError(ParseError::Kind::kBadValue,
                   "unknown truth_quality: " + name);
}

void UtteranceRecord::validate() const {
  if (utterance_id.empty()) {
    throw ParseError(ParseError::Kind::kBadValue, "empty utterance_id");
  }
  if (frame_count < 1) {
    throw ParseError(ParseError::Kind::kBadValue,
                     "frame_count must be >= 1 for " + utterance_id);
  }
  std::size_t prev_end = 0;
  bool first = true;
  for (const auto& [start, end] : vad_segments) {
    if (start >= end || end > frame_count) {
      throw ParseError(ParseError::Kind::kBadValue,
                       "vad segment out of range in " + utterance_id);
    }
    if (!first && start < prev_end) {
      throw ParseError(ParseError::Kind::kBadValue,
                       "overlapping vad segments in " + utterance_id);
    }
    prev_end = end;
    first = false;
  }
}

FeatureSequence crop(const FeatureSequence& seq, std::size_t start,
                     std::size_t len) {
  const std::size_t t = seq.num_frames();
  if (len < 1 || start > t || start + len > t) {
    throw InvalidInputError("crop out of range: start " +
                            std::to_string(start) + " len " +
                            std::to_string(len) + " of " + std::to_string(t));
  }
  Matrix out(len, seq.dim());
  std::copy(seq.frames.data() + start * seq.dim(),
            seq.frames.data() + (start + len) * seq.dim(), out.data());
  return FeatureSequence{std::move(out)};
}

namespace {

constexpr char kFeatureMagic[] = "CSPF";
constexpr std::uint32_t kFeatureVersion = 1;

}  // namespace

void write_features(const std::filesystem::path& path,
                    const FeatureSequence& seq) {
  if (!seq.frames.all_finite()) {
    throw InvalidInputError("refusing to write non-finite features");
  }
  BinaryWriter w;
  w.write_bytes(kFeatureMagic);
  w.write_u32(kFeatureVersion);
  w.write_u32(static_cast<std::uint32_t>(seq.num_frames()));
  w.write_u32(static_cast<std::uint32_t>(seq.dim()));
  std::vector<float> payload(seq.frames.size());
  for (std::size_t i = 0; i < payload.size(); ++i) {
    payload[i] = static_cast<float>(seq.frames.data()[i]);
  }
  w.write_f32(payload);
  atomic_write_bytes(path, w.bytes());
}

FeatureSequence read_features(const std::filesystem::path& path) {
  BinaryReader r(read_file_bytes(path));
  if (r.read_bytes(4) != kFeatureMagic) {
    throw ParseError(ParseError::Kind::kMagicMismatch,
                     "not a feature file (bad magic): " + path.string());
  }
  const std::uint32_t version = r.read_u32();
  if (version != kFeatureVersion) {
    throw ParseError(ParseError::Kind::kVersionMismatch,
                     "unsupported feature file version " +
                         std::to_string(version) + ": " + path.string());
  }
  const std::uint32_t t = r.read_u32();
  const std::uint32_t d = r.read_u32();
  if (t == 0 || d == 0) {
    throw ParseError(ParseError::Kind::kDimensionMismatch,
                     "feature header claims empty matrix: " + path.string());
  }
  const auto payload = r.read_f32(static_cast<std::size_t>(t) * d);
  r.expect_end();
  Matrix frames(t, d);
  for (std::size_t i = 0; i < payload.size(); ++i) {
    const double v = payload[i];
    if (!std::isfinite(v)) {
      throw ParseError(ParseError::Kind::kBadValue,
                       "non-finite feature value: " + path.string());
    }
    frames.data()[i] = v;
  }
  return FeatureSequence{std::move(frames)};
}

namespace {

std::vector<double> add_scaled(const std::vector<double>& a, double sa,
                               const std::vector<double>& b, double sb) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = sa * a[i] + sb * b[i];
  return out;
}

// 1-2 VAD segments with small random gaps. Multi-speaker utterances get a
// single segment spanning the speaker change so diarization can see it.
std::vector<std::pair<std::size_t, std::size_t>> make_vad(std::size_t t,
                                                          bool multi_speaker,
                                                          Rng& rng) {
  const std::size_t lead = static_cast<std::size_t>(rng.uniform_below(4));
  const std::size_t tail = static_cast<std::size_t>(rng.uniform_below(4));
  std::size_t start = std::min(lead, t / 4);
  std::size_t end = t - std::min(tail, t / 4);
  if (end <= start + 1) {
    start = 0;
    end = t;
  }
  const bool split = !multi_speaker && t >= 40 && rng.next_double() < 0.3;
  if (!split) return {{start, end}};
  const std::size_t gap = 2 + static_cast<std::size_t>(rng.uniform_below(5));
  const std::size_t mid = start + (end - start) / 2;
  if (mid <= start + 1 || mid + gap + 1 >= end) return {{start, end}};
  return {{start, mid}, {mid + gap, end}};
}

json record_to_json(const UtteranceRecord& rec) {
  json j;
  j["utterance_id"] = rec.utterance_id;
  j["feature_path"] = rec.feature_path;
  j["frame_count"] = rec.frame_count;
  json segs = json::array();
  for (const auto& [s, e] : rec.vad_segments) {
    segs.push_back(json::array({s, e}));
  }
  j["vad_segments"] = segs;
  j["truth_speakers"] = rec.truth_speakers;
  j["truth_quality"] = truth_quality_name(rec.truth_quality);
  if (rec.speaker_label.has_value()) j["speaker_label"] = *rec.speaker_label;
  return j;
}

UtteranceRecord record_from_json(const json& j, bool labeled,
                                 std::size_t line_no) {
  const std::string where = " (manifest line " + std::to_string(line_no) + ")";
  if (!j.is_object()) {
    throw ParseError(ParseError::Kind::kMalformed,
                     "manifest line is not a JSON object" + where);
  }
  static const char* kKeys[] = {"utterance_id",   "feature_path",
                                "frame_count",    "vad_segments",
                                "truth_speakers", "truth_quality"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    bool known = key == "speaker_label" && labeled;
    for (const char* k : kKeys) known = known || key == k;
    if (!known) {
      throw ParseError(ParseError::Kind::kUnknownKey,
                       "unknown manifest key '" + key + "'" + where);
    }
  }
  for (const char* k : kKeys) {
    if (!j.contains(k)) {
      throw ParseError(ParseError::Kind::kMissingKey,
                       std::string("missing manifest key '") + k + "'" + where);
    }
  }
  if (labeled && !j.contains("speaker_label")) {
    throw ParseError(ParseError::Kind::kMissingKey,
                     "missing speaker_label in labeled manifest" + where);
  }

  UtteranceRecord rec;
  try {
    rec.utterance_id = j.at("utterance_id").get<std::string>();
    rec.feature_path = j.at("feature_path").get<std::string>();
    rec.frame_count = j.at("frame_count").get<std::size_t>();
    for (const auto& seg : j.at("vad_segments")) {
      if (!seg.is_array() || seg.size() != 2) {
        throw ParseError(ParseError::Kind::kBadValue,
                         "vad segment is not a [start, end] pair" + where);
      }
      rec.vad_segments.emplace_back(seg[0].get<std::size_t>(),
                                    seg[1].get<std::size_t>());
    }
    rec.truth_speakers =
        j.at("truth_speakers").get<std::vector<std::string>>();
    rec.truth_quality =
        truth_quality_from_name(j.at("truth_quality").get<std::string>());
    if (labeled) rec.speaker_label = j.at("speaker_label").get<int>();
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::kBadValue,
                     std::string("bad manifest value: ") + e.what() + where);
  }
  rec.validate();
  return rec;
}

}  // namespace

std::vector<UtteranceRecord> generate_corpus(
    const SyntheticCorpusSpec& spec, const std::filesystem::path& features_dir,
    const std::filesystem::path& manifest_path,
    const GenerateOptions& options) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t d = spec.feature_dim;
  const std::size_t t = spec.frames_per_utterance;
  const std::size_t total = spec.num_speakers * spec.utterances_per_speaker;

  std::vector<std::vector<double>> speaker_vecs(spec.num_speakers);
  for (auto& v : speaker_vecs) v = rng_gaussian(rng, d);

  // Quality assignment: exact counts, shuffled deterministically.
  std::vector<TruthQuality> quality(total, TruthQuality::kClean);
  const auto n_multi = static_cast<std::size_t>(
      std::llround(spec.multi_speaker_fraction * static_cast<double>(total)));
  const auto n_noisy = static_cast<std::size_t>(
      std::llround(spec.noisy_fraction * static_cast<double>(total)));
  for (std::size_t i = 0; i < n_multi && i < total; ++i) {
    quality[i] = TruthQuality::kMultiSpeaker;
  }
  for (std::size_t i = n_multi; i < n_multi + n_noisy && i < total; ++i) {
    quality[i] = TruthQuality::kNoisy;
  }
  for (std::size_t i = total; i > 1; --i) {
    std::swap(quality[i - 1], quality[rng.uniform_below(i)]);
  }

  auto speaker_name = [&](std::size_t s) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "spk%05zu", s + options.speaker_id_offset);
    return std::string(buf);
  };

  std::vector<UtteranceRecord> records;
  records.reserve(total);
  std::size_t utt_index = 0;
  for (std::size_t s = 0; s < spec.num_speakers; ++s) {
    for (std::size_t u = 0; u < spec.utterances_per_speaker; ++u, ++utt_index) {
      const TruthQuality q = quality[utt_index];
      Matrix frames(t, d);
      UtteranceRecord rec;

      char id[64];
      std::snprintf(id, sizeof(id), "%s%s_utt%04zu", options.id_prefix.c_str(),
                    speaker_name(s).c_str(), u);
      rec.utterance_id = id;
      rec.frame_count = t;
      rec.truth_quality = q;

      const double noise =
          q == TruthQuality::kNoisy ? 5.0 * spec.frame_noise : spec.frame_noise;

      auto fill_half = [&](std::size_t from, std::size_t to,
                           const std::vector<double>& spk_vec) {
        const auto utt_offset = rng_gaussian(rng, d);
        const auto mean =
            add_scaled(spk_vec, spec.speaker_scale, utt_offset,
                       spec.utterance_noise);
        for (std::size_t f = from; f < to; ++f) {
          const auto eps = rng_gaussian(rng, d);
          for (std::size_t c = 0; c < d; ++c) {
            frames(f, c) = mean[c] + noise * eps[c];
          }
        }
      };

      if (q == TruthQuality::kMultiSpeaker && spec.num_speakers > 1) {
        std::size_t other = static_cast<std::size_t>(
            rng.uniform_below(spec.num_speakers - 1));
        if (other >= s) ++other;
        const std::size_t half = t / 2;
        fill_half(0, half, speaker_vecs[s]);
        fill_half(half, t, speaker_vecs[other]);
        rec.truth_speakers = {speaker_name(s), speaker_name(other)};
      } else {
        fill_half(0, t, speaker_vecs[s]);
        rec.truth_speakers = {speaker_name(s)};
      }

      rec.vad_segments = make_vad(t, q == TruthQuality::kMultiSpeaker, rng);
      if (options.labeled) {
        rec.speaker_label = static_cast<int>(s + options.speaker_id_offset);
      }

      const auto file = features_dir / (rec.utterance_id + ".cspf");
      write_features(file, FeatureSequence{std::move(frames)});
      rec.feature_path =
          file.lexically_relative(manifest_path.parent_path()).generic_string();
      rec.validate();
      records.push_back(std::move(rec));
    }
  }

  write_manifest(manifest_path, records);
  return records;
}

std::string manifest_to_text(const std::vector<UtteranceRecord>& records) {
  std::string out;
  for (const auto& rec : records) {
    out += record_to_json(rec).dump();
    out += '\n';
  }
  return out;
}

std::vector<UtteranceRecord> parse_manifest(const std::string& text,
                                            bool labeled) {
  std::vector<UtteranceRecord> records;
  std::size_t line_no = 0;
  for (const auto& line : split_lines(text)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(ParseError::Kind::kMalformed,
                       "manifest line " + std::to_string(line_no) +
                           " is not valid JSON: " + e.what());
    }
    records.push_back(record_from_json(j, labeled, line_no));
  }
  return records;
}

std::vector<UtteranceRecord> read_manifest(const std::filesystem::path& path,
                                           bool labeled) {
  return parse_manifest(read_file_text(path), labeled);
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<UtteranceRecord>& records) {
  atomic_write_text(path, manifest_to_text(records));
}

std::filesystem::path resolve_feature_path(
    const std::filesystem::path& manifest_path,
    const UtteranceRecord& record) {
  std::filesystem::path p(record.feature_path);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

}  // namespace cascade
