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

#include "cascade/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "cascade/io_util.hpp"

namespace cascade {

using nlohmann::json;

std::vector<double> TrialScoreSet::effective_scores() const {
  std::vector<double> out;
  out.reserve(scores.size());
  const bool use_norm = all_normalized();
  for (const auto& s : scores) {
    out.push_back(use_norm ? *s.normalized : s.raw);
  }
  return out;
}

bool TrialScoreSet::all_normalized() const {
  if (scores.empty()) return false;
  for (const auto& s : scores) {
    if (!s.normalized.has_value()) return false;
  }
  return true;
}

Embedding enroll_embedding(const std::vector<Embedding>& embeddings) {
  if (embeddings.empty()) {
    throw InvalidInputError("enroll_embedding of empty list");
  }
  const std::size_t dim = embeddings[0].size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& e : embeddings) {
    if (e.size() != dim) throw InvalidInputError("embedding dim mismatch");
    for (std::size_t i = 0; i < dim; ++i) mean[i] += e[i];
  }
  for (double& v : mean) v /= static_cast<double>(embeddings.size());
  return l2_normalize(mean);
}

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ',';
    out += ids[i];
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const std::size_t at = s.find(sep, start);
    if (at == std::string::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, at - start));
    start = at + 1;
  }
}

Trial parse_trial_prefix(const std::vector<std::string>& fields,
                         std::size_t line_no) {
  const std::string where = " (trial line " + std::to_string(line_no) + ")";
  Trial t;
  t.enroll_ids = split(fields[0], ',');
  for (const auto& id : t.enroll_ids) {
    if (id.empty()) {
      throw ParseError(ParseError::Kind::kBadValue,
                       "empty enroll id" + where);
    }
  }
  t.test_id = fields[1];
  if (t.test_id.empty()) {
    throw ParseError(ParseError::Kind::kBadValue, "empty test id" + where);
  }
  if (fields[2] == "target") {
    t.is_target = true;
  } else if (fields[2] == "nontarget") {
    t.is_target = false;
  } else {
    throw ParseError(ParseError::Kind::kBadValue,
                     "label must be target or nontarget, got '" + fields[2] +
                         "'" + where);
  }
  return t;
}

double parse_score_value(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) {
      throw std::invalid_argument("trailing junk or non-finite");
    }
    return v;
  } catch (const std::exception&) {
    throw ParseError(ParseError::Kind::kBadValue,
                     "bad score value '" + s + "' (score line " +
                         std::to_string(line_no) + ")");
  }
}

}  // namespace

std::string trials_to_text(const std::vector<Trial>& trials) {
  std::string out;
  for (const auto& t : trials) {
    out += join_ids(t.enroll_ids);
    out += '\t';
    out += t.test_id;
    out += '\t';
    out += t.is_target.has_value() ? (*t.is_target ? "target" : "nontarget")
                                   : "unknown";
    out += '\n';
  }
  return out;
}

std::vector<Trial> parse_trials(const std::string& text) {
  std::vector<Trial> trials;
  std::size_t line_no = 0;
  for (const auto& line : split_lines(text)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 3) {
      throw ParseError(ParseError::Kind::kMalformed,
                       "trial line " + std::to_string(line_no) +
                           " must have 3 tab-separated fields, got " +
                           std::to_string(fields.size()));
    }
    trials.push_back(parse_trial_prefix(fields, line_no));
  }
  return trials;
}

std::vector<Trial> read_trials(const std::filesystem::path& path) {
  return parse_trials(read_file_text(path));
}

void write_trials(const std::filesystem::path& path,
                  const std::vector<Trial>& trials) {
  atomic_write_text(path, trials_to_text(trials));
}

std::string scores_to_text(const TrialScoreSet& set) {
  std::string out;
  for (const auto& s : set.scores) {
    out += join_ids(s.trial.enroll_ids);
    out += '\t';
    out += s.trial.test_id;
    out += '\t';
    out += s.trial.is_target.has_value()
               ? (*s.trial.is_target ? "target" : "nontarget")
               : "unknown";
    out += '\t';
    out += format_double(s.raw);
    if (s.normalized.has_value()) {
      out += '\t';
      out += format_double(*s.normalized);
    }
    out += '\n';
  }
  return out;
}

TrialScoreSet parse_scores(const std::string& text) {
  TrialScoreSet set;
  std::size_t line_no = 0;
  for (const auto& line : split_lines(text)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 4 && fields.size() != 5) {
      throw ParseError(ParseError::Kind::kMalformed,
                       "score line " + std::to_string(line_no) +
                           " must have 4 or 5 tab-separated fields, got " +
                           std::to_string(fields.size()));
    }
    TrialScore s;
    s.trial = parse_trial_prefix(fields, line_no);
    s.raw = parse_score_value(fields[3], line_no);
    if (fields.size() == 5) {
      s.normalized = parse_score_value(fields[4], line_no);
    }
    set.scores.push_back(std::move(s));
  }
  return set;
}

TrialScoreSet read_scores(const std::filesystem::path& path) {
  return parse_scores(read_file_text(path));
}

void write_scores(const std::filesystem::path& path,
                  const TrialScoreSet& set) {
  atomic_write_text(path, scores_to_text(set));
}

ScoredTrials score_trials(const std::vector<Trial>& trials,
                          const std::vector<UtteranceRecord>& manifest,
                          const std::filesystem::path& manifest_path,
                          const Checkpoint& checkpoint,
                          const ScoreOptions& options) {
  if (checkpoint.role != CheckpointRole::kFinetuned &&
      !options.allow_raw_checkpoint) {
    throw ParseError(ParseError::Kind::kBadRole,
                     "scoring expects a finetuned checkpoint (role " +
                         checkpoint_role_name(checkpoint.role) +
                         " given); pass allow_raw_checkpoint to override");
  }

  std::map<std::string, const UtteranceRecord*> by_id;
  for (const auto& rec : manifest) by_id[rec.utterance_id] = &rec;

  std::map<std::string, Embedding> cache;
  std::vector<std::string> errors;
  auto embedding_of = [&](const std::string& id) -> const Embedding* {
    auto hit = cache.find(id);
    if (hit != cache.end()) return &hit->second;
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      errors.push_back("unresolvable utterance id: " + id);
      return nullptr;
    }
    try {
      FeatureSequence seq =
          read_features(resolve_feature_path(manifest_path, *it->second));
      auto trace = embed(checkpoint.config, checkpoint.params, seq);
      return &cache.emplace(id, l2_normalize(trace.embedding)).first->second;
    } catch (const Error& e) {
      errors.push_back(id + ": " + e.what());
      return nullptr;
    }
  };

  ScoredTrials out;
  for (const auto& trial : trials) {
    std::vector<Embedding> enrolls;
    bool ok = true;
    for (const auto& id : trial.enroll_ids) {
      const Embedding* e = embedding_of(id);
      if (e == nullptr) {
        ok = false;
        continue;
      }
      enrolls.push_back(*e);
    }
    const Embedding* test = embedding_of(trial.test_id);
    if (test == nullptr) ok = false;
    if (!ok) continue;

    TrialScore score;
    score.trial = trial;
    Embedding enroll = enroll_embedding(enrolls);
    score.raw = cosine(enroll, *test);
    out.set.scores.push_back(std::move(score));
    out.enroll_embeddings.push_back(std::move(enroll));
    out.test_embeddings.push_back(*test);
  }

  if (!errors.empty()) {
    std::sort(errors.begin(), errors.end());
    errors.erase(std::unique(errors.begin(), errors.end()), errors.end());
    std::string message =
        "trial scoring failed for " + std::to_string(errors.size()) +
        " reason(s):";
    for (const auto& e : errors) message += "\n  " + e;
    throw IoError(message);
  }
  return out;
}

double asnorm_normalize(double raw,
                        const std::vector<double>& enroll_cohort_scores,
                        const std::vector<double>& test_cohort_scores,
                        std::size_t top_k) {
  if (top_k < 2) throw ConfigError("as-norm top_k must be >= 2");
  if (enroll_cohort_scores.size() < top_k ||
      test_cohort_scores.size() < top_k) {
    throw ConfigError("as-norm cohort smaller than top_k");
  }
  auto stats = [top_k](std::vector<double> scores) {
    std::partial_sort(scores.begin(), scores.begin() + top_k, scores.end(),
                      std::greater<double>());
    double mean = 0.0;
    for (std::size_t i = 0; i < top_k; ++i) mean += scores[i];
    mean /= static_cast<double>(top_k);
    double var = 0.0;
    for (std::size_t i = 0; i < top_k; ++i) {
      var += (scores[i] - mean) * (scores[i] - mean);
    }
    var /= static_cast<double>(top_k);  // population
    return std::pair<double, double>(mean,
                                     std::max(std::sqrt(var), 1e-6));
  };
  const auto [mu_e, sd_e] = stats(enroll_cohort_scores);
  const auto [mu_t, sd_t] = stats(test_cohort_scores);
  return 0.5 * ((raw - mu_e) / sd_e + (raw - mu_t) / sd_t);
}

void apply_as_norm(ScoredTrials& scored, const std::vector<Embedding>& cohort,
                   std::size_t top_k) {
  if (cohort.size() < top_k) {
    throw ConfigError("as-norm cohort size " + std::to_string(cohort.size()) +
                      " is smaller than top_k " + std::to_string(top_k));
  }
  auto cohort_scores = [&](const Embedding& e) {
    std::vector<double> scores;
    scores.reserve(cohort.size());
    for (const auto& c : cohort) scores.push_back(cosine(e, c));
    return scores;
  };
  for (std::size_t i = 0; i < scored.set.scores.size(); ++i) {
    scored.set.scores[i].normalized = asnorm_normalize(
        scored.set.scores[i].raw,
        cohort_scores(scored.enroll_embeddings[i]),
        cohort_scores(scored.test_embeddings[i]), top_k);
  }
}

std::vector<Embedding> cohort_by_speaker(
    const std::vector<UtteranceRecord>& manifest,
    const std::filesystem::path& manifest_path, const Checkpoint& checkpoint) {
  std::map<int, std::vector<Embedding>> by_speaker;
  for (const auto& rec : manifest) {
    if (!rec.speaker_label.has_value()) {
      throw ConfigError("cohort construction needs a labeled manifest");
    }
    FeatureSequence seq =
        read_features(resolve_feature_path(manifest_path, rec));
    auto trace = embed(checkpoint.config, checkpoint.params, seq);
    by_speaker[*rec.speaker_label].push_back(l2_normalize(trace.embedding));
  }
  std::vector<Embedding> cohort;
  cohort.reserve(by_speaker.size());
  for (const auto& [label, embeddings] : by_speaker) {
    cohort.push_back(enroll_embedding(embeddings));
  }
  return cohort;
}

namespace {

struct SweepPoint {
  double threshold;
  double frr;
  double far;
};

// Operating points at every distinct score plus one candidate above the
// maximum (the reject-all point).
std::vector<SweepPoint> sweep_points(std::vector<double> targets,
                                     std::vector<double> nontargets) {
  std::sort(targets.begin(), targets.end());
  std::sort(nontargets.begin(), nontargets.end());
  std::vector<double> candidates;
  candidates.reserve(targets.size() + nontargets.size() + 1);
  candidates.insert(candidates.end(), targets.begin(), targets.end());
  candidates.insert(candidates.end(), nontargets.begin(), nontargets.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());
  candidates.push_back(candidates.back() + 1.0);

  const double nt = static_cast<double>(targets.size());
  const double nn = static_cast<double>(nontargets.size());
  std::vector<SweepPoint> points;
  points.reserve(candidates.size());
  for (double threshold : candidates) {
    const auto below_t = static_cast<double>(
        std::lower_bound(targets.begin(), targets.end(), threshold) -
        targets.begin());
    const auto below_n = static_cast<double>(
        std::lower_bound(nontargets.begin(), nontargets.end(), threshold) -
        nontargets.begin());
    points.push_back(SweepPoint{threshold, below_t / nt,
                                (nn - below_n) / nn});
  }
  return points;
}

}  // namespace

EerResult compute_eer(const std::vector<double>& target_scores,
                      const std::vector<double>& nontarget_scores) {
  if (target_scores.empty() || nontarget_scores.empty()) {
    throw InvalidInputError("compute_eer needs both classes");
  }
  const auto points = sweep_points(target_scores, nontarget_scores);
  // FRR ascends from 0 and FAR descends to 0 along the sweep, so a
  // crossing always exists.
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].frr < points[i].far) continue;
    if (points[i].frr == points[i].far || i == 0) {
      return EerResult{points[i].frr, points[i].threshold};
    }
    const SweepPoint& a = points[i - 1];
    const SweepPoint& b = points[i];
    const double da = a.far - a.frr;  // > 0
    const double db = b.frr - b.far;  // > 0
    const double t = da / (da + db);
    return EerResult{a.frr + t * (b.frr - a.frr),
                     a.threshold + t * (b.threshold - a.threshold)};
  }
  throw NumericalError("EER crossing not found", 0.0);  // unreachable
}

double compute_min_dcf(const std::vector<double>& target_scores,
                       const std::vector<double>& nontarget_scores,
                       const DcfParams& params) {
  if (target_scores.empty() || nontarget_scores.empty()) {
    throw InvalidInputError("compute_min_dcf needs both classes");
  }
  if (!(params.p_target > 0.0) || params.p_target >= 1.0 ||
      !(params.c_miss > 0.0) || !(params.c_fa > 0.0)) {
    throw ConfigError("bad DCF parameters");
  }
  const double miss_w = params.c_miss * params.p_target;
  const double fa_w = params.c_fa * (1.0 - params.p_target);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : sweep_points(target_scores, nontarget_scores)) {
    best = std::min(best, miss_w * p.frr + fa_w * p.far);
  }
  return best / std::min(miss_w, fa_w);
}

std::string MetricsReport::to_json_text() const {
  json j;
  j["eer"] = eer;
  j["eer_threshold"] = eer_threshold;
  j["min_dcf"] = min_dcf;
  j["dcf_params"]["p_target"] = dcf_params.p_target;
  j["dcf_params"]["c_miss"] = dcf_params.c_miss;
  j["dcf_params"]["c_fa"] = dcf_params.c_fa;
  j["counts"]["targets"] = targets;
  j["counts"]["nontargets"] = nontargets;
  return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::kMalformed,
                     std::string("bad metrics JSON: ") + e.what());
  }
  MetricsReport r;
  try {
    r.eer = j.at("eer").get<double>();
    r.eer_threshold = j.at("eer_threshold").get<double>();
    r.min_dcf = j.at("min_dcf").get<double>();
    r.dcf_params.p_target = j.at("dcf_params").at("p_target").get<double>();
    r.dcf_params.c_miss = j.at("dcf_params").at("c_miss").get<double>();
    r.dcf_params.c_fa = j.at("dcf_params").at("c_fa").get<double>();
    r.targets = j.at("counts").at("targets").get<std::size_t>();
    r.nontargets = j.at("counts").at("nontargets").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::kBadValue,
                     std::string("bad metrics value: ") + e.what());
  }
  return r;
}

MetricsReport compute_metrics(const TrialScoreSet& set,
                              const DcfParams& params) {
  std::vector<double> targets, nontargets;
  const auto scores = set.effective_scores();
  for (std::size_t i = 0; i < set.scores.size(); ++i) {
    if (!set.scores[i].trial.is_target.has_value()) {
      throw InvalidInputError("metrics need labeled trials");
    }
    (*set.scores[i].trial.is_target ? targets : nontargets)
        .push_back(scores[i]);
  }
  MetricsReport report;
  const auto eer = compute_eer(targets, nontargets);
  report.eer = eer.eer;
  report.eer_threshold = eer.threshold;
  report.min_dcf = compute_min_dcf(targets, nontargets, params);
  report.dcf_params = params;
  report.targets = targets.size();
  report.nontargets = nontargets.size();
  return report;
}

std::vector<Trial> make_trials(const std::vector<UtteranceRecord>& manifest,
                               std::size_t trials_per_class,
                               std::size_t enrolls_per_trial, Rng& rng) {
  if (enrolls_per_trial < 1) {
    throw ConfigError("enrolls_per_trial must be >= 1");
  }
  std::map<int, std::vector<const UtteranceRecord*>> by_speaker;
  for (const auto& rec : manifest) {
    if (!rec.speaker_label.has_value()) {
      throw ConfigError("trial generation needs a labeled manifest");
    }
    by_speaker[*rec.speaker_label].push_back(&rec);
  }
  std::vector<int> speakers;
  std::vector<int> target_capable;  // enough utterances for enroll + test
  for (const auto& [label, recs] : by_speaker) {
    speakers.push_back(label);
    if (recs.size() >= enrolls_per_trial + 1) target_capable.push_back(label);
  }
  if (speakers.size() < 2) {
    throw ConfigError("trial generation needs at least 2 speakers");
  }
  if (target_capable.empty()) {
    throw ConfigError("no speaker has enough utterances for target trials");
  }

  auto pick_distinct = [&](const std::vector<const UtteranceRecord*>& recs,
                           std::size_t count) {
    std::vector<std::size_t> idx(recs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = idx.size(); i > 1; --i) {
      std::swap(idx[i - 1], idx[rng.uniform_below(i)]);
    }
    idx.resize(count);
    return idx;
  };

  std::vector<Trial> trials;
  trials.reserve(2 * trials_per_class);
  for (std::size_t i = 0; i < trials_per_class; ++i) {
    const int speaker =
        target_capable[rng.uniform_below(target_capable.size())];
    const auto& recs = by_speaker[speaker];
    const auto idx = pick_distinct(recs, enrolls_per_trial + 1);
    Trial t;
    for (std::size_t e = 0; e < enrolls_per_trial; ++e) {
      t.enroll_ids.push_back(recs[idx[e]]->utterance_id);
    }
    t.test_id = recs[idx[enrolls_per_trial]]->utterance_id;
    t.is_target = true;
    trials.push_back(std::move(t));
  }
  std::vector<int> enroll_capable;
  for (const auto& [label, recs] : by_speaker) {
    if (recs.size() >= enrolls_per_trial) enroll_capable.push_back(label);
  }
  for (std::size_t i = 0; i < trials_per_class; ++i) {
    const int s1 = enroll_capable[rng.uniform_below(enroll_capable.size())];
    int s2 = s1;
    while (s2 == s1) {
      s2 = speakers[rng.uniform_below(speakers.size())];
    }
    const auto& enroll_recs = by_speaker[s1];
    const auto& test_recs = by_speaker[s2];
    const auto idx = pick_distinct(enroll_recs, enrolls_per_trial);
    Trial t;
    for (std::size_t e = 0; e < enrolls_per_trial; ++e) {
      t.enroll_ids.push_back(enroll_recs[idx[e]]->utterance_id);
    }
    t.test_id = test_recs[rng.uniform_below(test_recs.size())]->utterance_id;
    t.is_target = false;
    trials.push_back(std::move(t));
  }
  return trials;
}

}  // namespace cascade
