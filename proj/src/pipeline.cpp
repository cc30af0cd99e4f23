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

#include "cascade/pipeline.hpp"

#include <chrono>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cascade/io_util.hpp"

namespace cascade {

using nlohmann::json;

void ScoringConfig::validate() const {
  if (!(p_target > 0.0) || p_target >= 1.0) {
    throw ConfigError("p_target must lie in (0, 1)");
  }
  if (!(c_miss > 0.0) || !(c_fa > 0.0)) {
    throw ConfigError("DCF costs must be positive");
  }
  if (asnorm_k < 2) throw ConfigError("asnorm_k must be >= 2");
}

void SupervisedSpec::validate() const {
  if (train_utterances_per_speaker < 1 || eval_speakers < 2 ||
      eval_utterances_per_speaker < 1 || trials_per_class < 1 ||
      enrolls_per_trial < 1) {
    throw ConfigError("supervised corpus counts are out of range");
  }
}

void PipelineConfig::resolve_seeds() {
  if (corpus.seed == 0) corpus.seed = derive_seed(seed, "corpus");
  if (dino.seed == 0) dino.seed = derive_seed(seed, "dino");
  if (filter.seed == 0) filter.seed = derive_seed(seed, "filter");
  if (finetune.seed == 0) finetune.seed = derive_seed(seed, "finetune");
}

void PipelineConfig::validate() const {
  if (workdir.empty()) throw ConfigError("workdir must not be empty");
  corpus.validate();
  supervised.validate();
  encoder.validate();
  dino.validate();
  filter.validate();
  finetune.validate();
  scoring.validate();
  if (corpus.feature_dim != encoder.feature_dim) {
    throw ConfigError("corpus.feature_dim must equal encoder.feature_dim");
  }
  if (corpus.frames_per_utterance < dino.global_len) {
    throw ConfigError("corpus utterances are shorter than dino.global_len");
  }
  if (scoring.asnorm_enabled &&
      scoring.asnorm_k > corpus.num_speakers) {
    throw ConfigError("asnorm_k exceeds the cohort speaker count");
  }
}

namespace {

void check_keys(const json& j, const char* section,
                std::initializer_list<const char*> keys) {
  if (!j.is_object()) {
    throw ParseError(ParseError::Kind::kMalformed,
                     std::string("config section '") + section +
                         "' is not a JSON object");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) {
      throw ParseError(ParseError::Kind::kUnknownKey,
                       std::string("unknown config key '") + section + "." +
                           it.key() + "'");
    }
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::kBadValue,
                     std::string("bad config value for '") + key +
                         "': " + e.what());
  }
}

json augmentation_to_json(const AugmentationConfig& a) {
  json j;
  j["noise_std"] = a.noise_std;
  j["gain_lo"] = a.gain_lo;
  j["gain_hi"] = a.gain_hi;
  j["frame_dropout_prob"] = a.frame_dropout_prob;
  return j;
}

void augmentation_from_json(const json& j, const char* section,
                            AugmentationConfig& a) {
  check_keys(j, section, {"noise_std", "gain_lo", "gain_hi",
                          "frame_dropout_prob"});
  maybe(j, "noise_std", a.noise_std);
  maybe(j, "gain_lo", a.gain_lo);
  maybe(j, "gain_hi", a.gain_hi);
  maybe(j, "frame_dropout_prob", a.frame_dropout_prob);
}

}  // namespace

std::string PipelineConfig::to_json_text() const {
  json j;
  j["seed"] = seed;
  j["workdir"] = workdir;

  json c;
  c["num_speakers"] = corpus.num_speakers;
  c["utterances_per_speaker"] = corpus.utterances_per_speaker;
  c["frames_per_utterance"] = corpus.frames_per_utterance;
  c["feature_dim"] = corpus.feature_dim;
  c["speaker_scale"] = corpus.speaker_scale;
  c["utterance_noise"] = corpus.utterance_noise;
  c["frame_noise"] = corpus.frame_noise;
  c["multi_speaker_fraction"] = corpus.multi_speaker_fraction;
  c["noisy_fraction"] = corpus.noisy_fraction;
  c["seed"] = corpus.seed;
  j["corpus"] = c;

  json sup;
  sup["train_utterances_per_speaker"] = supervised.train_utterances_per_speaker;
  sup["eval_speakers"] = supervised.eval_speakers;
  sup["eval_utterances_per_speaker"] = supervised.eval_utterances_per_speaker;
  sup["trials_per_class"] = supervised.trials_per_class;
  sup["enrolls_per_trial"] = supervised.enrolls_per_trial;
  j["supervised"] = sup;

  json e;
  e["feature_dim"] = encoder.feature_dim;
  e["hidden_dims"] = encoder.hidden_dims;
  e["embedding_dim"] = encoder.embedding_dim;
  e["head_hidden_dims"] = encoder.head_hidden_dims;
  e["head_output_dim"] = encoder.head_output_dim;
  j["encoder"] = e;

  json d;
  d["num_global_views"] = dino.num_global_views;
  d["num_local_views"] = dino.num_local_views;
  d["global_len"] = dino.global_len;
  d["local_len"] = dino.local_len;
  d["student_temperature"] = dino.student_temperature;
  d["teacher_temperature"] = dino.teacher_temperature;
  d["ema_lambda"] = dino.ema_lambda;
  d["ema_lambda_end"] = dino.ema_lambda_end;
  d["center_momentum"] = dino.center_momentum;
  d["learning_rate"] = dino.learning_rate;
  d["momentum"] = dino.momentum;
  d["weight_decay"] = dino.weight_decay;
  d["warmup_steps"] = dino.warmup_steps;
  d["batch_size"] = dino.batch_size;
  d["epochs"] = dino.epochs;
  d["augmentation"] = augmentation_to_json(dino.augmentation);
  d["seed"] = dino.seed;
  j["dino"] = d;

  json f;
  f["window_len"] = filter.window_len;
  f["window_shift"] = filter.window_shift;
  f["max_clusters"] = filter.max_clusters;
  f["eigengap_floor"] = filter.eigengap_floor;
  f["binarize_percentile"] = filter.binarize_percentile;
  f["confidence_threshold"] = filter.confidence_threshold;
  f["extractor_checkpoint"] = filter.extractor_checkpoint;
  f["seed"] = filter.seed;
  j["filter"] = f;

  json ft;
  ft["init"] = finetune_init_name(finetune.init);
  ft["epochs"] = finetune.epochs;
  ft["learning_rate"] = finetune.learning_rate;
  ft["momentum"] = finetune.momentum;
  ft["weight_decay"] = finetune.weight_decay;
  ft["aam_scale"] = finetune.aam_scale;
  ft["aam_margin"] = finetune.aam_margin;
  json lm;
  lm["enabled"] = finetune.large_margin.enabled;
  lm["extra_epochs"] = finetune.large_margin.extra_epochs;
  lm["margin"] = finetune.large_margin.margin;
  lm["crop_len"] = finetune.large_margin.crop_len;
  ft["large_margin"] = lm;
  ft["crop_len"] = finetune.crop_len;
  ft["batch_size"] = finetune.batch_size;
  ft["augmentation"] = augmentation_to_json(finetune.augmentation);
  ft["seed"] = finetune.seed;
  j["finetune"] = ft;

  json s;
  s["p_target"] = scoring.p_target;
  s["c_miss"] = scoring.c_miss;
  s["c_fa"] = scoring.c_fa;
  s["asnorm_k"] = scoring.asnorm_k;
  s["asnorm_enabled"] = scoring.asnorm_enabled;
  j["scoring"] = s;

  return j.dump(2) + "\n";
}

PipelineConfig PipelineConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::kMalformed,
                     std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "<root>",
             {"seed", "workdir", "corpus", "supervised", "encoder", "dino",
              "filter", "finetune", "scoring"});

  PipelineConfig c;
  maybe(j, "seed", c.seed);
  maybe(j, "workdir", c.workdir);

  if (j.contains("corpus")) {
    const json& s = j.at("corpus");
    check_keys(s, "corpus",
               {"num_speakers", "utterances_per_speaker",
                "frames_per_utterance", "feature_dim", "speaker_scale",
                "utterance_noise", "frame_noise", "multi_speaker_fraction",
                "noisy_fraction", "seed"});
    maybe(s, "num_speakers", c.corpus.num_speakers);
    maybe(s, "utterances_per_speaker", c.corpus.utterances_per_speaker);
    maybe(s, "frames_per_utterance", c.corpus.frames_per_utterance);
    maybe(s, "feature_dim", c.corpus.feature_dim);
    maybe(s, "speaker_scale", c.corpus.speaker_scale);
    maybe(s, "utterance_noise", c.corpus.utterance_noise);
    maybe(s, "frame_noise", c.corpus.frame_noise);
    maybe(s, "multi_speaker_fraction", c.corpus.multi_speaker_fraction);
    maybe(s, "noisy_fraction", c.corpus.noisy_fraction);
    maybe(s, "seed", c.corpus.seed);
  }

  if (j.contains("supervised")) {
    const json& s = j.at("supervised");
    check_keys(s, "supervised",
               {"train_utterances_per_speaker", "eval_speakers",
                "eval_utterances_per_speaker", "trials_per_class",
                "enrolls_per_trial"});
    maybe(s, "train_utterances_per_speaker",
          c.supervised.train_utterances_per_speaker);
    maybe(s, "eval_speakers", c.supervised.eval_speakers);
    maybe(s, "eval_utterances_per_speaker",
          c.supervised.eval_utterances_per_speaker);
    maybe(s, "trials_per_class", c.supervised.trials_per_class);
    maybe(s, "enrolls_per_trial", c.supervised.enrolls_per_trial);
  }

  if (j.contains("encoder")) {
    const json& s = j.at("encoder");
    check_keys(s, "encoder",
               {"feature_dim", "hidden_dims", "embedding_dim",
                "head_hidden_dims", "head_output_dim"});
    maybe(s, "feature_dim", c.encoder.feature_dim);
    maybe(s, "hidden_dims", c.encoder.hidden_dims);
    maybe(s, "embedding_dim", c.encoder.embedding_dim);
    maybe(s, "head_hidden_dims", c.encoder.head_hidden_dims);
    maybe(s, "head_output_dim", c.encoder.head_output_dim);
  }

  if (j.contains("dino")) {
    const json& s = j.at("dino");
    check_keys(s, "dino",
               {"num_global_views", "num_local_views", "global_len",
                "local_len", "student_temperature", "teacher_temperature",
                "ema_lambda", "ema_lambda_end", "center_momentum",
                "learning_rate", "momentum", "weight_decay", "warmup_steps",
                "batch_size", "epochs", "augmentation", "seed"});
    maybe(s, "num_global_views", c.dino.num_global_views);
    maybe(s, "num_local_views", c.dino.num_local_views);
    maybe(s, "global_len", c.dino.global_len);
    maybe(s, "local_len", c.dino.local_len);
    maybe(s, "student_temperature", c.dino.student_temperature);
    maybe(s, "teacher_temperature", c.dino.teacher_temperature);
    maybe(s, "ema_lambda", c.dino.ema_lambda);
    maybe(s, "ema_lambda_end", c.dino.ema_lambda_end);
    maybe(s, "center_momentum", c.dino.center_momentum);
    maybe(s, "learning_rate", c.dino.learning_rate);
    maybe(s, "momentum", c.dino.momentum);
    maybe(s, "weight_decay", c.dino.weight_decay);
    maybe(s, "warmup_steps", c.dino.warmup_steps);
    maybe(s, "batch_size", c.dino.batch_size);
    maybe(s, "epochs", c.dino.epochs);
    if (s.contains("augmentation")) {
      augmentation_from_json(s.at("augmentation"), "dino.augmentation",
                             c.dino.augmentation);
    }
    maybe(s, "seed", c.dino.seed);
  }

  if (j.contains("filter")) {
    const json& s = j.at("filter");
    check_keys(s, "filter",
               {"window_len", "window_shift", "max_clusters", "eigengap_floor",
                "binarize_percentile", "confidence_threshold",
                "extractor_checkpoint", "seed"});
    maybe(s, "window_len", c.filter.window_len);
    maybe(s, "window_shift", c.filter.window_shift);
    maybe(s, "max_clusters", c.filter.max_clusters);
    maybe(s, "eigengap_floor", c.filter.eigengap_floor);
    maybe(s, "binarize_percentile", c.filter.binarize_percentile);
    maybe(s, "confidence_threshold", c.filter.confidence_threshold);
    maybe(s, "extractor_checkpoint", c.filter.extractor_checkpoint);
    maybe(s, "seed", c.filter.seed);
  }

  if (j.contains("finetune")) {
    const json& s = j.at("finetune");
    check_keys(s, "finetune",
               {"init", "epochs", "learning_rate", "momentum", "weight_decay",
                "aam_scale", "aam_margin", "large_margin", "crop_len",
                "batch_size", "augmentation", "seed"});
    if (s.contains("init")) {
      c.finetune.init =
          finetune_init_from_name(s.at("init").get<std::string>());
    }
    maybe(s, "epochs", c.finetune.epochs);
    maybe(s, "learning_rate", c.finetune.learning_rate);
    maybe(s, "momentum", c.finetune.momentum);
    maybe(s, "weight_decay", c.finetune.weight_decay);
    maybe(s, "aam_scale", c.finetune.aam_scale);
    maybe(s, "aam_margin", c.finetune.aam_margin);
    if (s.contains("large_margin")) {
      const json& lm = s.at("large_margin");
      check_keys(lm, "finetune.large_margin",
                 {"enabled", "extra_epochs", "margin", "crop_len"});
      maybe(lm, "enabled", c.finetune.large_margin.enabled);
      maybe(lm, "extra_epochs", c.finetune.large_margin.extra_epochs);
      maybe(lm, "margin", c.finetune.large_margin.margin);
      maybe(lm, "crop_len", c.finetune.large_margin.crop_len);
    }
    maybe(s, "crop_len", c.finetune.crop_len);
    maybe(s, "batch_size", c.finetune.batch_size);
    if (s.contains("augmentation")) {
      augmentation_from_json(s.at("augmentation"), "finetune.augmentation",
                             c.finetune.augmentation);
    }
    maybe(s, "seed", c.finetune.seed);
  }

  if (j.contains("scoring")) {
    const json& s = j.at("scoring");
    check_keys(s, "scoring",
               {"p_target", "c_miss", "c_fa", "asnorm_k", "asnorm_enabled"});
    maybe(s, "p_target", c.scoring.p_target);
    maybe(s, "c_miss", c.scoring.c_miss);
    maybe(s, "c_fa", c.scoring.c_fa);
    maybe(s, "asnorm_k", c.scoring.asnorm_k);
    maybe(s, "asnorm_enabled", c.scoring.asnorm_enabled);
  }
  return c;
}

PipelineConfig PipelineConfig::load(
    const std::optional<std::filesystem::path>& config_path,
    const std::vector<std::string>& set_overrides) {
  json j = json::parse(PipelineConfig{}.to_json_text());
  if (config_path.has_value()) {
    // Merge the file over the defaults so partial configs work; the strict
    // key check runs when the merged object is parsed below.
    json file;
    try {
      file = json::parse(read_file_text(*config_path));
    } catch (const json::exception& e) {
      throw ParseError(ParseError::Kind::kMalformed,
                       "config file " + config_path->string() +
                           " is not valid JSON: " + e.what());
    }
    j.merge_patch(file);
  }
  for (const auto& kv : set_overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set expects dotted.key=value, got '" + kv + "'");
    }
    const std::string path = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;  // bare strings need no quotes
    }
    json* at = &j;
    std::size_t start = 0;
    for (;;) {
      const std::size_t dotpos = path.find('.', start);
      const std::string key = path.substr(
          start, dotpos == std::string::npos ? std::string::npos
                                             : dotpos - start);
      if (key.empty()) {
        throw ConfigError("--set path has an empty component: '" + path + "'");
      }
      if (dotpos == std::string::npos) {
        (*at)[key] = parsed;
        break;
      }
      at = &(*at)[key];
      start = dotpos + 1;
    }
  }
  PipelineConfig c = from_json_text(j.dump());
  c.resolve_seeds();
  c.validate();
  return c;
}

WorkdirLock::WorkdirLock(const std::filesystem::path& workdir) {
  std::filesystem::create_directories(workdir);
  lock_path_ = workdir / ".lock";
  if (std::filesystem::exists(lock_path_)) {
    throw ConfigError("workdir " + workdir.string() +
                      " is locked by another pipeline run (remove " +
                      lock_path_.string() + " if that run crashed)");
  }
  std::ofstream out(lock_path_);
  if (!out) throw IoError("cannot create lock file " + lock_path_.string());
  out << "locked\n";
}

WorkdirLock::~WorkdirLock() {
  std::error_code ec;
  std::filesystem::remove(lock_path_, ec);
}

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) {
  config_.validate();
  workdir_ = config_.workdir;
  config_hash_ = fnv1a_hex(config_.to_json_text());
  std::filesystem::create_directories(workdir_);
}

std::filesystem::path Pipeline::pretrain_manifest_path() const {
  return workdir_ / "corpus" / "pretrain.jsonl";
}
std::filesystem::path Pipeline::train_manifest_path() const {
  return workdir_ / "corpus" / "train.jsonl";
}
std::filesystem::path Pipeline::eval_manifest_path() const {
  return workdir_ / "corpus" / "eval.jsonl";
}
std::filesystem::path Pipeline::trials_path() const {
  return workdir_ / "corpus" / "trials.txt";
}
std::filesystem::path Pipeline::filtered_manifest_path() const {
  return workdir_ / "filter" / "filtered.jsonl";
}
std::filesystem::path Pipeline::confidence_path() const {
  return workdir_ / "filter" / "confidence.jsonl";
}
std::filesystem::path Pipeline::pretrain_dir(bool use_filtered) const {
  return workdir_ / (use_filtered ? "pretrain_filtered"
                                  : "pretrain_unfiltered");
}
std::filesystem::path Pipeline::finetune_dir(
    const std::string& variant) const {
  return workdir_ / ("finetune_" + variant);
}
std::filesystem::path Pipeline::scores_path(const std::string& tag) const {
  return workdir_ / ("scores_" + tag + ".txt");
}
std::filesystem::path Pipeline::metrics_path(const std::string& tag) const {
  return workdir_ / ("metrics_" + tag + ".json");
}

std::string Pipeline::variant_name(FinetuneInit init, bool use_filtered) {
  if (init == FinetuneInit::kRandom) return "random";
  return std::string(use_filtered ? "filtered" : "unfiltered") + "_" +
         finetune_init_name(init);
}

namespace {

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

void Pipeline::append_run_record(const std::string& stage,
                                 const std::vector<std::string>& inputs,
                                 const std::vector<std::string>& outputs,
                                 double wall_ms) {
  json j;
  j["stage"] = stage;
  j["config_hash"] = config_hash_;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["wall_ms"] = wall_ms;
  j["tool_version"] = kToolVersion;
  std::ofstream out(workdir_ / "run_records.jsonl", std::ios::app);
  out << j.dump() << "\n";
}

void Pipeline::generate() {
  StageTimer timer;
  const auto corpus_dir = workdir_ / "corpus";
  const auto features = corpus_dir / "features";

  GenerateOptions wild;
  wild.id_prefix = "pt_";
  generate_corpus(config_.corpus, features, pretrain_manifest_path(), wild);

  SyntheticCorpusSpec train_spec = config_.corpus;
  train_spec.utterances_per_speaker =
      config_.supervised.train_utterances_per_speaker;
  train_spec.multi_speaker_fraction = 0.0;
  train_spec.noisy_fraction = 0.0;
  train_spec.seed = derive_seed(config_.corpus.seed, "train");
  GenerateOptions train_opts;
  train_opts.labeled = true;
  train_opts.id_prefix = "ft_";
  generate_corpus(train_spec, features, train_manifest_path(), train_opts);

  SyntheticCorpusSpec eval_spec = config_.corpus;
  eval_spec.num_speakers = config_.supervised.eval_speakers;
  eval_spec.utterances_per_speaker =
      config_.supervised.eval_utterances_per_speaker;
  eval_spec.multi_speaker_fraction = 0.0;
  eval_spec.noisy_fraction = 0.0;
  eval_spec.seed = derive_seed(config_.corpus.seed, "eval");
  GenerateOptions eval_opts;
  eval_opts.labeled = true;
  eval_opts.id_prefix = "ev_";
  eval_opts.speaker_id_offset = config_.corpus.num_speakers;
  const auto eval_records =
      generate_corpus(eval_spec, features, eval_manifest_path(), eval_opts);

  Rng trial_rng(derive_seed(config_.corpus.seed, "trials"));
  const auto trials =
      make_trials(eval_records, config_.supervised.trials_per_class,
                  config_.supervised.enrolls_per_trial, trial_rng);
  write_trials(trials_path(), trials);

  append_run_record("generate", {},
                    {pretrain_manifest_path().string(),
                     train_manifest_path().string(),
                     eval_manifest_path().string(), trials_path().string()},
                    timer.elapsed_ms());
}

PretrainResult Pipeline::pretrain(bool use_filtered) {
  StageTimer timer;
  const auto manifest_path =
      use_filtered ? filtered_manifest_path() : pretrain_manifest_path();
  const auto manifest = read_manifest(manifest_path, /*labeled=*/false);
  const auto dir = pretrain_dir(use_filtered);
  PretrainPaths paths{dir / "teacher.cspk", dir / "student.cspk",
                      dir / "loss_log.jsonl"};
  const auto result = cascade::pretrain(manifest, manifest_path,
                                        config_.encoder, config_.dino, paths);
  append_run_record(use_filtered ? "pretrain_filtered" : "pretrain",
                    {manifest_path.string()},
                    {paths.teacher_checkpoint.string(),
                     paths.student_checkpoint.string(),
                     paths.loss_log.string()},
                    timer.elapsed_ms());
  return result;
}

FilterResult Pipeline::filter() {
  StageTimer timer;
  FilterConfig fc = config_.filter;
  if (fc.extractor_checkpoint.empty()) {
    fc.extractor_checkpoint =
        (pretrain_dir(false) / "teacher.cspk").string();
  }
  const auto manifest =
      read_manifest(pretrain_manifest_path(), /*labeled=*/false);
  FilterPaths paths{filtered_manifest_path(),
                    workdir_ / "filter" / "features", confidence_path()};
  const auto result =
      filter_manifest(manifest, pretrain_manifest_path(), fc, paths);
  append_run_record("filter",
                    {pretrain_manifest_path().string(),
                     fc.extractor_checkpoint},
                    {paths.filtered_manifest.string(),
                     paths.confidence_file.string()},
                    timer.elapsed_ms());
  return result;
}

FinetuneResult Pipeline::finetune(FinetuneInit init, bool use_filtered) {
  StageTimer timer;
  FinetuneConfig fc = config_.finetune;
  fc.init = init;
  std::optional<std::filesystem::path> init_ckpt;
  if (init != FinetuneInit::kRandom) {
    init_ckpt = pretrain_dir(use_filtered) /
                (finetune_init_name(init) + ".cspk");
  }
  const auto manifest = read_manifest(train_manifest_path(), /*labeled=*/true);
  const auto dir = finetune_dir(variant_name(init, use_filtered));
  FinetunePaths paths{dir / "model.cspk", dir / "train_log.jsonl"};
  const auto result = cascade::finetune(manifest, train_manifest_path(),
                                        config_.encoder, fc, init_ckpt, paths);
  std::vector<std::string> inputs{train_manifest_path().string()};
  if (init_ckpt.has_value()) inputs.push_back(init_ckpt->string());
  append_run_record("finetune_" + variant_name(init, use_filtered), inputs,
                    {paths.checkpoint.string(), paths.train_log.string()},
                    timer.elapsed_ms());
  return result;
}

void Pipeline::score(const std::filesystem::path& checkpoint_path,
                     const std::string& tag, bool allow_raw_checkpoint) {
  StageTimer timer;
  const auto checkpoint = load_checkpoint(checkpoint_path);
  const auto trials = read_trials(trials_path());
  const auto eval_manifest =
      read_manifest(eval_manifest_path(), /*labeled=*/true);
  ScoreOptions options;
  options.allow_raw_checkpoint = allow_raw_checkpoint;
  auto scored = score_trials(trials, eval_manifest, eval_manifest_path(),
                             checkpoint, options);
  if (config_.scoring.asnorm_enabled) {
    const auto train_manifest =
        read_manifest(train_manifest_path(), /*labeled=*/true);
    const auto cohort =
        cohort_by_speaker(train_manifest, train_manifest_path(), checkpoint);
    apply_as_norm(scored, cohort, config_.scoring.asnorm_k);
  }
  write_scores(scores_path(tag), scored.set);
  append_run_record("score_" + tag,
                    {checkpoint_path.string(), trials_path().string(),
                     eval_manifest_path().string()},
                    {scores_path(tag).string()}, timer.elapsed_ms());
}

MetricsReport Pipeline::evaluate(const std::string& tag) {
  StageTimer timer;
  const auto set = read_scores(scores_path(tag));
  DcfParams params{config_.scoring.p_target, config_.scoring.c_miss,
                   config_.scoring.c_fa};
  const auto report = compute_metrics(set, params);
  atomic_write_text(metrics_path(tag), report.to_json_text());
  append_run_record("eval_" + tag, {scores_path(tag).string()},
                    {metrics_path(tag).string()}, timer.elapsed_ms());
  return report;
}

std::vector<TaggedReport> Pipeline::run_all() {
  generate();
  pretrain(/*use_filtered=*/false);
  filter();
  pretrain(/*use_filtered=*/true);

  std::vector<TaggedReport> reports;
  for (bool use_filtered : {false, true}) {
    for (FinetuneInit init : {FinetuneInit::kTeacher, FinetuneInit::kStudent}) {
      const std::string tag = variant_name(init, use_filtered);
      finetune(init, use_filtered);
      score(finetune_dir(tag) / "model.cspk", tag,
            /*allow_raw_checkpoint=*/false);
      reports.push_back(TaggedReport{tag, evaluate(tag)});
    }
  }
  return reports;
}

}  // namespace cascade
