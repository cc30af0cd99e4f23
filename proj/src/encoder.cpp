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

#include "cascade/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "cascade/io_util.hpp"

namespace cascade {

using nlohmann::json;

void EncoderConfig::validate() const {
  if (feature_dim < 1 || embedding_dim < 1) {
    throw ConfigError("encoder dims must be >= 1");
  }
  for (std::size_t h : hidden_dims) {
    if (h < 1) throw ConfigError("encoder hidden dims must be >= 1");
  }
  for (std::size_t h : head_hidden_dims) {
    if (h < 1) throw ConfigError("encoder head hidden dims must be >= 1");
  }
  if (head_output_dim < 2) {
    throw ConfigError("head_output_dim must be >= 2");
  }
}

std::string EncoderConfig::to_json_text() const {
  json j;
  j["feature_dim"] = feature_dim;
  j["hidden_dims"] = hidden_dims;
  j["embedding_dim"] = embedding_dim;
  j["head_hidden_dims"] = head_hidden_dims;
  j["head_output_dim"] = head_output_dim;
  return j.dump();
}

EncoderConfig EncoderConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::kMalformed,
                     std::string("bad encoder config JSON: ") + e.what());
  }
  EncoderConfig c;
  try {
    c.feature_dim = j.at("feature_dim").get<std::size_t>();
    c.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
    c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    c.head_hidden_dims =
        j.at("head_hidden_dims").get<std::vector<std::size_t>>();
    c.head_output_dim = j.at("head_output_dim").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::kBadValue,
                     std::string("bad encoder config value: ") + e.what());
  }
  c.validate();
  return c;
}

void Parameters::add(std::string name, int rank, Matrix value) {
  if (has(name)) throw InvalidInputError("duplicate tensor name: " + name);
  if (rank == 1 && value.rows() != 1) {
    throw InvalidInputError("rank-1 tensor must be stored as 1 x n: " + name);
  }
  tensors_.push_back(ParamTensor{std::move(name), rank, std::move(value)});
}

bool Parameters::has(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return true;
  }
  return false;
}

Matrix& Parameters::at(const std::string& name) {
  for (auto& t : tensors_) {
    if (t.name == name) return t.value;
  }
  throw InvalidInputError("no such tensor: " + name);
}

const Matrix& Parameters::at(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t.value;
  }
  throw InvalidInputError("no such tensor: " + name);
}

bool Parameters::same_shape(const Parameters& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name != other.tensors_[i].name ||
        !tensors_[i].value.same_shape(other.tensors_[i].value)) {
      return false;
    }
  }
  return true;
}

std::size_t Parameters::total_values() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

Parameters Parameters::zeros_like() const {
  Parameters out;
  for (const auto& t : tensors_) {
    out.add(t.name, t.rank, Matrix(t.value.rows(), t.value.cols()));
  }
  return out;
}

void Parameters::add_scaled(const Parameters& other, double alpha) {
  if (!same_shape(other)) {
    throw InvalidInputError("parameter shape mismatch in add_scaled");
  }
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    double* dst = tensors_[i].value.data();
    const double* src = other.tensors_[i].value.data();
    const std::size_t n = tensors_[i].value.size();
    for (std::size_t k = 0; k < n; ++k) dst[k] += alpha * src[k];
  }
}

void Parameters::scale(double alpha) {
  for (auto& t : tensors_) {
    for (double& v : t.value.storage()) v *= alpha;
  }
}

namespace {

Matrix glorot_uniform(std::size_t out_dim, std::size_t in_dim, Rng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  Matrix w(out_dim, in_dim);
  for (double& v : w.storage()) v = rng.uniform(-limit, limit);
  return w;
}

// Y = X W^T + b for row-wise frames.
Matrix linear_forward(const Matrix& x, const Matrix& w, const Matrix& b) {
  const std::size_t t = x.rows(), in = x.cols(), out = w.rows();
  Matrix y(t, out);
  for (std::size_t r = 0; r < t; ++r) {
    const double* xr = x.data() + r * in;
    double* yr = y.data() + r * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = w.data() + o * in;
      double acc = b(0, o);
      for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xr[i];
      yr[o] = acc;
    }
  }
  return y;
}

void relu_inplace(Matrix& m) {
  for (double& v : m.storage()) v = v > 0.0 ? v : 0.0;
}

// Backward of linear_forward. Accumulates dW, db; returns dX.
Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy,
                       Matrix& dw, Matrix& db) {
  const std::size_t t = x.rows(), in = x.cols(), out = w.rows();
  for (std::size_t r = 0; r < t; ++r) {
    const double* xr = x.data() + r * in;
    const double* dyr = dy.data() + r * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dyr[o];
      if (g == 0.0) continue;
      double* dwo = dw.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) dwo[i] += g * xr[i];
      db(0, o) += g;
    }
  }
  Matrix dx(t, in);
  for (std::size_t r = 0; r < t; ++r) {
    const double* dyr = dy.data() + r * out;
    double* dxr = dx.data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dyr[o];
      if (g == 0.0) continue;
      const double* wo = w.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) dxr[i] += g * wo[i];
    }
  }
  return dx;
}

std::string frame_weight_name(std::size_t i) {
  return "frame." + std::to_string(i) + ".weight";
}
std::string frame_bias_name(std::size_t i) {
  return "frame." + std::to_string(i) + ".bias";
}
std::string head_weight_name(std::size_t i) {
  return "head." + std::to_string(i) + ".weight";
}
std::string head_bias_name(std::size_t i) {
  return "head." + std::to_string(i) + ".bias";
}

}  // namespace

Parameters init_params(const EncoderConfig& config, Rng& rng, bool with_head) {
  config.validate();
  Parameters params;
  std::size_t prev = config.feature_dim;
  for (std::size_t i = 0; i < config.hidden_dims.size(); ++i) {
    const std::size_t h = config.hidden_dims[i];
    params.add(frame_weight_name(i), 2, glorot_uniform(h, prev, rng));
    params.add(frame_bias_name(i), 1, Matrix(1, h));
    prev = h;
  }
  params.add("embed.weight", 2,
             glorot_uniform(config.embedding_dim, 2 * prev, rng));
  params.add("embed.bias", 1, Matrix(1, config.embedding_dim));
  if (with_head) {
    prev = config.embedding_dim;
    for (std::size_t i = 0; i < config.head_hidden_dims.size(); ++i) {
      const std::size_t h = config.head_hidden_dims[i];
      params.add(head_weight_name(i), 2, glorot_uniform(h, prev, rng));
      params.add(head_bias_name(i), 1, Matrix(1, h));
      prev = h;
    }
    params.add("head.out.weight", 2,
               glorot_uniform(config.head_output_dim, prev, rng));
    params.add("head.out.bias", 1, Matrix(1, config.head_output_dim));
  }
  return params;
}

EmbedTrace embed(const EncoderConfig& config, const Parameters& params,
                 const FeatureSequence& seq) {
  const std::size_t t = seq.num_frames();
  if (seq.dim() != config.feature_dim) {
    throw InvalidInputError("feature dim " + std::to_string(seq.dim()) +
                            " does not match encoder feature_dim " +
                            std::to_string(config.feature_dim));
  }
  if (t < 2) {
    throw InvalidInputError("embed requires at least 2 frames");
  }

  EmbedTrace trace;
  trace.input = seq.frames;
  const Matrix* cur = &trace.input;
  for (std::size_t i = 0; i < config.hidden_dims.size(); ++i) {
    Matrix act = linear_forward(*cur, params.at(frame_weight_name(i)),
                                params.at(frame_bias_name(i)));
    relu_inplace(act);
    trace.frame_acts.push_back(std::move(act));
    cur = &trace.frame_acts.back();
  }

  const Matrix& feats = *cur;
  const std::size_t h = feats.cols();
  // Pooling accumulates in sorted order, which makes the embedding exactly
  // invariant under frame permutations.
  trace.mean.assign(h, 0.0);
  trace.variance.assign(h, 0.0);
  std::vector<double> column(t);
  for (std::size_t d = 0; d < h; ++d) {
    for (std::size_t r = 0; r < t; ++r) column[r] = feats(r, d);
    std::sort(column.begin(), column.end());
    double acc = 0.0;
    for (double v : column) acc += v;
    trace.mean[d] = acc / static_cast<double>(t);

    for (std::size_t r = 0; r < t; ++r) {
      const double diff = feats(r, d) - trace.mean[d];
      column[r] = diff * diff;
    }
    std::sort(column.begin(), column.end());
    acc = 0.0;
    for (double v : column) acc += v;
    trace.variance[d] = acc / static_cast<double>(t);
  }

  trace.sd.resize(h);
  for (std::size_t d = 0; d < h; ++d) {
    trace.sd[d] = std::sqrt(std::max(trace.variance[d], kVarianceClamp));
  }

  trace.pooled.resize(2 * h);
  std::copy(trace.mean.begin(), trace.mean.end(), trace.pooled.begin());
  std::copy(trace.sd.begin(), trace.sd.end(), trace.pooled.begin() + h);

  const Matrix& we = params.at("embed.weight");
  const Matrix& be = params.at("embed.bias");
  trace.embedding = matvec(we, trace.pooled);
  for (std::size_t i = 0; i < trace.embedding.size(); ++i) {
    trace.embedding[i] += be(0, i);
  }
  return trace;
}

HeadTrace head_forward(const EncoderConfig& config, const Parameters& params,
                       const std::vector<double>& embedding) {
  if (embedding.size() != config.embedding_dim) {
    throw InvalidInputError("embedding length does not match config");
  }
  HeadTrace trace;
  trace.input = embedding;
  const std::vector<double>* cur = &trace.input;
  for (std::size_t i = 0; i < config.head_hidden_dims.size(); ++i) {
    std::vector<double> act = matvec(params.at(head_weight_name(i)), *cur);
    const Matrix& b = params.at(head_bias_name(i));
    for (std::size_t k = 0; k < act.size(); ++k) {
      act[k] = std::max(act[k] + b(0, k), 0.0);
    }
    trace.acts.push_back(std::move(act));
    cur = &trace.acts.back();
  }
  trace.logits = matvec(params.at("head.out.weight"), *cur);
  const Matrix& bo = params.at("head.out.bias");
  for (std::size_t k = 0; k < trace.logits.size(); ++k) {
    trace.logits[k] += bo(0, k);
  }
  return trace;
}

std::vector<double> head_backward(const EncoderConfig& config,
                                  const Parameters& params,
                                  const HeadTrace& trace,
                                  const std::vector<double>& dlogits,
                                  Parameters& grads) {
  if (dlogits.size() != config.head_output_dim) {
    throw InvalidInputError("dlogits length does not match head output dim");
  }
  const std::size_t n_hidden = config.head_hidden_dims.size();
  const std::vector<double>& last =
      n_hidden == 0 ? trace.input : trace.acts.back();

  // Output affine.
  {
    Matrix& dw = grads.at("head.out.weight");
    Matrix& db = grads.at("head.out.bias");
    for (std::size_t o = 0; o < dlogits.size(); ++o) {
      const double g = dlogits[o];
      db(0, o) += g;
      double* dwo = dw.data() + o * last.size();
      for (std::size_t i = 0; i < last.size(); ++i) dwo[i] += g * last[i];
    }
  }
  std::vector<double> dcur =
      matvec_transposed(params.at("head.out.weight"), dlogits);

  for (std::size_t i = n_hidden; i-- > 0;) {
    const std::vector<double>& act = trace.acts[i];
    const std::vector<double>& input = i == 0 ? trace.input : trace.acts[i - 1];
    // ReLU mask.
    for (std::size_t k = 0; k < dcur.size(); ++k) {
      if (act[k] <= 0.0) dcur[k] = 0.0;
    }
    Matrix& dw = grads.at(head_weight_name(i));
    Matrix& db = grads.at(head_bias_name(i));
    for (std::size_t o = 0; o < dcur.size(); ++o) {
      const double g = dcur[o];
      if (g == 0.0) continue;
      db(0, o) += g;
      double* dwo = dw.data() + o * input.size();
      for (std::size_t k = 0; k < input.size(); ++k) dwo[k] += g * input[k];
    }
    dcur = matvec_transposed(params.at(head_weight_name(i)), dcur);
  }
  return dcur;
}

void embed_backward(const EncoderConfig& config, const Parameters& params,
                    const EmbedTrace& trace,
                    const std::vector<double>& dembedding, Parameters& grads) {
  if (dembedding.size() != config.embedding_dim) {
    throw InvalidInputError("dembedding length does not match config");
  }
  const std::size_t t = trace.input.rows();
  const std::size_t h = trace.mean.size();
  const Matrix& feats =
      trace.frame_acts.empty() ? trace.input : trace.frame_acts.back();

  // Embedding affine.
  {
    Matrix& dw = grads.at("embed.weight");
    Matrix& db = grads.at("embed.bias");
    for (std::size_t o = 0; o < dembedding.size(); ++o) {
      const double g = dembedding[o];
      db(0, o) += g;
      double* dwo = dw.data() + o * trace.pooled.size();
      for (std::size_t i = 0; i < trace.pooled.size(); ++i) {
        dwo[i] += g * trace.pooled[i];
      }
    }
  }
  const std::vector<double> dpooled =
      matvec_transposed(params.at("embed.weight"), dembedding);

  // Pooling: mean path plus clamped-variance std path.
  Matrix dfeats(t, h);
  const double inv_t = 1.0 / static_cast<double>(t);
  for (std::size_t d = 0; d < h; ++d) {
    const double dmean = dpooled[d];
    const double dsd = dpooled[h + d];
    const double dvar = trace.variance[d] > kVarianceClamp
                            ? dsd / (2.0 * trace.sd[d])
                            : 0.0;
    for (std::size_t r = 0; r < t; ++r) {
      const double centered = feats(r, d) - trace.mean[d];
      dfeats(r, d) = inv_t * dmean + dvar * 2.0 * inv_t * centered;
    }
  }

  // Frame stack.
  Matrix dcur = std::move(dfeats);
  for (std::size_t i = config.hidden_dims.size(); i-- > 0;) {
    const Matrix& act = trace.frame_acts[i];
    const Matrix& input = i == 0 ? trace.input : trace.frame_acts[i - 1];
    for (std::size_t k = 0; k < dcur.size(); ++k) {
      if (act.data()[k] <= 0.0) dcur.data()[k] = 0.0;
    }
    dcur = linear_backward(input, params.at(frame_weight_name(i)), dcur,
                           grads.at(frame_weight_name(i)),
                           grads.at(frame_bias_name(i)));
  }
}

void backward(const EncoderConfig& config, const Parameters& params,
              const EmbedTrace& etrace, const HeadTrace& htrace,
              const std::vector<double>& dlogits, Parameters& grads) {
  const auto dembedding =
      head_backward(config, params, htrace, dlogits, grads);
  embed_backward(config, params, etrace, dembedding, grads);
}

namespace {

constexpr char kCheckpointMagic[] = "CSPK";
constexpr std::uint32_t kCheckpointVersion = 1;

// name -> (rank, rows, cols); cols == 0 means "any row count" (classifier).
struct TensorSpec {
  int rank;
  std::size_t rows;
  std::size_t cols;
  bool any_rows = false;
};

std::map<std::string, TensorSpec> expected_tensors(const EncoderConfig& config,
                                                   CheckpointRole role) {
  std::map<std::string, TensorSpec> spec;
  std::size_t prev = config.feature_dim;
  for (std::size_t i = 0; i < config.hidden_dims.size(); ++i) {
    const std::size_t h = config.hidden_dims[i];
    spec[frame_weight_name(i)] = {2, h, prev};
    spec[frame_bias_name(i)] = {1, 1, h};
    prev = h;
  }
  spec["embed.weight"] = {2, config.embedding_dim, 2 * prev};
  spec["embed.bias"] = {1, 1, config.embedding_dim};
  if (role == CheckpointRole::kFinetuned) {
    spec["classifier.weight"] = {2, 0, config.embedding_dim, true};
  } else {
    prev = config.embedding_dim;
    for (std::size_t i = 0; i < config.head_hidden_dims.size(); ++i) {
      const std::size_t h = config.head_hidden_dims[i];
      spec[head_weight_name(i)] = {2, h, prev};
      spec[head_bias_name(i)] = {1, 1, h};
      prev = h;
    }
    spec["head.out.weight"] = {2, config.head_output_dim, prev};
    spec["head.out.bias"] = {1, 1, config.head_output_dim};
  }
  return spec;
}

}  // namespace

std::string checkpoint_role_name(CheckpointRole role) {
  switch (role) {
    case CheckpointRole::kStudent:
      return "student";
    case CheckpointRole::kTeacher:
      return "teacher";
    case CheckpointRole::kFinetuned:
      return "finetuned";
  }
  throw InvalidInputError("unreachable checkpoint role");
}

void save_checkpoint(const std::filesystem::path& path,
                     const Checkpoint& ckpt) {
  BinaryWriter w;
  w.write_bytes(kCheckpointMagic);
  w.write_u32(kCheckpointVersion);
  w.write_u8(static_cast<std::uint8_t>(ckpt.role));
  const std::string config_text = ckpt.config.to_json_text();
  w.write_u32(static_cast<std::uint32_t>(config_text.size()));
  w.write_bytes(config_text);
  w.write_u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& t : ckpt.params) {
    w.write_u32(static_cast<std::uint32_t>(t.name.size()));
    w.write_bytes(t.name);
    w.write_u32(static_cast<std::uint32_t>(t.rank));
    if (t.rank == 1) {
      w.write_u32(static_cast<std::uint32_t>(t.value.cols()));
    } else {
      w.write_u32(static_cast<std::uint32_t>(t.value.rows()));
      w.write_u32(static_cast<std::uint32_t>(t.value.cols()));
    }
    std::vector<float> payload(t.value.size());
    for (std::size_t i = 0; i < payload.size(); ++i) {
      payload[i] = static_cast<float>(t.value.data()[i]);
    }
    w.write_f32(payload);
  }
  atomic_write_bytes(path, w.bytes());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  BinaryReader r(read_file_bytes(path));
  if (r.read_bytes(4) != kCheckpointMagic) {
    throw ParseError(ParseError::Kind::kMagicMismatch,
                     "not a checkpoint file (bad magic): " + path.string());
  }
  const std::uint32_t version = r.read_u32();
  if (version != kCheckpointVersion) {
    throw ParseError(ParseError::Kind::kVersionMismatch,
                     "unsupported checkpoint version " +
                         std::to_string(version) + ": " + path.string());
  }
  const std::uint8_t role_byte = r.read_u8();
  if (role_byte > 2) {
    throw ParseError(ParseError::Kind::kBadRole,
                     "unknown checkpoint role byte " +
                         std::to_string(role_byte) + ": " + path.string());
  }
  Checkpoint ckpt;
  ckpt.role = static_cast<CheckpointRole>(role_byte);
  const std::uint32_t config_len = r.read_u32();
  ckpt.config = EncoderConfig::from_json_text(r.read_bytes(config_len));

  const std::uint32_t count = r.read_u32();
  auto expected = expected_tensors(ckpt.config, ckpt.role);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.read_u32();
    const std::string name = r.read_bytes(name_len);
    const std::uint32_t rank = r.read_u32();
    if (rank != 1 && rank != 2) {
      throw ParseError(ParseError::Kind::kShapeMismatch,
                       "tensor '" + name + "' has unsupported rank " +
                           std::to_string(rank) + ": " + path.string());
    }
    std::size_t rows = 1, cols = 0;
    if (rank == 1) {
      cols = r.read_u32();
    } else {
      rows = r.read_u32();
      cols = r.read_u32();
    }
    auto it = expected.find(name);
    if (it == expected.end()) {
      throw ParseError(ParseError::Kind::kShapeMismatch,
                       "unexpected tensor '" + name + "' for role " +
                           checkpoint_role_name(ckpt.role) + ": " +
                           path.string());
    }
    const TensorSpec& spec = it->second;
    const bool rows_ok = spec.any_rows ? rows >= 2 : rows == spec.rows;
    if (static_cast<int>(rank) != spec.rank || !rows_ok ||
        cols != spec.cols) {
      throw ParseError(ParseError::Kind::kShapeMismatch,
                       "tensor '" + name + "' has shape " +
                           std::to_string(rows) + "x" + std::to_string(cols) +
                           " inconsistent with config: " + path.string());
    }
    expected.erase(it);

    const auto payload = r.read_f32(rows * cols);
    Matrix value(rows, cols);
    for (std::size_t k = 0; k < payload.size(); ++k) {
      const double v = payload[k];
      if (!std::isfinite(v)) {
        throw ParseError(ParseError::Kind::kBadValue,
                         "non-finite value in tensor '" + name +
                             "': " + path.string());
      }
      value.data()[k] = v;
    }
    ckpt.params.add(name, static_cast<int>(rank), std::move(value));
  }
  r.expect_end();
  if (!expected.empty()) {
    throw ParseError(ParseError::Kind::kShapeMismatch,
                     "checkpoint is missing tensor '" +
                         expected.begin()->first + "': " + path.string());
  }
  return ckpt;
}

}  // namespace cascade
