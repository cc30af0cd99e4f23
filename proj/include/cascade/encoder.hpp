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

#ifndef CASCADE_ENCODER_HPP_
#define CASCADE_ENCODER_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cascade/corpus.hpp"
#include "cascade/numerics.hpp"

namespace cascade {

// Shape contract of the speaker encoder: per-frame affine+ReLU layers,
// mean+std statistics pooling, an affine embedding layer, and a projection
// head (affine+ReLU stack then affine to K logits) used only during
// self-supervised pretraining.
struct EncoderConfig {
  std::size_t feature_dim = 20;
  std::vector<std::size_t> hidden_dims = {64, 64};
  std::size_t embedding_dim = 64;
  std::vector<std::size_t> head_hidden_dims = {128};
  std::size_t head_output_dim = 256;

  void validate() const;
  // Output width of the frame-level stack (= feature_dim when no hidden
  // layers are configured).
  std::size_t frame_output_dim() const {
    return hidden_dims.empty() ? feature_dim : hidden_dims.back();
  }

  std::string to_json_text() const;
  static EncoderConfig from_json_text(const std::string& text);

  bool operator==(const EncoderConfig&) const = default;
};

// Variance is clamped here before the square root, so constant input has a
// defined std and a finite gradient.
inline constexpr double kVarianceClamp = 1e-8;

struct ParamTensor {
  std::string name;
  int rank = 2;  // biases are rank 1, stored as a 1 x n matrix
  Matrix value;
};

// Ordered named tensors; iteration order is construction order and is the
// contract for checkpoints and deterministic gradient reduction.
class Parameters {
 public:
  void add(std::string name, int rank, Matrix value);
  bool has(const std::string& name) const;
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;

  std::size_t size() const { return tensors_.size(); }
  ParamTensor& operator[](std::size_t i) { return tensors_[i]; }
  const ParamTensor& operator[](std::size_t i) const { return tensors_[i]; }

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  bool same_shape(const Parameters& other) const;
  std::size_t total_values() const;

  // Zero-filled copy of the same layout; the gradient/momentum container.
  Parameters zeros_like() const;
  // this += alpha * other (shape-checked).
  void add_scaled(const Parameters& other, double alpha);
  void scale(double alpha);

 private:
  std::vector<ParamTensor> tensors_;
};

// Everything the backward pass needs from one embed() call.
struct EmbedTrace {
  Matrix input;                     // T x D
  std::vector<Matrix> frame_acts;   // post-ReLU activations per frame layer
  std::vector<double> mean;         // H
  std::vector<double> variance;     // H, unclamped
  std::vector<double> sd;           // H, sqrt(max(variance, clamp))
  std::vector<double> pooled;       // 2H: [mean; sd]
  std::vector<double> embedding;    // E
};

struct HeadTrace {
  std::vector<double> input;               // the embedding
  std::vector<std::vector<double>> acts;   // post-ReLU per hidden head layer
  std::vector<double> logits;              // K
};

// Glorot-uniform weights, zero biases. `with_head` selects whether the
// projection head tensors are created.
Parameters init_params(const EncoderConfig& config, Rng& rng,
                       bool with_head = true);

// frames -> embedding. Requires seq.dim == config.feature_dim and T >= 2
// (population std needs at least two frames... it is defined for T >= 1 but
// the contract keeps degenerate one-frame input out).
EmbedTrace embed(const EncoderConfig& config, const Parameters& params,
                 const FeatureSequence& seq);

// embedding -> K logits through the projection head.
HeadTrace head_forward(const EncoderConfig& config, const Parameters& params,
                       const std::vector<double>& embedding);

// Exact analytic gradients. head_backward also yields dLoss/dEmbedding so
// losses defined on the embedding (no head) reuse embed_backward alone.
// Gradients accumulate into `grads`, which must be zeros_like(params) or a
// running accumulator of the same layout.
std::vector<double> head_backward(const EncoderConfig& config,
                                  const Parameters& params,
                                  const HeadTrace& trace,
                                  const std::vector<double>& dlogits,
                                  Parameters& grads);
void embed_backward(const EncoderConfig& config, const Parameters& params,
                    const EmbedTrace& trace,
                    const std::vector<double>& dembedding, Parameters& grads);
void backward(const EncoderConfig& config, const Parameters& params,
              const EmbedTrace& etrace, const HeadTrace& htrace,
              const std::vector<double>& dlogits, Parameters& grads);

enum class CheckpointRole : std::uint8_t {
  kStudent = 0,
  kTeacher = 1,
  kFinetuned = 2,
};

std::string checkpoint_role_name(CheckpointRole role);

struct Checkpoint {
  CheckpointRole role = CheckpointRole::kStudent;
  EncoderConfig config;
  Parameters params;
};

// Checkpoint file format "CSPK": magic, version u32=1, role u8, JSON config
// (u32 length prefix), tensor count u32, then per tensor: name (u32 length
// prefix), rank u32, dims u32[rank], float32 little-endian payload.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cascade

#endif  // CASCADE_ENCODER_HPP_
