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

#ifndef CASCADE_NUMERICS_HPP_
#define CASCADE_NUMERICS_HPP_

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cascade/error.hpp"

namespace cascade {

// Dense row-major matrix of doubles. The arithmetic substrate for every
// other module; deliberately minimal.
class Matrix {
 public:
  Matrix() : rows_(0), cols_(0) {}
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::vector<double> row(std::size_t r) const;

  bool all_finite() const;
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// y = A * x
std::vector<double> matvec(const Matrix& a, const std::vector<double>& x);
// y = A^T * x
std::vector<double> matvec_transposed(const Matrix& a,
                                      const std::vector<double>& x);

double dot(const std::vector<double>& a, const std::vector<double>& b);
double norm2(const std::vector<double>& a);
// v / ||v||; zero-norm input raises DegenerateInputError.
std::vector<double> l2_normalize(const std::vector<double>& v);

// Deterministic random source. The engine is std::mt19937_64, whose output
// sequence is pinned by the C++ standard, and all derived draws (uniform
// doubles, Gaussians via Box-Muller) are our own fixed transforms, so equal
// seeds give bit-equal streams on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Unbiased uniform integer in [0, n); rejection sampled.
  std::uint64_t uniform_below(std::uint64_t n);

  // Standard normal via Box-Muller; the spare draw is cached.
  double gaussian();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives a per-stage seed from the pipeline seed and a stage tag, so each
// stage owns an independent deterministic stream.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag);

// softmax(x / temperature) with max-subtraction. Output sums to 1.
std::vector<double> softmax(const std::vector<double>& logits,
                            double temperature);

// -sum p_k log q_k, with q clamped below at kLogClampEpsilon before log.
inline constexpr double kLogClampEpsilon = 1e-12;
double cross_entropy(const std::vector<double>& p,
                     const std::vector<double>& q);

// a.b / (|a||b|), clamped to [-1, 1]. Zero-norm input is degenerate.
double cosine(const std::vector<double>& a, const std::vector<double>& b);

struct EigenDecomposition {
  // Descending eigenvalues and the matching orthonormal eigenvectors as
  // columns of `vectors` (vectors(i, j) is component i of eigenvector j).
  std::vector<double> eigenvalues;
  Matrix vectors;
};

// Cyclic Jacobi for symmetric matrices. Iterates full sweeps until the
// off-diagonal Frobenius norm drops below `tolerance` (max `max_sweeps`
// sweeps, then NumericalError carrying the residual). Eigenvector sign is
// fixed by making the largest-magnitude component positive.
EigenDecomposition sym_eigen(const Matrix& a, double tolerance = 1e-10,
                             int max_sweeps = 100);

// n i.i.d. standard-normal draws from rng. n must be >= 1.
std::vector<double> rng_gaussian(Rng& rng, std::size_t n);

}  // namespace cascade

#endif  // CASCADE_NUMERICS_HPP_
