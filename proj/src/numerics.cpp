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

#include "cascade/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cascade {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw InvalidInputError("Matrix data length " +
                            std::to_string(data_.size()) +
                            " does not match " + std::to_string(rows_) + "x" +
                            std::to_string(cols_));
  }
}

std::vector<double> Matrix::row(std::size_t r) const {
  return std::vector<double>(data_.begin() + r * cols_,
                             data_.begin() + (r + 1) * cols_);
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw InvalidInputError("matmul shape mismatch: " +
                            std::to_string(a.cols()) + " vs " +
                            std::to_string(b.rows()));
  }
  Matrix c(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  // ikj order keeps the inner loop contiguous in both b and c.
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.data() + i * m;
    const double* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
  return c;
}

std::vector<double> matvec(const Matrix& a, const std::vector<double>& x) {
  if (a.cols() != x.size()) {
    throw InvalidInputError("matvec shape mismatch");
  }
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.data() + i * a.cols();
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) acc += ai[j] * x[j];
    y[i] = acc;
  }
  return y;
}

std::vector<double> matvec_transposed(const Matrix& a,
                                      const std::vector<double>& x) {
  if (a.rows() != x.size()) {
    throw InvalidInputError("matvec_transposed shape mismatch");
  }
  std::vector<double> y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.data() + i * a.cols();
    const double xi = x[i];
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += ai[j] * xi;
  }
  return y;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw InvalidInputError("dot length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

std::vector<double> l2_normalize(const std::vector<double>& v) {
  double n = norm2(v);
  if (n == 0.0) {
    throw DegenerateInputError("cannot normalize a zero-norm vector");
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

std::uint64_t Rng::uniform_below(std::uint64_t n) {
  if (n == 0) throw InvalidInputError("uniform_below(0)");
  const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
  for (;;) {
    std::uint64_t x = engine_();
    if (x >= threshold) return x % n;
  }
}

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0, 1] so the log is finite.
  double u1 = 1.0 - next_double();
  double u2 = next_double();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
  // FNV-1a over the tag, mixed with the golden-ratio multiple of the seed.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h ^ (seed * 0x9E3779B97F4A7C15ULL + 0x243F6A8885A308D3ULL);
}

std::vector<double> softmax(const std::vector<double>& logits,
                            double temperature) {
  if (logits.empty()) throw InvalidInputError("softmax of empty vector");
  if (!(temperature > 0.0)) {
    throw InvalidInputError("softmax temperature must be positive");
  }
  for (double v : logits) {
    if (!std::isfinite(v)) {
      throw InvalidInputError("softmax input must be finite");
    }
  }
  double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - m) / temperature);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

double cross_entropy(const std::vector<double>& p,
                     const std::vector<double>& q) {
  if (p.size() != q.size()) {
    throw InvalidInputError("cross_entropy length mismatch: " +
                            std::to_string(p.size()) + " vs " +
                            std::to_string(q.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc -= p[i] * std::log(std::max(q[i], kLogClampEpsilon));
  }
  return acc;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double na = norm2(a);
  double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) {
    throw DegenerateInputError("cosine of a zero-norm vector");
  }
  double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

namespace {

double off_diagonal_norm(const Matrix& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (i != j) acc += a(i, j) * a(i, j);
    }
  }
  return std::sqrt(acc);
}

}  // namespace

EigenDecomposition sym_eigen(const Matrix& a, double tolerance,
                             int max_sweeps) {
  const std::size_t n = a.rows();
  if (n == 0 || a.cols() != n) {
    throw InvalidInputError("sym_eigen requires a non-empty square matrix");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(a(i, j) - a(j, i)) > 1e-9) {
        throw InvalidInputError("sym_eigen input is not symmetric at (" +
                                std::to_string(i) + "," + std::to_string(j) +
                                ")");
      }
    }
  }

  // Work on the exactly symmetrized copy.
  Matrix w(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) w(i, j) = 0.5 * (a(i, j) + a(j, i));
  }
  Matrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  bool converged = off_diagonal_norm(w) < tolerance;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = w(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (w(q, q) - w(p, p)) / (2.0 * apq);
        const double sgn = theta >= 0.0 ? 1.0 : -1.0;
        const double t =
            sgn / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);

        const double app = w(p, p), aqq = w(q, q);
        w(p, p) = app - t * apq;
        w(q, q) = aqq + t * apq;
        w(p, q) = 0.0;
        w(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r != p && r != q) {
            const double arp = w(r, p), arq = w(r, q);
            w(r, p) = arp - s * (arq + tau * arp);
            w(p, r) = w(r, p);
            w(r, q) = arq + s * (arp - tau * arq);
            w(q, r) = w(r, q);
          }
          const double vrp = v(r, p), vrq = v(r, q);
          v(r, p) = vrp - s * (vrq + tau * vrp);
          v(r, q) = vrq + s * (vrp - tau * vrq);
        }
      }
    }
    converged = off_diagonal_norm(w) < tolerance;
  }
  if (!converged) {
    double residual = off_diagonal_norm(w);
    throw NumericalError("sym_eigen did not converge in " +
                             std::to_string(max_sweeps) +
                             " sweeps; off-diagonal norm " +
                             std::to_string(residual),
                         residual);
  }

  // Sort descending by eigenvalue, stable in the original index.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x,
                                                   std::size_t y) {
    return w(x, x) > w(y, y);
  });

  EigenDecomposition out;
  out.eigenvalues.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.eigenvalues[j] = w(src, src);
    // Sign convention: largest-magnitude component positive; ties keep the
    // first occurrence.
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      double mag = std::abs(v(i, src));
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    const double flip = v(arg, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = flip * v(i, src);
  }
  return out;
}

std::vector<double> rng_gaussian(Rng& rng, std::size_t n) {
  if (n < 1) throw InvalidInputError("rng_gaussian requires n >= 1");
  std::vector<double> out(n);
  for (double& v : out) v = rng.gaussian();
  return out;
}

}  // namespace cascade
