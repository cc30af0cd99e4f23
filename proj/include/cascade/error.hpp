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

#ifndef CASCADE_ERROR_HPP_
#define CASCADE_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace cascade {

// Error categories map onto the CLI exit codes (config=2, input=3,
// numerical=4, internal=5).
enum class ErrorCategory {
  kConfig,
  kInput,
  kNumerical,
  kInternal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

// Preconditions violated by the caller (bad shapes, out-of-range args,
// non-finite values).
class InvalidInputError : public Error {
 public:
  explicit InvalidInputError(const std::string& message)
      : Error(ErrorCategory::kInput, message) {}
};

// Inputs that are structurally fine but mathematically degenerate
// (zero-norm vector handed to cosine, empty mean).
class DegenerateInputError : public Error {
 public:
  explicit DegenerateInputError(const std::string& message)
      : Error(ErrorCategory::kInput, message) {}
};

// An iterative method failed to converge; carries the final residual.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& message, double residual)
      : Error(ErrorCategory::kNumerical, message), residual_(residual) {}

  double residual() const { return residual_; }

 private:
  double residual_ = 0.0;
};

// Filesystem-level failures (unwritable path, short read).
class IoError : public Error {
 public:
  explicit IoError(const std::string& message)
      : Error(ErrorCategory::kInput, message) {}
};

// A file was read but its contents do not match the format. `kind` names
// the specific defect so callers and tests can tell them apart.
class ParseError : public Error {
 public:
  enum class Kind {
    kMagicMismatch,
    kVersionMismatch,
    kTruncated,
    kTrailingData,
    kDimensionMismatch,
    kShapeMismatch,
    kBadRole,
    kBadValue,
    kUnknownKey,
    kMissingKey,
    kMalformed,
  };

  ParseError(Kind kind, const std::string& message)
      : Error(ErrorCategory::kInput, message), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Invalid or inconsistent configuration (including empty usable inputs).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message)
      : Error(ErrorCategory::kConfig, message) {}
};

}  // namespace cascade

#endif  // CASCADE_ERROR_HPP_
