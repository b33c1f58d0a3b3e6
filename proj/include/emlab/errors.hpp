// Copyright 2026 The emlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace emlab {

/// Broad failure classes. The CLI maps each class to a process exit code.
enum class ErrorKind {
  kConfig,      // bad configuration or usage (exit 1)
  kValidation,  // malformed or inconsistent data (exit 2)
  kNumeric,     // NaN/Inf or other numeric breakdown (exit 3)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string tag, const std::string& message)
      : std::runtime_error(message), kind_(kind), tag_(std::move(tag)) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Short machine-readable category, e.g. "dimension" or "parse".
  const std::string& tag() const noexcept { return tag_; }

 private:
  ErrorKind kind_;
  std::string tag_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error(ErrorKind::kValidation, "dimension", m) {}
};

struct EmptyInputError : Error {
  explicit EmptyInputError(const std::string& m) : Error(ErrorKind::kValidation, "empty_input", m) {}
};

struct DegenerateInputError : Error {
  explicit DegenerateInputError(const std::string& m)
      : Error(ErrorKind::kValidation, "degenerate_input", m) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& m) : Error(ErrorKind::kValidation, "validation", m) {}
};

struct ParseError : Error {
  ParseError(std::size_t line, const std::string& m)
      : Error(ErrorKind::kValidation, "parse", "line " + std::to_string(line) + ": " + m), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorKind::kConfig, "config", m) {}
};

/// A caller broke a documented precondition (wrong rank, out-of-range step, ...).
struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error(ErrorKind::kConfig, "contract", m) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(ErrorKind::kNumeric, "numeric", m) {}
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return 1;
    case ErrorKind::kValidation:
      return 2;
    case ErrorKind::kNumeric:
      return 3;
  }
  return 1;
}

}  // namespace emlab
