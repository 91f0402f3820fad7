/*
 * Copyright 2026 The cevkit Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cevkit {

enum class ErrorCode {
  kUnknownLabel,
  kIo,
  kMalformedRow,
  kDuplicateFrameId,
  kEmptyLabelSet,
  kConsistency,
  kSchemaMismatch,
  kInvalidScore,
  kMissingPrediction,
  kUnknownFrame,
  kShapeMismatch,
  kNonFinite,
  kInvalidConfig,
};

inline std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnknownLabel: return "UnknownLabel";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kMalformedRow: return "MalformedRow";
    case ErrorCode::kDuplicateFrameId: return "DuplicateFrameId";
    case ErrorCode::kEmptyLabelSet: return "EmptyLabelSet";
    case ErrorCode::kConsistency: return "ConsistencyError";
    case ErrorCode::kSchemaMismatch: return "SchemaMismatch";
    case ErrorCode::kInvalidScore: return "InvalidScore";
    case ErrorCode::kMissingPrediction: return "MissingPrediction";
    case ErrorCode::kUnknownFrame: return "UnknownFrame";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
  }
  return "Error";
}

// All library failures are reported through this exception. `line()` is the
// 1-based input line for row-level errors and 0 otherwise.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::size_t line = 0)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code),
        line_(line) {}

  ErrorCode code() const noexcept { return code_; }
  std::size_t line() const noexcept { return line_; }

 private:
  ErrorCode code_;
  std::size_t line_;
};

}  // namespace cevkit
