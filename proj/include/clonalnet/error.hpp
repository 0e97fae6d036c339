/*
 * Copyright 2026 The ClonalNet Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace clonalnet {

enum class ErrorCode {
  dimension_mismatch,
  invalid_argument,
  not_a_distribution,
  zero_magnitude,
  zero_probability,
  io,
  bad_magic,
  truncated,
  count_mismatch,
  empty_dataset,
  parse,
  missing_baseline,
  missing_teacher,
  usage,
};

/// Machine-parsable category name, used verbatim in CLI error lines.
constexpr std::string_view error_category(ErrorCode code) {
  switch (code) {
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::not_a_distribution: return "not-a-distribution";
    case ErrorCode::zero_magnitude: return "zero-magnitude";
    case ErrorCode::zero_probability: return "zero-probability";
    case ErrorCode::io: return "io";
    case ErrorCode::bad_magic: return "bad-magic";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::count_mismatch: return "count-mismatch";
    case ErrorCode::empty_dataset: return "empty-dataset";
    case ErrorCode::parse: return "parse";
    case ErrorCode::missing_baseline: return "missing-baseline";
    case ErrorCode::missing_teacher: return "missing-teacher";
    case ErrorCode::usage: return "usage";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view category() const noexcept { return error_category(code_); }

 private:
  ErrorCode code_;
};

}  // namespace clonalnet
