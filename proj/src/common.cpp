// Copyright 2026 The cfglab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cfglab/common.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

namespace cfglab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidParameter: return "invalid-parameter";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kDegenerateTime: return "degenerate-time";
    case ErrorCode::kEmptyCondition: return "empty-condition";
    case ErrorCode::kLabelOutOfRange: return "label-out-of-range";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kArchitectureMismatch: return "architecture-mismatch";
    case ErrorCode::kInvalidConfig: return "invalid-config";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kMismatchedRuns: return "mismatched-runs";
  }
  return "unknown";
}

std::string Fnv1a::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace cfglab
