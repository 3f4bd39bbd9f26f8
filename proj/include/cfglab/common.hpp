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

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cfglab {

using Vector = Eigen::VectorXd;
// One sample per row. The storage of an n x d row-major matrix is the same as
// a d x n column-major one, which is the layout the network kernels consume.
using Samples = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ErrorCode {
  kInvalidParameter,
  kDimensionMismatch,
  kDegenerateTime,
  kEmptyCondition,
  kLabelOutOfRange,
  kDivergence,
  kArchitectureMismatch,
  kInvalidConfig,
  kIo,
  kMismatchedRuns,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void check_dims(Eigen::Index a, Eigen::Index b, const char* where) {
  if (a != b) {
    fail(ErrorCode::kDimensionMismatch, std::string(where) + ": dimension " +
                                            std::to_string(a) + " vs " +
                                            std::to_string(b));
  }
}

// 64-bit FNV-1a, used for config digests and parameter fingerprints.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace cfglab
